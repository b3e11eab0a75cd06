"""Versioned model files.

Layout::

    b"STALLNET"                  8-byte magic
    uint32 little-endian         header length in bytes
    header                       UTF-8 JSON (format_version, spec, standardizer,
                                 tensor names/shapes, payload size, sha256)
    payload                      every parameter tensor, little-endian float64,
                                 C order, in spec order

The sha256 covers the header (without its checksum field) and the payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .data import Standardizer
from .errors import CorruptFile, FormatError, VersionError
from .nn import Model, ModelSpec, tensor_shapes

MAGIC = b"STALLNET"
FORMAT_VERSION = 1


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def model_bytes(m, s):
    payload = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in m.params)
    header = {
        "format_version": FORMAT_VERSION,
        "spec": m.spec.to_dict(),
        "standardizer": s.to_dict() if s is not None else None,
        "rng_seed": int(m.rng_seed),
        "tensors": [{"name": n, "shape": list(p.shape)} for n, p in zip(m.names, m.params)],
        "payload_bytes": len(payload),
    }
    header["sha256"] = hashlib.sha256(_canonical(header) + payload).hexdigest()
    hb = _canonical(header)
    return MAGIC + struct.pack("<I", len(hb)) + hb + payload


def save_model(m, s, path):
    data = model_bytes(m, s)
    Path(path).write_bytes(data)
    return len(data)


def load_model(path):
    """Returns ``(Model, Standardizer or None)``."""
    return model_from_bytes(Path(path).read_bytes())


def model_from_bytes(data):
    if len(data) < 12 or data[:8] != MAGIC:
        raise FormatError("not a stallnet model file (bad magic or truncated)")
    (hlen,) = struct.unpack("<I", data[8:12])
    if 12 + hlen > len(data):
        raise FormatError("truncated model file header")
    try:
        header = json.loads(data[12 : 12 + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CorruptFile("model header is not valid JSON") from None
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported model format_version {version!r}")
    payload = data[12 + hlen :]
    if len(payload) != header.get("payload_bytes"):
        raise FormatError(
            f"payload is {len(payload)} bytes, header declares {header.get('payload_bytes')}"
        )
    expected = header.pop("sha256", None)
    if hashlib.sha256(_canonical(header) + payload).hexdigest() != expected:
        raise CorruptFile("checksum mismatch")
    spec = ModelSpec.from_dict(header["spec"])
    shapes = tensor_shapes(spec)
    declared = [(t["name"], tuple(t["shape"])) for t in header["tensors"]]
    if declared != shapes:
        raise FormatError("tensor table does not match the model spec")
    n_scalars = sum(int(np.prod(s)) for _, s in shapes)
    if n_scalars * 8 != len(payload):
        raise FormatError("payload length does not match param_count x 8")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    params, k = [], 0
    for _, shape in shapes:
        size = int(np.prod(shape))
        params.append(flat[k : k + size].reshape(shape).copy())
        k += size
    st = header.get("standardizer")
    return Model(spec, params, header.get("rng_seed", 0)), (
        Standardizer.from_dict(st) if st else None
    )
