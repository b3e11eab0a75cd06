"""Flight recordings, window extraction/labeling, standardization and splits.

A recording is a 1 Hz (by default) table of the 16 flight parameters in
``COLUMNS`` plus a boolean ``stall_warning`` channel. A window ending at
timestep ``t`` holds columns ``t-window_len+1 .. t`` and is labeled with the
warning state at ``t + horizon``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CapacityError,
    FormatError,
    InvalidArgument,
    ParseError,
    SchemaError,
)

COLUMNS = (
    "indicated_airspeed",   # kt
    "true_airspeed",        # kt
    "elevator_input",       # fraction of full pilot input, -1..1
    "aileron_input",        # fraction, -1..1
    "rudder_input",         # fraction, -1..1
    "pitch",                # deg
    "roll",                 # deg
    "angle_of_attack",      # deg
    "throttle_1",           # fraction 0..1
    "throttle_2",           # fraction 0..1
    "thrust_1",             # N
    "thrust_2",             # N
    "rpm_1",                # prop rev/min
    "rpm_2",                # prop rev/min
    "elevator_deflection",  # deg
    "vertical_speed",       # ft/min
)
WARNING_COLUMN = "stall_warning"
TIME_COLUMN = "time_s"
N_FEATURES = len(COLUMNS)

DATASET_FORMAT_VERSION = 1


@dataclass
class TimeSeries:
    values: np.ndarray  # (L, 16)
    warning: np.ndarray  # (L,) of 0/1
    sample_rate: float = 1.0
    name: str = ""
    kind: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.warning = np.asarray(self.warning).astype(np.int8)
        if self.values.ndim != 2 or self.values.shape[1] != N_FEATURES:
            raise InvalidArgument(f"values must be (L, {N_FEATURES})")
        if self.warning.shape != (self.values.shape[0],):
            raise InvalidArgument("warning channel length differs from parameter channels")
        if not np.isin(self.warning, (0, 1)).all():
            raise InvalidArgument("stall_warning must be 0 or 1")

    def __len__(self):
        return self.values.shape[0]

    def channel(self, name):
        return self.values[:, COLUMNS.index(name)]


def parse_flight_csv(path, name=None, kind=""):
    """Read one recording. Columns beyond the required ones are ignored."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        return _parse_csv_lines(fh, name or path.stem, kind)


def _parse_csv_lines(lines, name="", kind=""):
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise FormatError("empty CSV file") from None
    for col in (*COLUMNS, WARNING_COLUMN):
        if col not in header:
            raise SchemaError(col)
    idx = [header.index(c) for c in COLUMNS]
    w_idx = header.index(WARNING_COLUMN)
    t_idx = header.index(TIME_COLUMN) if TIME_COLUMN in header else None
    rows, warns, times = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            rows.append([float(row[i]) for i in idx])
            w = float(row[w_idx])
            if t_idx is not None:
                times.append(float(row[t_idx]))
        except (ValueError, IndexError):
            raise ParseError("non-numeric or missing cell", lineno) from None
        if w not in (0.0, 1.0):
            raise ParseError(f"stall_warning must be 0 or 1, got {row[w_idx]!r}", lineno)
        if not all(math.isfinite(v) for v in rows[-1]):
            raise ParseError("non-finite value", lineno)
        warns.append(int(w))
    rate = 1.0
    if times and len(times) > 1:
        dt = np.diff(np.asarray(times))
        if dt[0] <= 0 or not np.allclose(dt, dt[0], rtol=1e-6, atol=1e-9):
            raise FormatError("time_s column is not uniformly spaced")
        rate = 1.0 / dt[0]
    values = np.asarray(rows, dtype=np.float64).reshape(-1, N_FEATURES)
    return TimeSeries(values, np.asarray(warns, dtype=np.int8), rate, name, kind)


def write_flight_csv(ts, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(flight_csv_text(ts))


def flight_csv_text(ts):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([TIME_COLUMN, *COLUMNS, WARNING_COLUMN])
    dt = 1.0 / ts.sample_rate
    for t in range(len(ts)):
        w.writerow([repr(t * dt), *(repr(float(v)) for v in ts.values[t]), int(ts.warning[t])])
    return buf.getvalue()


def write_corpus(series, directory):
    """Write each recording as CSV plus a ``corpus.json`` index of names and kinds."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = []
    for ts in series:
        fname = f"{ts.name}.csv"
        write_flight_csv(ts, directory / fname)
        index.append({"file": fname, "name": ts.name, "kind": ts.kind, "length": len(ts)})
    (directory / "corpus.json").write_text(json.dumps({"flights": index}, indent=2) + "\n")
    return directory


def read_corpus(directory):
    directory = Path(directory)
    manifest = directory / "corpus.json"
    if manifest.exists():
        entries = json.loads(manifest.read_text())["flights"]
        return [
            parse_flight_csv(directory / e["file"], e.get("name"), e.get("kind", ""))
            for e in entries
        ]
    return [parse_flight_csv(p) for p in sorted(directory.glob("*.csv"))]


# ---------------------------------------------------------------- windows


@dataclass
class WindowedSample:
    x: np.ndarray  # (16, window_len)
    label: int
    source: str = ""
    t_end: int = 0


@dataclass
class Dataset:
    """Windows stacked as ``x`` (N, 16, window_len) with labels ``y`` (N,).

    Provenance per sample: ``sources[n]`` names the recording, ``t_end[n]`` the
    last timestep in the window (the window spans ``t_end-window_len+1..t_end``),
    ``kinds[n]`` the recording's profile kind, and ``clean[n]`` whether the
    window itself is free of warning timesteps.
    """

    x: np.ndarray
    y: np.ndarray
    sources: list = field(default_factory=list)
    t_end: np.ndarray = None
    kinds: list = field(default_factory=list)
    clean: np.ndarray = None
    window_len: int = 10
    horizon: int = 10

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).reshape(-1, N_FEATURES, self.window_len)
        self.y = np.asarray(self.y, dtype=np.int8).ravel()
        n = self.x.shape[0]
        if self.y.shape[0] != n:
            raise InvalidArgument("x and y sample counts differ")
        if self.t_end is None:
            self.t_end = np.full(n, -1, dtype=np.int64)
        self.t_end = np.asarray(self.t_end, dtype=np.int64)
        if self.clean is None:
            self.clean = np.ones(n, dtype=bool)
        self.clean = np.asarray(self.clean, dtype=bool)
        if not self.sources:
            self.sources = [""] * n
        if not self.kinds:
            self.kinds = [""] * n

    def __len__(self):
        return self.x.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.x[idx],
            self.y[idx],
            [self.sources[i] for i in idx],
            self.t_end[idx],
            [self.kinds[i] for i in idx],
            self.clean[idx],
            self.window_len,
            self.horizon,
        )

    def samples(self):
        return [
            WindowedSample(self.x[n], int(self.y[n]), self.sources[n], int(self.t_end[n]))
            for n in range(len(self))
        ]

    def class_counts(self):
        return int((self.y == 1).sum()), int((self.y == 0).sum())

    @classmethod
    def concat(cls, parts, window_len=10, horizon=10):
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls(np.zeros((0, N_FEATURES, window_len)), np.zeros(0), window_len=window_len,
                       horizon=horizon)
        return cls(
            np.concatenate([p.x for p in parts]),
            np.concatenate([p.y for p in parts]),
            [s for p in parts for s in p.sources],
            np.concatenate([p.t_end for p in parts]),
            [k for p in parts for k in p.kinds],
            np.concatenate([p.clean for p in parts]),
            parts[0].window_len,
            parts[0].horizon,
        )


def window_count(length, window_len, horizon):
    return max(0, length - window_len - horizon + 1)


def windows_dataset(ts, window_len=10, horizon=10):
    """All windows of one recording as a :class:`Dataset`."""
    if window_len < 1 or horizon < 1:
        raise InvalidArgument("window_len and horizon must be >= 1")
    L = len(ts)
    n = window_count(L, window_len, horizon)
    if n == 0:
        return Dataset(np.zeros((0, N_FEATURES, window_len)), np.zeros(0),
                       window_len=window_len, horizon=horizon)
    t_end = np.arange(window_len - 1, L - horizon)
    view = np.lib.stride_tricks.sliding_window_view(ts.values, window_len, axis=0)
    x = np.ascontiguousarray(view[:n])  # (n, 16, window_len)
    y = ts.warning[t_end + horizon]
    in_window = np.lib.stride_tricks.sliding_window_view(ts.warning, window_len)[:n].any(axis=1)
    return Dataset(x, y, [ts.name] * n, t_end, [ts.kind] * n, ~in_window, window_len, horizon)


def extract_windows(ts, window_len=10, horizon=10):
    """One labeled sample per end index ``t`` in ``[window_len-1, L-1-horizon]``."""
    return windows_dataset(ts, window_len, horizon).samples()


def build_pool(series, window_len=10, horizon=10):
    """Windows of every recording, each windowed independently."""
    return Dataset.concat(
        [windows_dataset(ts, window_len, horizon) for ts in series], window_len, horizon
    )


def retention_stats(series, pool, splits):
    total_steps = int(sum(len(ts) for ts in series))
    used = sum(len(s) for s in splits)
    return {
        "recordings": len(series),
        "timesteps": total_steps,
        "windows": len(pool),
        "positive_windows": int((pool.y == 1).sum()),
        "clean_negative_windows": int(((pool.y == 0) & pool.clean).sum()),
        "windows_used": used,
    }


# ---------------------------------------------------------------- splits


def _eligible(pool):
    pos = np.flatnonzero(pool.y == 1)
    # negatives must not contain a warning inside the window
    neg = np.flatnonzero((pool.y == 0) & pool.clean)
    return pos, neg


def balance_and_split(pool, n_train_pos, n_train_neg, n_val_each, n_test_each, seed=0,
                      segment_exclusive=True):
    """Draw class-balanced, pairwise-disjoint train/val/test datasets from ``pool``.

    With ``segment_exclusive`` every recording contributes to one split only.
    """
    counts = (n_train_pos, n_train_neg, n_val_each, n_test_each)
    if any(c < 0 for c in counts):
        raise InvalidArgument("requested counts must be >= 0")
    pos, neg = _eligible(pool)
    need_pos = n_train_pos + n_val_each + n_test_each
    need_neg = n_train_neg + n_val_each + n_test_each
    if len(pos) < need_pos:
        raise CapacityError(1, need_pos, len(pos))
    if len(neg) < need_neg:
        raise CapacityError(0, need_neg, len(neg))
    rng = np.random.default_rng(seed)
    needs = [(n_test_each, n_test_each), (n_val_each, n_val_each), (n_train_pos, n_train_neg)]
    if segment_exclusive:
        split_pos, split_neg = _assign_sources(pool, pos, neg, needs, rng)
    else:
        pos = rng.permutation(pos)
        neg = rng.permutation(neg)
        split_pos, split_neg, a, b = [], [], 0, 0
        for np_, nn_ in needs:
            split_pos.append(pos[a : a + np_])
            split_neg.append(neg[b : b + nn_])
            a += np_
            b += nn_
    out = []
    for (np_, nn_), ps, ns in zip(needs, split_pos, split_neg):
        if len(ps) < np_:
            raise CapacityError(1, np_, len(ps))
        if len(ns) < nn_:
            raise CapacityError(0, nn_, len(ns))
        chosen = np.concatenate([rng.choice(ps, np_, replace=False), rng.choice(ns, nn_, replace=False)])
        out.append(pool.subset(np.sort(chosen)))
    test, val, train = out
    return train, val, test


def _assign_sources(pool, pos, neg, needs, rng):
    sources = np.asarray(pool.sources)
    names = sorted(set(pool.sources))
    order = rng.permutation(len(names))
    pos_by = {n: [] for n in names}
    neg_by = {n: [] for n in names}
    for i in pos:
        pos_by[sources[i]].append(i)
    for i in neg:
        neg_by[sources[i]].append(i)
    have = [[0, 0] for _ in needs]
    members = [[] for _ in needs]
    for k in order:
        name = names[k]
        np_, nn_ = len(pos_by[name]), len(neg_by[name])
        target = len(needs) - 1
        for s, (want_p, want_n) in enumerate(needs):
            if (np_ and have[s][0] < want_p) or (nn_ and have[s][1] < want_n):
                target = s
                break
        members[target].append(name)
        have[target][0] += np_
        have[target][1] += nn_
    split_pos = [np.asarray([i for n in m for i in pos_by[n]], dtype=np.int64) for m in members]
    split_neg = [np.asarray([i for n in m for i in neg_by[n]], dtype=np.int64) for m in members]
    return split_pos, split_neg


# ---------------------------------------------------------------- standardization


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    sigma_floor: float = 1e-8

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise InvalidArgument("mean and std must be vectors of equal length")
        if not self.sigma_floor > 0 or np.any(self.std < self.sigma_floor):
            raise InvalidArgument("std must be >= sigma_floor > 0")

    @classmethod
    def identity(cls, n=N_FEATURES):
        return cls(np.zeros(n), np.ones(n))

    def transform(self, x):
        return (x - self.mean[:, None]) / self.std[:, None]

    def inverse(self, x):
        return x * self.std[:, None] + self.mean[:, None]

    def to_dict(self):
        return {
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "sigma_floor": self.sigma_floor,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]), float(d.get("sigma_floor", 1e-8)))


def fit_standardizer(train, sigma_floor=1e-8):
    """Per-feature mean and population std over every timestep of every window."""
    x = train.x if hasattr(train, "x") else np.asarray(train, dtype=np.float64)
    if x.shape[0] == 0:
        raise InvalidArgument("cannot fit a standardizer on an empty set")
    mean = x.mean(axis=(0, 2))
    std = x.std(axis=(0, 2))
    std = np.where(std < sigma_floor, sigma_floor, std)
    return Standardizer(mean, std, sigma_floor)


def apply_standardizer(s, ds):
    if ds.x.shape[1] != s.mean.shape[0]:
        raise InvalidArgument(
            f"dataset has {ds.x.shape[1]} features, standardizer has {s.mean.shape[0]}"
        )
    return Dataset(s.transform(ds.x), ds.y.copy(), list(ds.sources), ds.t_end.copy(),
                   list(ds.kinds), ds.clean.copy(), ds.window_len, ds.horizon)


def checksum(x):
    return hashlib.sha256(np.ascontiguousarray(x, dtype="<f8").tobytes()).hexdigest()


# ---------------------------------------------------------------- prepared dataset file


def save_prepared(path, splits, standardizer, seed, extra=None):
    """Zip container: ``manifest.json`` plus raw little-endian float64 blocks.

    ``splits`` maps a split name to a standardized :class:`Dataset`.
    """
    first = next(iter(splits.values()))
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "seed": seed,
        "columns": list(COLUMNS),
        "window_len": first.window_len,
        "horizon": first.horizon,
        "standardizer": standardizer.to_dict(),
        "splits": {},
    }
    if extra:
        manifest.update(extra)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, ds in splits.items():
            pos, neg = ds.class_counts()
            manifest["splits"][name] = {
                "count": len(ds),
                "positive": pos,
                "negative": neg,
                "x_block": f"{name}_x.f64",
                "y_block": f"{name}_y.f64",
                "sources": ds.sources,
                "t_end": [int(t) for t in ds.t_end],
                "kinds": ds.kinds,
                "x_sha256": checksum(ds.x),
            }
            _write_entry(zf, f"{name}_x.f64", np.ascontiguousarray(ds.x, dtype="<f8").tobytes())
            _write_entry(zf, f"{name}_y.f64", np.ascontiguousarray(ds.y, dtype="<f8").tobytes())
        _write_entry(zf, "manifest.json", (json.dumps(manifest, indent=1) + "\n").encode())
    return manifest


def _write_entry(zf, name, data):
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    zf.writestr(info, data)


def load_prepared(path):
    """Returns ``(splits, standardizer, manifest)``."""
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as e:
        raise FormatError(f"{path}: not a prepared dataset ({e})") from None
    with zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format_version") != DATASET_FORMAT_VERSION:
            raise FormatError(f"unsupported dataset format_version {manifest.get('format_version')}")
        W, H = manifest["window_len"], manifest["horizon"]
        splits = {}
        for name, meta in manifest["splits"].items():
            n = meta["count"]
            x = np.frombuffer(zf.read(meta["x_block"]), dtype="<f8")
            y = np.frombuffer(zf.read(meta["y_block"]), dtype="<f8")
            if x.size != n * N_FEATURES * W or y.size != n:
                raise FormatError(f"split {name}: block sizes do not match the manifest")
            splits[name] = Dataset(
                x.astype(np.float64).reshape(n, N_FEATURES, W), y.astype(np.int8),
                list(meta["sources"]), np.asarray(meta["t_end"]), list(meta["kinds"]),
                None, W, H,
            )
    return splits, Standardizer.from_dict(manifest["standardizer"]), manifest
