"""Stacked LSTM / bidirectional LSTM classifiers with dense heads.

A window is a ``(features, time)`` matrix: one row per flight parameter, one
column per timestep, oldest first. Batches of windows are ``(B, features, time)``.

Every LSTM layer except the last one in the stack emits its full hidden
sequence; the last one emits only its final state, which feeds the dense head.
For a bidirectional final layer that state is the forward pass at the last
timestep concatenated with the backward pass after it has consumed the whole
(reversed) sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidArgument

LSTM_UNI = "lstm_uni"
LSTM_BI = "lstm_bi"
DENSE = "dense"
DROPOUT = "dropout"
OUTPUT = "output_sigmoid"

KINDS = (LSTM_UNI, LSTM_BI, DENSE, DROPOUT, OUTPUT)
ACTIVATIONS = ("relu", "tanh", "sigmoid")


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return sigmoid(z)


def _activation_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    return a * (1.0 - a)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    hidden_units: int = 1
    activation: str = "relu"
    drop_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown layer kind {self.kind!r}")
        if self.hidden_units < 1:
            raise InvalidArgument("hidden_units must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.drop_rate < 1.0:
            raise InvalidArgument("drop_rate must lie in [0, 1)")

    @classmethod
    def lstm(cls, units):
        return cls(LSTM_UNI, units)

    @classmethod
    def bilstm(cls, units):
        return cls(LSTM_BI, units)

    @classmethod
    def dense(cls, units, activation="relu"):
        return cls(DENSE, units, activation)

    @classmethod
    def dropout(cls, rate):
        return cls(DROPOUT, drop_rate=rate)

    @classmethod
    def output(cls):
        return cls(OUTPUT, 1)

    @property
    def is_lstm(self):
        return self.kind in (LSTM_UNI, LSTM_BI)

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind in (LSTM_UNI, LSTM_BI, DENSE):
            d["hidden_units"] = self.hidden_units
        if self.kind == DENSE:
            d["activation"] = self.activation
        if self.kind == DROPOUT:
            d["drop_rate"] = self.drop_rate
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["kind"],
            int(d.get("hidden_units", 1)),
            d.get("activation", "relu"),
            float(d.get("drop_rate", 0.0)),
        )


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple
    input_features: int = 16
    window_len: int = 10

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        layers = self.layers
        if self.input_features < 1 or self.window_len < 1:
            raise InvalidArgument("input_features and window_len must be >= 1")
        if not layers or not layers[0].is_lstm:
            raise InvalidArgument("a model must start with an LSTM layer")
        kinds = [layer.kind for layer in layers]
        if kinds.count(OUTPUT) != 1 or kinds[-1] != OUTPUT:
            raise InvalidArgument("exactly one output_sigmoid layer, in last position")
        n_lstm = 0
        while n_lstm < len(layers) and layers[n_lstm].is_lstm:
            n_lstm += 1
        for i, layer in enumerate(layers[n_lstm:], start=n_lstm):
            if layer.is_lstm:
                if any(prev.kind == DROPOUT for prev in layers[:i]):
                    raise InvalidArgument(
                        "dropout is only allowed on non-recurrent connections, "
                        "not between LSTM layers"
                    )
                raise InvalidArgument("LSTM layers must form a contiguous stack at the input")
            if layer.kind == DROPOUT and layers[i - 1].kind not in (DENSE, LSTM_UNI, LSTM_BI):
                raise InvalidArgument("dropout must follow a dense or the final LSTM layer")

    @property
    def n_lstm(self):
        return sum(layer.is_lstm for layer in self.layers)

    def to_dict(self):
        return {
            "input_features": self.input_features,
            "window_len": self.window_len,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(LayerSpec.from_dict(x) for x in d["layers"]),
            int(d.get("input_features", 16)),
            int(d.get("window_len", 10)),
        )


def arch_a(input_features=16, window_len=10):
    L = LayerSpec
    return ModelSpec(
        (L.lstm(32), L.lstm(16), L.dense(16), L.dense(16), L.dropout(0.5), L.output()),
        input_features,
        window_len,
    )


def arch_b(input_features=16, window_len=10):
    L = LayerSpec
    return ModelSpec(
        (
            L.lstm(224), L.lstm(128), L.lstm(96), L.lstm(80),
            L.dense(64), L.dropout(0.5), L.dense(32), L.output(),
        ),
        input_features,
        window_len,
    )


def arch_c(input_features=16, window_len=10):
    L = LayerSpec
    return ModelSpec(
        (
            L.bilstm(192), L.bilstm(160), L.bilstm(128), L.bilstm(32), L.bilstm(32),
            L.dense(16), L.dense(16), L.dropout(0.5), L.output(),
        ),
        input_features,
        window_len,
    )


PRESETS = {"arch-a": arch_a, "arch-b": arch_b, "arch-c": arch_c}


def preset(name, **kw):
    try:
        return PRESETS[name](**kw)
    except KeyError:
        raise InvalidArgument(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def tensor_shapes(spec):
    """Ordered ``(name, shape)`` of every parameter tensor the spec implies."""
    shapes = []
    width = spec.input_features
    for li, layer in enumerate(spec.layers):
        h = layer.hidden_units
        if layer.kind == LSTM_UNI:
            shapes += [(f"{li}.W", (4 * h, width)), (f"{li}.U", (4 * h, h)), (f"{li}.b", (4 * h,))]
            width = h
        elif layer.kind == LSTM_BI:
            for d in ("fwd", "bwd"):
                shapes += [
                    (f"{li}.{d}.W", (4 * h, width)),
                    (f"{li}.{d}.U", (4 * h, h)),
                    (f"{li}.{d}.b", (4 * h,)),
                ]
            width = 2 * h
        elif layer.kind in (DENSE, OUTPUT):
            shapes += [(f"{li}.W", (h, width)), (f"{li}.b", (h,))]
            width = h
    return shapes


def param_count(spec):
    """Exact number of trainable scalars.

    Per LSTM direction ``4*(h*(in+h)+h)``; per dense layer ``out*(in+1)``.
    """
    total = 0
    width = spec.input_features
    for layer in spec.layers:
        h = layer.hidden_units
        if layer.kind == LSTM_UNI:
            total += 4 * (h * (width + h) + h)
            width = h
        elif layer.kind == LSTM_BI:
            total += 2 * 4 * (h * (width + h) + h)
            width = 2 * h
        elif layer.kind in (DENSE, OUTPUT):
            total += h * (width + 1)
            width = h
    return total


def he_init(rows, cols, fan_in, seed):
    """``rows x cols`` matrix with i.i.d. Normal(0, 2/fan_in) entries."""
    if fan_in < 1:
        raise InvalidArgument("fan_in must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(rows, cols))


@dataclass
class LstmCellParams:
    """Stacked gate parameters of one LSTM direction (gate order i, f, o, g)."""

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.U = np.asarray(self.U, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        h = self.U.shape[1] if self.U.ndim == 2 else -1
        if (
            self.W.ndim != 2
            or self.U.shape != (4 * h, h)
            or self.W.shape[0] != 4 * h
            or self.b.shape != (4 * h,)
        ):
            raise InvalidArgument(
                f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}"
            )

    @classmethod
    def from_gates(cls, W_i, W_f, W_o, W_g, U_i, U_f, U_o, U_g, b_i, b_f, b_o, b_g):
        return cls(
            np.vstack([W_i, W_f, W_o, W_g]),
            np.vstack([U_i, U_f, U_o, U_g]),
            np.concatenate([b_i, b_f, b_o, b_g]),
        )

    @property
    def hidden_size(self):
        return self.U.shape[1]

    @property
    def input_size(self):
        return self.W.shape[1]

    def gate(self, name):
        """``(W, U, b)`` views for gate ``name`` in {'i', 'f', 'o', 'g'}."""
        k = "ifog".index(name)
        h = self.hidden_size
        s = slice(k * h, (k + 1) * h)
        return self.W[s], self.U[s], self.b[s]


@dataclass
class Model:
    spec: ModelSpec
    params: list
    rng_seed: int = 0
    names: list = field(default_factory=list)

    def __post_init__(self):
        shapes = tensor_shapes(self.spec)
        if not self.names:
            self.names = [n for n, _ in shapes]
        if len(self.params) != len(shapes):
            raise InvalidArgument("parameter list does not match spec")
        for p, (n, s) in zip(self.params, shapes):
            if p.shape != s:
                raise InvalidArgument(f"tensor {n} has shape {p.shape}, expected {s}")
        self._slices = []
        k = 0
        for layer in self.spec.layers:
            n = {LSTM_UNI: 3, LSTM_BI: 6, DENSE: 2, OUTPUT: 2}.get(layer.kind, 0)
            self._slices.append(slice(k, k + n))
            k += n

    def layer_params(self, i):
        return self.params[self._slices[i]]

    def layer_index_range(self, i):
        return range(self._slices[i].start, self._slices[i].stop)

    def n_params(self):
        return int(sum(p.size for p in self.params))

    def copy(self):
        return Model(self.spec, [p.copy() for p in self.params], self.rng_seed, list(self.names))

    def cell_params(self, layer_index, direction="fwd"):
        p = self.layer_params(layer_index)
        if self.spec.layers[layer_index].kind == LSTM_BI and direction == "bwd":
            return LstmCellParams(*p[3:6])
        return LstmCellParams(*p[:3])


def init_model(spec, seed=0, forget_bias=1.0, he=True):
    """Fresh model: He-initialized weights, zero biases except the forget gate."""
    shapes = tensor_shapes(spec)
    seeds = np.random.SeedSequence(seed).generate_state(len(shapes), dtype=np.uint64)
    params = []
    for (name, shape), s in zip(shapes, seeds):
        if len(shape) == 1:
            b = np.zeros(shape)
            if name.endswith(".b") and _is_lstm_bias(spec, name):
                h = shape[0] // 4
                b[h : 2 * h] = forget_bias
            params.append(b)
        else:
            fan_in = shape[1]
            if he:
                params.append(he_init(shape[0], shape[1], fan_in, int(s)))
            else:
                lim = math.sqrt(1.0 / fan_in)
                params.append(np.random.default_rng(int(s)).uniform(-lim, lim, size=shape))
    return Model(spec, params, seed)


def _is_lstm_bias(spec, name):
    return spec.layers[int(name.split(".")[0])].is_lstm


# ---------------------------------------------------------------- single-window ops


def lstm_cell_forward(p, x_t, h_prev, c_prev):
    """One LSTM step for a single sample; returns ``(h_t, c_t)``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    h = p.hidden_size
    if x_t.shape != (p.input_size,) or h_prev.shape != (h,) or c_prev.shape != (h,):
        raise InvalidArgument("lstm_cell_forward: shape mismatch")
    z = p.W @ x_t + p.U @ h_prev + p.b
    i = sigmoid(z[:h])
    f = sigmoid(z[h : 2 * h])
    o = sigmoid(z[2 * h : 3 * h])
    g = np.tanh(z[3 * h :])
    c_t = f * c_prev + i * g
    return o * np.tanh(c_t), c_t


def _as_seq(seq, n_in):
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise InvalidArgument("sequence must be a non-empty list of vectors")
    if seq.shape[1] != n_in:
        raise InvalidArgument("sequence vectors do not match the layer input size")
    return seq


def lstm_layer_forward(p, seq):
    """Hidden vector at every timestep of ``seq`` (a ``(T, n_in)`` array or list)."""
    seq = _as_seq(seq, p.input_size)
    H, _, _ = kernels.lstm_seq_forward(seq[:, None, :].copy(), p.W, p.U, p.b)
    return [H[t, 0].copy() for t in range(H.shape[0])]


def bilstm_layer_forward(fwd, bwd, seq):
    """``[h_fwd_t; h_bwd_t]`` per timestep, both halves aligned to input time order."""
    seq = _as_seq(seq, fwd.input_size)
    if bwd.input_size != fwd.input_size:
        raise InvalidArgument("forward and backward input sizes differ")
    hf = lstm_layer_forward(fwd, seq)
    hb = lstm_layer_forward(bwd, seq[::-1])[::-1]
    return [np.concatenate([a, b]) for a, b in zip(hf, hb)]


# ---------------------------------------------------------------- batched forward


def dropout_mask(rng, shape, rate):
    if rate <= 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= rate) / (1.0 - rate)


def forward_batch(model, X, train=False, rng=None, masks=None):
    """Probabilities for a batch of windows plus the cache needed for backprop.

    ``X`` is ``(B, features, time)``. In train mode each Dropout layer draws an
    inverted-dropout mask from ``rng`` unless ``masks`` (layer index -> mask)
    pins it. Infer mode makes dropout the identity.
    """
    spec = model.spec
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[1:] != (spec.input_features, spec.window_len):
        raise InvalidArgument(
            f"expected windows of shape (B, {spec.input_features}, {spec.window_len}), "
            f"got {X.shape}"
        )
    B = X.shape[0]
    a = np.ascontiguousarray(X.transpose(2, 0, 1))
    last_lstm = spec.n_lstm - 1
    cache = []
    used_masks = {}
    for li, layer in enumerate(spec.layers):
        p = model.layer_params(li)
        if layer.kind == LSTM_UNI:
            H, C, G = kernels.lstm_seq_forward(a, *p)
            cache.append((a, H, C, G))
            a = H[-1] if li == last_lstm else H
        elif layer.kind == LSTM_BI:
            h = layer.hidden_units
            rev = np.ascontiguousarray(a[::-1])
            Hf, Cf, Gf = kernels.lstm_seq_forward(a, *p[:3])
            Hb, Cb, Gb = kernels.lstm_seq_forward(rev, *p[3:])
            cache.append((a, rev, Hf, Cf, Gf, Hb, Cb, Gb))
            if li == last_lstm:
                a = np.concatenate([Hf[-1], Hb[-1]], axis=1)
            else:
                a = np.empty((Hf.shape[0], B, 2 * h))
                a[:, :, :h] = Hf
                a[:, :, h:] = Hb[::-1]
        elif layer.kind == DENSE:
            z = a @ p[0].T + p[1]
            out = _activate(layer.activation, z)
            cache.append((a, z, out))
            a = out
        elif layer.kind == DROPOUT:
            if train and layer.drop_rate > 0.0:
                m = masks.get(li) if masks is not None and li in masks else None
                if m is None:
                    if rng is None:
                        raise InvalidArgument("train mode with dropout needs an rng or masks")
                    m = dropout_mask(rng, a.shape, layer.drop_rate)
                used_masks[li] = m
                cache.append((m,))
                a = a * m
            else:
                cache.append((None,))
        else:
            z = (a @ p[0].T + p[1])[:, 0]
            cache.append((a, z))
            a = sigmoid(z)
    return a, {"layers": cache, "masks": used_masks}


def predict_proba(model, X, batch_size=256):
    X = np.asarray(X, dtype=np.float64)
    out = [forward_batch(model, X[i : i + batch_size])[0] for i in range(0, len(X), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def model_forward(m, window, mode="infer", seed=0):
    """Stall probability for one ``(features, time)`` window."""
    if mode not in ("train", "infer"):
        raise InvalidArgument("mode must be 'train' or 'infer'")
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (m.spec.input_features, m.spec.window_len):
        raise InvalidArgument(f"window shape {window.shape} does not match the model")
    rng = np.random.default_rng(seed)
    p, _ = forward_batch(m, window[None], train=(mode == "train"), rng=rng)
    return float(p[0])

