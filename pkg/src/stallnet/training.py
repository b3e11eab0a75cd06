"""Backpropagation through time, binary cross-entropy, Adam and the fit loop."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidArgument, NumericError
from .nn import (
    DENSE,
    DROPOUT,
    LSTM_BI,
    LSTM_UNI,
    OUTPUT,
    _activation_grad,
    dropout_mask,
    forward_batch,
)

BCE_EPS = 1e-12


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidArgument("learning_rate must be > 0")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise InvalidArgument("Adam betas must lie in (0, 1)")
        if self.epochs < 1:
            raise InvalidArgument("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")
        if not self.adam_eps > 0:
            raise InvalidArgument("adam_eps must be > 0")

    @classmethod
    def from_dict(cls, d):
        names = cls.__dataclass_fields__
        unknown = set(d) - set(names)
        if unknown:
            raise InvalidArgument(f"unknown train settings: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def append(self, train_loss, val_loss, val_accuracy):
        self.train_loss.append(float(train_loss))
        self.val_loss.append(float(val_loss))
        self.val_accuracy.append(float(val_accuracy))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_accuracy"])
        for k in range(len(self)):
            w.writerow(
                [k + 1, repr(self.train_loss[k]), repr(self.val_loss[k]), repr(self.val_accuracy[k])]
            )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        h = cls()
        for row in csv.DictReader(io.StringIO(text)):
            h.append(float(row["train_loss"]), float(row["val_loss"]), float(row["val_accuracy"]))
        return h

    def best_epoch(self):
        """1-based epoch with the highest validation accuracy (earliest on ties)."""
        return int(np.argmax(self.val_accuracy)) + 1 if len(self) else 0


def bce_loss(probs, labels):
    """Mean binary cross-entropy with probabilities clamped to [eps, 1-eps]."""
    p = np.asarray(probs, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if p.size == 0 or p.size != y.size:
        raise InvalidArgument("probs and labels must be non-empty and of equal length")
    p = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def backward_batch(model, probs, cache, labels):
    """Gradients of the mean BCE over the batch w.r.t. every parameter tensor."""
    spec = model.spec
    y = np.asarray(labels, dtype=np.float64)
    B = y.shape[0]
    grads = [None] * len(model.params)
    last_lstm = spec.n_lstm - 1
    da = None
    for li in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[li]
        c = cache["layers"][li]
        p = model.layer_params(li)
        idx = model.layer_index_range(li)
        if layer.kind == OUTPUT:
            a_in, _ = c
            dz = (probs - y) / B
            grads[idx[0]] = dz[None, :] @ a_in
            grads[idx[1]] = np.array([dz.sum()])
            da = dz[:, None] @ p[0]
        elif layer.kind == DROPOUT:
            if c[0] is not None:
                da = da * c[0]
        elif layer.kind == DENSE:
            a_in, z, out = c
            dz = da * _activation_grad(layer.activation, z, out)
            grads[idx[0]] = dz.T @ a_in
            grads[idx[1]] = dz.sum(axis=0)
            da = dz @ p[0]
        elif layer.kind == LSTM_UNI:
            x, H, C, G = c
            if li == last_lstm:
                dH = np.zeros_like(H)
                dH[-1] = da
            else:
                dH = da
            dX, dW, dU, db = kernels.lstm_seq_backward(x, p[0], p[1], H, C, G, dH)
            grads[idx[0]], grads[idx[1]], grads[idx[2]] = dW, dU, db
            da = dX
        elif layer.kind == LSTM_BI:
            x, rev, Hf, Cf, Gf, Hb, Cb, Gb = c
            h = layer.hidden_units
            if li == last_lstm:
                dHf = np.zeros_like(Hf)
                dHb = np.zeros_like(Hb)
                dHf[-1] = da[:, :h]
                dHb[-1] = da[:, h:]
            else:
                dHf = np.ascontiguousarray(da[:, :, :h])
                dHb = np.ascontiguousarray(da[::-1, :, h:])
            dXf, dWf, dUf, dbf = kernels.lstm_seq_backward(x, p[0], p[1], Hf, Cf, Gf, dHf)
            dXb, dWb, dUb, dbb = kernels.lstm_seq_backward(rev, p[3], p[4], Hb, Cb, Gb, dHb)
            for k, g in zip(idx, (dWf, dUf, dbf, dWb, dUb, dbb)):
                grads[k] = g
            da = dXf + dXb[::-1]
    return grads


def model_backward(m, window, label, dropout_masks=None):
    """Per-parameter gradients of the BCE loss for one window (or a batch).

    ``dropout_masks`` maps layer index to the mask used in the matching
    forward pass; without it dropout is treated as the identity.
    """
    X = np.asarray(window, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    y = np.atleast_1d(np.asarray(label, dtype=np.float64))
    train = dropout_masks is not None
    probs, cache = forward_batch(m, X, train=train, masks=dropout_masks or {})
    return backward_batch(m, probs, cache, y)


def loss_on(model, X, y, masks=None):
    probs, _ = forward_batch(model, X, train=masks is not None, masks=masks or {})
    return bce_loss(probs, y)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(state, params, grads, config, names=None):
    """One bias-corrected Adam update, applied in place. Returns ``(params, state)``."""
    for k, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            name = names[k] if names else f"#{k}"
            raise NumericError(f"non-finite gradient in tensor {name}")
    b1, b2 = config.adam_beta1, config.adam_beta2
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
    return params, state


def _xy(ds):
    if isinstance(ds, tuple):
        X, y = ds
    else:
        X, y = ds.x, ds.y
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64)


def evaluate_loss_accuracy(model, X, y, batch_size=512):
    probs = np.concatenate(
        [forward_batch(model, X[i : i + batch_size])[0] for i in range(0, len(X), batch_size)]
    )
    return bce_loss(probs, y), float(np.mean((probs >= 0.5) == (y >= 0.5)))


def fit(m, train, val, cfg, callback=None):
    """Train ``m`` in place with Adam on mean BCE; returns ``(m, history)``.

    ``train``/``val`` are datasets exposing ``.x``/``.y`` or ``(X, y)`` tuples.
    The recorded train loss is the sample-weighted mean over the epoch's
    batches (dropout active). ``callback(epoch, history)`` may return True to
    stop after that epoch.
    """
    # overflow shows up as a non-finite loss and is reported as NumericError
    with np.errstate(over="ignore", invalid="ignore"):
        return _fit(m, train, val, cfg, callback)


def _fit(m, train, val, cfg, callback):
    X, y = _xy(train)
    Xv, yv = _xy(val)
    if len(X) == 0 or len(Xv) == 0:
        raise InvalidArgument("training and validation sets must be non-empty")
    state = AdamState.zeros_like(m.params)
    hist = TrainHistory()
    n = len(X)
    has_dropout = any(layer.kind == DROPOUT and layer.drop_rate > 0 for layer in m.spec.layers)
    for epoch in range(1, cfg.epochs + 1):
        order_rng = np.random.default_rng([cfg.seed, epoch, 0])
        drop_rng = np.random.default_rng([cfg.seed, epoch, 1])
        order = order_rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            bi = order[start : start + cfg.batch_size]
            probs, cache = forward_batch(m, X[bi], train=has_dropout, rng=drop_rng)
            total += bce_loss(probs, y[bi]) * len(bi)
            grads = backward_batch(m, probs, cache, y[bi])
            try:
                adam_step(state, m.params, grads, cfg, m.names)
            except NumericError as e:
                raise NumericError(f"epoch {epoch}: {e}") from None
        train_loss = total / n
        val_loss, val_acc = evaluate_loss_accuracy(m, Xv, yv)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise NumericError(f"epoch {epoch}: loss diverged (train={train_loss}, val={val_loss})")
        hist.append(train_loss, val_loss, val_acc)
        if callback is not None and callback(epoch, hist):
            break
    return m, hist


def _ref_sigmoid(z):
    return 1 / (1 + np.exp(-z))


def _ref_lstm(W, U, b, seq):
    h = U.shape[1]
    hs = []
    h_t = np.zeros(h, dtype=W.dtype)
    c_t = np.zeros(h, dtype=W.dtype)
    for x in seq:
        z = W @ x + U @ h_t + b
        i = _ref_sigmoid(z[:h])
        f = _ref_sigmoid(z[h : 2 * h])
        o = _ref_sigmoid(z[2 * h : 3 * h])
        g = np.tanh(z[3 * h :])
        c_t = f * c_t + i * g
        h_t = o * np.tanh(c_t)
        hs.append(h_t)
    return hs


def reference_loss(model, X, y, masks=None, dtype=np.longdouble):
    """Mean BCE via a straight-line per-sample forward pass in ``dtype``.

    Shares no code with the batched kernels; used as the finite-difference
    oracle so its rounding floor sits far below the float64 gradient.
    """
    spec = model.spec
    params = [p.astype(dtype) for p in model.params]
    total = dtype(0)
    for n in range(X.shape[0]):
        seq = [X[n, :, t].astype(dtype) for t in range(X.shape[2])]
        a = None
        for li, layer in enumerate(spec.layers):
            p = params[model._slices[li]]
            if layer.kind == LSTM_UNI:
                seq = _ref_lstm(p[0], p[1], p[2], seq)
                a = seq[-1]
            elif layer.kind == LSTM_BI:
                fw = _ref_lstm(p[0], p[1], p[2], seq)
                bw = _ref_lstm(p[3], p[4], p[5], seq[::-1])
                a = np.concatenate([fw[-1], bw[-1]])
                seq = [np.concatenate([f, b]) for f, b in zip(fw, bw[::-1])]
            elif layer.kind == DENSE:
                z = p[0] @ a + p[1]
                if layer.activation == "relu":
                    a = np.maximum(z, 0)
                elif layer.activation == "tanh":
                    a = np.tanh(z)
                else:
                    a = _ref_sigmoid(z)
            elif layer.kind == DROPOUT:
                if masks and li in masks:
                    a = a * masks[li][n].astype(dtype)
            else:
                prob = _ref_sigmoid((p[0] @ a + p[1])[0])
        yn = dtype(y[n])
        total += -(yn * np.log(prob) + (1 - yn) * np.log(1 - prob))
    return total / X.shape[0]


def grad_check(m, sample, eps=1e-5, masks=None, grad_fn=None):
    """Max relative error between analytic and central-difference gradients.

    ``sample`` is ``(window, label)``; ``masks`` pins dropout masks for both
    routes. The numeric route perturbs each scalar by +-eps and differences
    :func:`reference_loss`. ``grad_fn(model, X, y, masks)`` replaces the
    analytic gradient (used to show the check catches a broken one).
    """
    if not eps > 0:
        raise InvalidArgument("eps must be > 0")
    window, label = sample
    X = np.asarray(window, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    y = np.atleast_1d(np.asarray(label, dtype=np.float64))
    if grad_fn is None:
        analytic = model_backward(m, X, y, masks)
    else:
        analytic = grad_fn(m, X, y, masks)
    worst = 0.0
    for p, g in zip(m.params, analytic):
        flat = p.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            lp = reference_loss(m, X, y, masks)
            flat[k] = orig - eps
            lm = reference_loss(m, X, y, masks)
            flat[k] = orig
            num = float((lp - lm) / (2 * np.longdouble(eps)))
            a = gflat[k]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


def random_masks(model, batch, seed):
    """Fixed dropout masks for every Dropout layer (for reproducible checks)."""
    rng = np.random.default_rng(seed)
    masks = {}
    width = model.spec.input_features
    for li, layer in enumerate(model.spec.layers):
        if layer.kind == LSTM_UNI or layer.kind in (DENSE, OUTPUT):
            width = layer.hidden_units
        elif layer.kind == LSTM_BI:
            width = 2 * layer.hidden_units
        elif layer.kind == DROPOUT:
            masks[li] = dropout_mask(rng, (batch, width), layer.drop_rate)
    return masks
