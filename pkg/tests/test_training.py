import math

import numpy as np
import pytest

from stallnet.errors import InvalidArgument, NumericError
from stallnet.nn import LayerSpec, ModelSpec, arch_a, forward_batch, init_model, param_count, sigmoid
from stallnet.training import (
    AdamState,
    TrainConfig,
    TrainHistory,
    adam_step,
    bce_loss,
    fit,
    grad_check,
    loss_on,
    model_backward,
    random_masks,
    reference_loss,
)

from conftest import micro_spec


# loss

def test_bce_examples():
    assert bce_loss([0.5], [1]) == pytest.approx(0.693147, abs=1e-6)
    assert bce_loss([1.0], [1]) <= 2.8e-11
    assert bce_loss([0.9, 0.2], [1, 0]) == pytest.approx((-math.log(0.9) - math.log(0.8)) / 2, abs=1e-12)
    assert bce_loss([0.9, 0.2], [1, 0]) == pytest.approx(0.164252, abs=1e-6)


def test_bce_clamps_zero():
    assert math.isfinite(bce_loss([0.0], [1]))


@pytest.mark.parametrize("p,y", [([], []), ([0.5, 0.5], [1])])
def test_bce_rejects_bad_lengths(p, y):
    with pytest.raises(InvalidArgument):
        bce_loss(p, y)


# gradients

def test_output_bias_gradient_zero_at_exact_label():
    m = init_model(micro_spec(), seed=2)
    m.params[-1][:] = 0.37
    label = float(sigmoid(np.array([0.37]))[0])
    g = model_backward(m, np.zeros((3, 4)), label)
    assert g[-1][0] == pytest.approx(0.0, abs=1e-15)


def test_duplicated_sample_same_gradient(rng):
    m = init_model(micro_spec(), seed=5)
    x = rng.normal(size=(3, 4))
    g1 = model_backward(m, x, 1.0)
    g2 = model_backward(m, np.stack([x, x]), [1.0, 1.0])
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_gradient_shapes_mirror_params(tiny_model, rng):
    g = model_backward(tiny_model, rng.normal(size=(3, 4)), 0.0)
    assert [x.shape for x in g] == [p.shape for p in tiny_model.params]
    assert sum(x.size for x in g) == param_count(tiny_model.spec)


@pytest.mark.parametrize("kind", ["lstm_uni", "lstm_bi"])
def test_grad_check_small_models(kind, rng):
    spec = micro_spec(kind=kind, units=(3, 2), dense=(3,), dropout=0.5)
    m = init_model(spec, seed=11)
    masks = random_masks(m, 1, seed=4)
    err = grad_check(m, (rng.normal(size=(3, 4)), 1.0), eps=1e-5, masks=masks)
    assert err < 1e-4


def test_grad_check_arch_a_shaped_micro():
    L = LayerSpec
    spec = ModelSpec((L.lstm(4), L.lstm(4), L.dense(4), L.dense(4), L.dropout(0.5), L.output()), 3, 5)
    m = init_model(spec, seed=0)
    x = np.random.default_rng(0).normal(size=(3, 5))
    assert grad_check(m, (x, 0.0), masks=random_masks(m, 1, seed=1)) < 1e-4


def test_grad_check_detects_corrupted_recurrent_gradient(tiny_model, rng):
    def broken(m, X, y, masks):
        g = model_backward(m, X, y, masks)
        g[1] = g[1] * 1.5  # layer 0 recurrent weights
        return g

    err = grad_check(tiny_model, (rng.normal(size=(3, 4)), 1.0), grad_fn=broken)
    assert err > 1e-2


def test_grad_check_rejects_zero_eps(tiny_model):
    with pytest.raises(InvalidArgument):
        grad_check(tiny_model, (np.zeros((3, 4)), 1.0), eps=0)


def test_reference_loss_agrees_with_batched(rng):
    m = init_model(micro_spec(kind="lstm_bi", units=(3, 2), dropout=0.5), seed=8)
    X = rng.normal(size=(4, 3, 4))
    y = np.array([1.0, 0.0, 1.0, 0.0])
    masks = random_masks(m, 4, seed=2)
    ref = float(reference_loss(m, X, y, masks))
    assert ref == pytest.approx(loss_on(m, X, y, masks), rel=1e-12)


def test_masks_shared_between_forward_and_backward(rng):
    m = init_model(micro_spec(dense=(6,), dropout=0.5), seed=1)
    X = rng.normal(size=(5, 3, 4))
    _, cache = forward_batch(m, X, train=True, rng=np.random.default_rng(0))
    masks = cache["masks"]
    p1, _ = forward_batch(m, X, train=True, masks=masks)
    p2, _ = forward_batch(m, X, train=True, rng=np.random.default_rng(0))
    np.testing.assert_array_equal(p1, p2)
    # one mask row per sample, so samples in a batch drop different units
    (mask,) = masks.values()
    assert mask.shape[0] == 5 and len({tuple(r) for r in mask}) > 1


# Adam

def _scalar_adam(p, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        p = p - lr * mh / (math.sqrt(vh) + eps)
    return p


def test_adam_zero_gradient_no_change():
    p = [np.array([1.0, -2.0])]
    st = AdamState.zeros_like(p)
    adam_step(st, p, [np.zeros(2)], TrainConfig())
    assert np.array_equal(p[0], [1.0, -2.0]) and st.t == 1


def test_adam_first_step():
    p = [np.array([0.0])]
    adam_step(AdamState.zeros_like(p), p, [np.array([0.3])], TrainConfig(learning_rate=1e-3))
    assert p[0][0] == pytest.approx(-0.001 * 0.3 / (0.3 + 1e-8), abs=1e-15)
    assert p[0][0] == pytest.approx(-0.001, abs=1e-9)


def test_adam_matches_scalar_oracle():
    gs = [0.3, -1.2, 0.05]
    p = [np.array([0.7])]
    st = AdamState.zeros_like(p)
    for g in gs:
        adam_step(st, p, [np.array([g])], TrainConfig())
    assert abs(p[0][0] - _scalar_adam(0.7, gs)) < 1e-12
    assert st.m[0].shape == p[0].shape and np.all(st.v[0] >= 0)


def test_adam_names_offending_tensor():
    p = [np.zeros(2), np.zeros(3)]
    with pytest.raises(NumericError, match="1.U"):
        adam_step(AdamState.zeros_like(p), p, [np.zeros(2), np.array([0, np.nan, 0])],
                  TrainConfig(), names=["0.W", "1.U"])


# config / history

@pytest.mark.parametrize("kw", [{"epochs": 0}, {"learning_rate": 0}, {"adam_beta1": 1.0},
                                {"batch_size": 0}])
def test_train_config_validation(kw):
    with pytest.raises(InvalidArgument):
        TrainConfig(**kw)


def test_history_csv_roundtrip():
    h = TrainHistory()
    h.append(0.5, 0.4, 0.75)
    h.append(0.25, 0.3, 0.8)
    text = h.to_csv()
    assert text.splitlines()[0] == "epoch,train_loss,val_loss,val_accuracy"
    back = TrainHistory.from_csv(text)
    assert back.val_loss == h.val_loss and back.train_loss == h.train_loss
    assert h.best_epoch() == 2


# fit

def _overfit_set():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(32, 16, 10))
    y = (X[:, 7, -3:].mean(axis=1) > 0).astype(float)
    return X, y


def test_fit_overfits_small_set():
    X, y = _overfit_set()
    m = init_model(arch_a(), seed=0)
    _, h = fit(m, (X, y), (X, y), TrainConfig(learning_rate=1e-3, epochs=500, seed=1))
    assert len(h) == 500
    assert min(h.train_loss) < 0.05
    assert h.train_loss[-1] < h.train_loss[0]


def test_fit_deterministic():
    X, y = _overfit_set()
    cfg = TrainConfig(epochs=5, batch_size=8, seed=9)
    runs = [fit(init_model(arch_a(), seed=1), (X, y), (X, y), cfg) for _ in range(2)]
    assert runs[0][1] == runs[1][1]
    assert all(np.array_equal(a, b) for a, b in zip(runs[0][0].params, runs[1][0].params))


def test_fit_rejects_empty():
    m = init_model(micro_spec(), seed=0)
    empty = (np.zeros((0, 3, 4)), np.zeros(0))
    with pytest.raises(InvalidArgument):
        fit(m, empty, empty, TrainConfig(epochs=1))


def test_fit_reports_divergence_epoch():
    X, y = _overfit_set()
    m = init_model(arch_a(), seed=0)
    m.params[0][:] = np.nan
    with pytest.raises(NumericError, match="epoch 1"):
        fit(m, (X, y), (X, y), TrainConfig(epochs=2))


def test_fit_callback_can_stop():
    X, y = _overfit_set()
    m = init_model(micro_spec(features=16, window=10), seed=0)
    _, h = fit(m, (X, y), (X, y), TrainConfig(epochs=50), callback=lambda e, hist: e == 3)
    assert len(h) == 3


def test_param_count_unchanged_after_steps():
    X, y = _overfit_set()
    m = init_model(arch_a(), seed=0)
    before = [p.shape for p in m.params]
    fit(m, (X, y), (X, y), TrainConfig(epochs=2))
    assert [p.shape for p in m.params] == before and m.n_params() == 9969
