import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stallnet.errors import InvalidArgument, NumericError
from stallnet.hyperopt import (
    KIND_CAT,
    KIND_INT,
    KIND_LINEAR,
    KIND_LOG,
    Dimension,
    Kernel,
    Observation,
    SearchSpace,
    ei_from_moments,
    expected_improvement,
    gp_fit,
    gp_posterior,
    gp_posterior_many,
    propose_next,
    tune,
)

EXACT = Kernel(length_scale=0.2, signal_var=1.0, noise_var=0.0)
UNIT = SearchSpace([Dimension("x", KIND_LINEAR, 0.0, 1.0)])


def _se(a, b, ls=0.2, sf2=1.0):
    return sf2 * math.exp(-0.5 * np.sum(((np.asarray(a) - np.asarray(b)) / ls) ** 2))


# search space

def test_dimension_roundtrip():
    d = Dimension("lr", KIND_LOG, 1e-5, 1e-2)
    assert d.decode(0.0) == pytest.approx(1e-5) and d.decode(1.0) == pytest.approx(1e-2)
    assert d.decode(d.encode(3e-4)) == pytest.approx(3e-4)
    i = Dimension("units", KIND_INT, 8, 256)
    assert isinstance(i.decode(0.5), int) and i.decode(0.5) == 132
    c = Dimension("act", KIND_CAT, choices=("relu", "tanh"))
    assert c.decode(0.1) == "relu" and c.decode(0.9) == "tanh"
    assert c.decode(c.encode("tanh")) == "tanh"


def test_snap_puts_integers_on_grid():
    s = SearchSpace([Dimension("u", KIND_INT, 0, 4)])
    assert s.snap(np.array([0.3]))[0] == pytest.approx(0.25)


@pytest.mark.parametrize("args", [("a", KIND_LINEAR, 1.0, 1.0), ("a", KIND_LOG, 0.0, 1.0),
                                  ("a", "weird", 0, 1), ("a", KIND_CAT)])
def test_dimension_validation(args):
    with pytest.raises(InvalidArgument):
        Dimension(*args)


def test_space_roundtrip_and_uniqueness():
    s = SearchSpace([Dimension("lr", KIND_LOG, 1e-5, 1e-2), Dimension("u", KIND_INT, 8, 64)])
    assert SearchSpace.from_dict(s.to_dict()) == s
    with pytest.raises(InvalidArgument):
        SearchSpace([Dimension("a", KIND_LINEAR), Dimension("a", KIND_LINEAR)])


def test_observation_outside_box():
    with pytest.raises(InvalidArgument):
        Observation([1.5], 0.2)


# GP

def test_single_observation_interpolates():
    s = gp_fit([Observation([0.4], 0.7)], EXACT)
    assert gp_posterior(s, [0.4])[0] == pytest.approx(0.7, abs=1e-9)


def test_duplicates_merged():
    a = gp_fit([Observation([0.4], 0.7)], EXACT)
    b = gp_fit([Observation([0.4], 0.7), Observation([0.4], 0.7)], EXACT)
    assert a.X.shape == b.X.shape == (1, 1)
    for x in (0.1, 0.5, 0.9):
        assert gp_posterior(a, [x]) == gp_posterior(b, [x])


def test_five_points_against_explicit_inverse(rng):
    X = rng.random((5, 2))
    y = rng.random(5)
    k = Kernel(length_scale=0.2, noise_var=1e-6)
    s = gp_fit([Observation(x, v) for x, v in zip(X, y)], k)
    sf2 = np.var(y)
    K = np.array([[_se(a, b, sf2=sf2) for b in X] for a in X]) + 1e-6 * np.eye(5)
    Kinv = np.linalg.inv(K)
    for i in range(5):
        ks = np.array([_se(X[i], b, sf2=sf2) for b in X])
        oracle = ks @ Kinv @ y
        mean, _ = gp_posterior(s, X[i])
        assert mean == pytest.approx(oracle, abs=1e-9)
        assert abs(mean - y[i]) <= math.sqrt(1e-6)


def test_two_point_closed_form():
    x1, x2, y1, y2 = 0.2, 0.45, 0.6, 0.9
    s = gp_fit([Observation([x1], y1), Observation([x2], y2)], EXACT)
    k12 = _se(x1, x2)
    det = 1 - k12 * k12
    for xq in (0.0, 0.3, 0.7):
        a, b = _se(xq, x1), _se(xq, x2)
        # [a b] K^-1 with K = [[1, k12], [k12, 1]]
        w1 = (a - b * k12) / det
        w2 = (b - a * k12) / det
        mean = w1 * y1 + w2 * y2
        var = 1 - (a * w1 + b * w2)
        m, sd = gp_posterior(s, [xq])
        assert abs(m - mean) < 1e-10
        assert abs(sd - math.sqrt(var)) < 1e-10


def test_prior_recovery_far_away():
    s = gp_fit([Observation([0.0], 0.3), Observation([0.1], 0.8)], Kernel(noise_var=1e-6))
    m, sd = gp_posterior(s, [10 * 0.2 + 0.1])
    assert abs(m) < 1e-6
    assert abs(sd - math.sqrt(s.signal_var)) < 1e-6


def test_prior_mean_option():
    s = gp_fit([Observation([0.0], 0.3)], Kernel(signal_var=1.0, prior_mean=0.9))
    # 5 length-scales away the residual correlation is exp(-12.5)
    assert gp_posterior(s, [1.0])[0] == pytest.approx(0.9, abs=1e-5)


def test_std_zero_at_training_point():
    s = gp_fit([Observation([0.3], 0.5), Observation([0.8], 0.1)], EXACT)
    assert gp_posterior(s, [0.3])[1] <= 1e-6


def test_jitter_rescues_near_duplicates():
    obs = [Observation([0.5], 0.1), Observation([0.5 + 1e-13], 0.2)]
    s = gp_fit([Observation([0.5], 0.1), Observation([0.5 + 2e-12], 0.2)], EXACT)
    assert s.jitter > 0
    assert gp_fit(obs, EXACT).X.shape[0] == 1


def test_non_pd_raises_numeric_error():
    obs = [Observation([0.2], 0.1), Observation([0.6], 0.2)]
    with pytest.raises(NumericError):
        gp_fit(obs, Kernel(signal_var=-1.0, noise_var=0.0))


def test_gp_needs_observation():
    with pytest.raises(InvalidArgument):
        gp_fit([])


# EI

def test_ei_examples():
    assert ei_from_moments([0.4], [0.0], 0.5)[0] == 0.0
    assert ei_from_moments([0.5], [1.0], 0.5)[0] == pytest.approx(0.398942, abs=1e-6)
    assert ei_from_moments([10.5], [1e-6], 0.5)[0] == pytest.approx(10.0, abs=1e-5)
    assert ei_from_moments([0.9], [0.0], 0.5)[0] == pytest.approx(0.4)


def test_expected_improvement_uses_posterior():
    s = gp_fit([Observation([0.2], 0.5), Observation([0.7], 0.8)], EXACT)
    mu, sd = gp_posterior(s, [0.45])
    assert expected_improvement(s, [0.45], 0.8) == pytest.approx(
        float(ei_from_moments([mu], [sd], 0.8)[0]))


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5), st.floats(1e-6, 10), st.floats(1e-6, 10), st.floats(-5, 5))
def test_ei_nonnegative_and_monotone_in_sigma(mu, s1, s2, y_best):
    e1, e2 = ei_from_moments([mu, mu], [min(s1, s2), max(s1, s2)], y_best)
    assert e1 >= 0 and e2 >= 0
    if mu < y_best:
        assert e2 >= e1


# proposals

def test_proposal_moves_away_from_low_observation():
    s = gp_fit([Observation([0.5], -1.0)], Kernel(signal_var=1.0, noise_var=1e-6))
    x = propose_next(s, UNIT, seed=3)
    grid = np.linspace(0, 1, 2001)[:, None]
    mu, sd = gp_posterior_many(s, grid)
    ei = ei_from_moments(mu, sd, s.y_best)
    best_grid = grid[np.argmax(ei), 0]
    assert abs(x[0] - 0.5) > 0.2
    assert abs(best_grid - 0.5) > 0.2
    assert float(ei_from_moments(*gp_posterior_many(s, x[None]), s.y_best)[0]) >= ei.max() - 1e-9


def test_degenerate_ei_falls_back_to_random():
    s = gp_fit([Observation([0.5], 0.4), Observation([0.1], 0.4)], Kernel(noise_var=1e-6))
    assert s.signal_var == 0.0
    x = propose_next(s, UNIT, seed=7)
    np.testing.assert_array_equal(x, UNIT.snap(np.random.default_rng([7, 1]).random(1)))


def test_proposal_deterministic():
    s = gp_fit([Observation([0.1], 0.2), Observation([0.9], 0.5)], Kernel())
    assert np.array_equal(propose_next(s, UNIT, 5), propose_next(s, UNIT, 5))


def test_proposal_snaps_integer_dims():
    sp = SearchSpace([Dimension("u", KIND_INT, 0, 10), Dimension("x", KIND_LINEAR)])
    s = gp_fit([Observation([0.1, 0.1], 0.2), Observation([0.9, 0.4], 0.5)], Kernel())
    p = propose_next(s, sp, 1)
    assert p[0] * 10 == pytest.approx(round(p[0] * 10))


# tune

def quad(v):
    return -(v["x"] - 0.3) ** 2


def test_tune_finds_quadratic_optimum():
    best, trace = tune(quad, UNIT, budget=20, init=5, seed=0)
    assert abs(best["x"] - 0.3) < 0.05
    assert len(trace) == 20
    assert [t.phase for t in trace.trials] == ["init"] * 5 + ["smbo"] * 15


def test_budget_equals_init_is_random_search():
    best, trace = tune(quad, UNIT, budget=5, init=5, seed=2)
    assert best == max(trace.trials, key=lambda t: t.objective).values
    assert all(t.phase == "init" for t in trace.trials)


def test_constant_objective():
    best, trace = tune(lambda v: 1.0, UNIT, budget=8, init=3, seed=1)
    assert len(trace) == 8 and best == trace.trials[0].values


def test_failed_trials_recorded():
    def f(v):
        return float("nan") if v["x"] > 0.5 else -abs(v["x"] - 0.2)

    best, trace = tune(f, UNIT, budget=10, init=4, seed=0)
    failed = [t for t in trace.trials if t.status == "failed"]
    assert failed and all(t.values["x"] > 0.5 for t in failed)
    assert best["x"] <= 0.5
    assert "failed" in trace.to_csv()


def test_trace_deterministic_and_prefix_monotone():
    _, t1 = tune(quad, UNIT, budget=12, init=4, seed=9)
    _, t2 = tune(quad, UNIT, budget=12, init=4, seed=9)
    assert t1.to_csv() == t2.to_csv()
    bests = []
    for b in (4, 6, 9, 12):
        _, t = tune(quad, UNIT, budget=b, init=4, seed=9)
        bests.append(t.best().objective)
    assert bests == sorted(bests)


def test_trace_csv_header():
    sp = SearchSpace([Dimension("lr", KIND_LOG, 1e-5, 1e-2), Dimension("u", KIND_INT, 8, 64)])
    _, t = tune(lambda v: -abs(math.log10(v["lr"]) + 3), sp, budget=4, init=2, seed=0)
    assert t.to_csv().splitlines()[0] == "iter,lr,u,objective,status"


def test_tune_preconditions():
    with pytest.raises(InvalidArgument):
        tune(quad, UNIT, budget=3, init=4)
    with pytest.raises(InvalidArgument):
        tune(quad, UNIT, budget=5, init=1)
