"""Gaussian-process Bayesian optimization with Expected Improvement.

All search dimensions are mapped to the unit interval; the surrogate works in
that normalized box. The objective is *maximized* (validation accuracy).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.stats import norm, qmc

from .errors import InvalidArgument, NumericError

KIND_LOG = "continuous-log"
KIND_LINEAR = "continuous-linear"
KIND_INT = "integer"
KIND_CAT = "categorical"


@dataclass(frozen=True)
class Dimension:
    name: str
    kind: str
    low: float = 0.0
    high: float = 1.0
    choices: tuple = ()

    def __post_init__(self):
        if self.kind == KIND_CAT:
            if len(self.choices) < 1:
                raise InvalidArgument(f"{self.name}: categorical dimension needs choices")
            return
        if self.kind not in (KIND_LOG, KIND_LINEAR, KIND_INT):
            raise InvalidArgument(f"{self.name}: unknown dimension kind {self.kind!r}")
        if not self.low < self.high:
            raise InvalidArgument(f"{self.name}: bounds must satisfy low < high")
        if self.kind == KIND_LOG and self.low <= 0:
            raise InvalidArgument(f"{self.name}: log-scaled bounds must be positive")

    def decode(self, u):
        u = min(1.0, max(0.0, float(u)))
        if self.kind == KIND_LOG:
            v = math.exp(math.log(self.low) + u * (math.log(self.high) - math.log(self.low)))
            return min(self.high, max(self.low, v))  # exp/log roundoff can overshoot
        if self.kind == KIND_LINEAR:
            return self.low + u * (self.high - self.low)
        if self.kind == KIND_INT:
            return int(round(self.low + u * (self.high - self.low)))
        k = min(len(self.choices) - 1, int(u * len(self.choices)))
        return self.choices[k]

    def encode(self, v):
        if self.kind == KIND_LOG:
            return (math.log(v) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))
        if self.kind in (KIND_LINEAR, KIND_INT):
            return (v - self.low) / (self.high - self.low)
        k = self.choices.index(v)
        return (k + 0.5) / len(self.choices)

    def to_dict(self):
        d = {"name": self.name, "kind": self.kind}
        if self.kind == KIND_CAT:
            d["choices"] = list(self.choices)
        else:
            d["low"], d["high"] = self.low, self.high
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], d["kind"], float(d.get("low", 0.0)), float(d.get("high", 1.0)),
                   tuple(d.get("choices", ())))


@dataclass
class SearchSpace:
    dimensions: list

    def __post_init__(self):
        if not self.dimensions:
            raise InvalidArgument("search space needs at least one dimension")
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise InvalidArgument("dimension names must be unique")

    @property
    def ndim(self):
        return len(self.dimensions)

    def decode(self, point):
        return {d.name: d.decode(u) for d, u in zip(self.dimensions, point)}

    def encode(self, values):
        return np.array([d.encode(values[d.name]) for d in self.dimensions])

    def snap(self, point):
        """Round integer/categorical coordinates onto their grid."""
        return np.array([d.encode(d.decode(u)) for d, u in zip(self.dimensions, point)])

    def to_dict(self):
        return {"dimensions": [d.to_dict() for d in self.dimensions]}

    @classmethod
    def from_dict(cls, d):
        return cls([Dimension.from_dict(x) for x in d["dimensions"]])


@dataclass
class Observation:
    point: np.ndarray
    objective: float

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=np.float64).ravel()
        if np.any(self.point < -1e-12) or np.any(self.point > 1 + 1e-12):
            raise InvalidArgument("observation point outside the unit box")


@dataclass
class Kernel:
    """Squared-exponential kernel settings.

    ``signal_var=None`` uses the variance of the observed objectives.
    ``prior_mean`` is the constant GP prior mean (0 gives the zero-mean prior).
    """

    length_scale: float = 0.2
    signal_var: float | None = None
    noise_var: float = 1e-6
    prior_mean: float = 0.0


@dataclass
class GpSurrogate:
    X: np.ndarray
    y: np.ndarray
    length_scale: np.ndarray
    signal_var: float
    noise_var: float
    prior_mean: float
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0

    def k(self, A, B):
        d = (A[:, None, :] - B[None, :, :]) / self.length_scale
        return self.signal_var * np.exp(-0.5 * np.sum(d * d, axis=-1))

    @property
    def y_best(self):
        return float(np.max(self.y))


def _merge_duplicates(obs):
    pts, vals = [], []
    for o in obs:
        for k, p in enumerate(pts):
            if np.allclose(p, o.point, rtol=0, atol=1e-12):
                vals[k].append(o.objective)
                break
        else:
            pts.append(o.point)
            vals.append([o.objective])
    return np.array(pts), np.array([float(np.mean(v)) for v in vals])


def gp_fit(obs, kernel=None):
    kernel = kernel or Kernel()
    if len(obs) < 1:
        raise InvalidArgument("gp_fit needs at least one observation")
    X, y = _merge_duplicates(obs)
    d = X.shape[1]
    ls = np.broadcast_to(np.asarray(kernel.length_scale, dtype=np.float64), (d,)).copy()
    sf2 = float(np.var(y)) if kernel.signal_var is None else float(kernel.signal_var)
    s = GpSurrogate(X, y, ls, sf2, float(kernel.noise_var), float(kernel.prior_mean),
                    np.zeros((0, 0)), np.zeros(0))
    K = s.k(X, X) + s.noise_var * np.eye(len(X))
    jitter = 0.0
    while True:
        try:
            L = linalg.cholesky(K + jitter * np.eye(len(X)), lower=True)
            break
        except linalg.LinAlgError:
            jitter = 1e-10 if jitter == 0.0 else jitter * 10
            if jitter > 1e-4 * (1 + 1e-9):
                raise NumericError("kernel matrix is not positive definite even with jitter") from None
    s.chol = L
    s.jitter = jitter
    s.alpha = linalg.cho_solve((L, True), y - s.prior_mean)
    return s


def gp_posterior_many(s, Xq):
    Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
    Ks = s.k(Xq, s.X)
    mean = s.prior_mean + Ks @ s.alpha
    v = linalg.solve_triangular(s.chol, Ks.T, lower=True)
    var = s.signal_var - np.sum(v * v, axis=0)
    return mean, np.sqrt(np.maximum(var, 0.0))


def gp_posterior(s, x):
    """Posterior ``(mean, std)`` at one normalized point."""
    m, sd = gp_posterior_many(s, np.asarray(x, dtype=np.float64)[None, :])
    return float(m[0]), float(sd[0])


def ei_from_moments(mu, sigma, y_best):
    """Closed-form EI for maximization; ``max(0, mu - y_best)`` where sigma = 0."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    imp = mu - y_best
    out = np.maximum(imp, 0.0)
    ok = sigma > 0
    z = imp[ok] / sigma[ok]
    out[ok] = imp[ok] * norm.cdf(z) + sigma[ok] * norm.pdf(z)
    return np.maximum(out, 0.0)


def expected_improvement(s, x, y_best):
    mu, sd = gp_posterior(s, x)
    return float(ei_from_moments(np.array([mu]), np.array([sd]), y_best)[0])


def propose_next(s, space, seed, n_candidates=2048, n_refine=8):
    """Point maximizing EI over scrambled-Sobol candidates plus local refinement."""
    d = space.ndim
    cand = qmc.Sobol(d, scramble=True, seed=np.random.default_rng(seed)).random(n_candidates)
    y_best = s.y_best
    mu, sd = gp_posterior_many(s, cand)
    ei = ei_from_moments(mu, sd, y_best)
    if not np.any(ei > 0) or np.ptp(ei) == 0.0:
        return space.snap(np.random.default_rng([seed, 1]).random(d))
    best_x, best_v = cand[int(np.argmax(ei))], float(np.max(ei))
    top = np.argsort(-ei, kind="stable")[:n_refine]

    def neg_ei(x):
        m, v = gp_posterior_many(s, x[None, :])
        return -float(ei_from_moments(m, v, y_best)[0])

    for i in top:
        res = optimize.minimize(neg_ei, cand[i], method="L-BFGS-B", bounds=[(0.0, 1.0)] * d,
                                options={"maxiter": 50})
        if np.isfinite(res.fun) and -res.fun > best_v:
            best_v, best_x = -float(res.fun), np.clip(res.x, 0.0, 1.0)
    return space.snap(best_x)


@dataclass
class Trial:
    iteration: int
    point: np.ndarray
    values: dict
    objective: float
    status: str  # "ok" | "failed"
    phase: str   # "init" | "smbo"


@dataclass
class TuneTrace:
    space: SearchSpace
    trials: list = field(default_factory=list)

    def __len__(self):
        return len(self.trials)

    def ok(self):
        return [t for t in self.trials if t.status == "ok"]

    def best(self):
        ok = self.ok()
        if not ok:
            return None
        best = ok[0]
        for t in ok[1:]:
            if t.objective > best.objective:
                best = t
        return best

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = [d.name for d in self.space.dimensions]
        w.writerow(["iter", *names, "objective", "status"])
        for t in self.trials:
            w.writerow([t.iteration, *(t.values[n] for n in names), repr(t.objective), t.status])
        return buf.getvalue()


def tune(objective, space, budget=25, init=5, seed=0, kernel=None, n_candidates=2048):
    """Maximize ``objective(values_dict)`` over ``space``.

    Evaluates ``init`` scrambled-Halton points, then ``budget - init`` GP/EI
    proposals. Returns ``(best_values, trace)``; ties go to the earliest trial.
    Trials whose objective is not finite are marked failed and left out of
    the surrogate.
    """
    if init < 2 or budget < init:
        raise InvalidArgument("require budget >= init >= 2")
    trace = TuneTrace(space)
    obs = []
    starts = qmc.Halton(space.ndim, scramble=True, seed=np.random.default_rng([seed, 0])).random(init)

    def run(it, point, phase):
        values = space.decode(point)
        try:
            val = float(objective(values))
        except (ArithmeticError, ValueError):
            val = float("nan")
        ok = math.isfinite(val)
        trace.trials.append(Trial(it, point, values, val, "ok" if ok else "failed", phase))
        if ok:
            obs.append(Observation(point, val))

    for it in range(init):
        run(it, space.snap(starts[it]), "init")
    for it in range(init, budget):
        if obs:
            s = gp_fit(obs, kernel)
            point = propose_next(s, space, seed=[seed, it], n_candidates=n_candidates)
        else:
            point = space.snap(np.random.default_rng([seed, it]).random(space.ndim))
        run(it, point, "smbo")
    best = trace.best()
    return (best.values if best else None), trace
