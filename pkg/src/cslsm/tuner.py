"""Bayesian optimisation of reconstruction parameters.

Maximises an objective (reconstruction PSNR, i.e. minimises negative PSNR)
over a box with optional log-scaled axes:

1. ``ceil(budget / 4)`` Latin-hypercube points (at least 3, so the surrogate
   never starts from fewer) in normalised coordinates.
2. Gaussian-process surrogate (squared-exponential kernel, per-axis length
   scale chosen from {0.1, 0.3, 1.0} by marginal likelihood, noise 1e-6) and
   expected improvement over 1024 fresh Latin-hypercube candidates. If the EI
   winner is within L-inf distance 0.02 of an evaluated point, the candidate
   with the largest posterior variance is evaluated instead.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.stats import norm, qmc

from .errors import ConfigError

LENGTH_SCALES = (0.1, 0.3, 1.0)
GP_NOISE = 1e-6
N_CANDIDATES = 1024
MIN_SEPARATION = 0.02
MIN_INITIAL = 3


@dataclass(frozen=True)
class Dimension:
    name: str
    low: float
    high: float
    log: bool = False

    def __post_init__(self):
        if not self.low < self.high:
            raise ConfigError(f"{self.name}: lower bound must be < upper bound")
        if self.log and self.low <= 0:
            raise ConfigError(f"{self.name}: log-scaled bounds must be positive")

    def from_unit(self, t):
        t = min(max(float(t), 0.0), 1.0)
        if self.log:
            lo, hi = math.log10(self.low), math.log10(self.high)
            x = 10.0 ** (lo + t * (hi - lo))
        else:
            x = self.low + t * (self.high - self.low)
        return min(max(x, self.low), self.high)

    def to_unit(self, x):
        if self.log:
            lo, hi = math.log10(self.low), math.log10(self.high)
            return (math.log10(x) - lo) / (hi - lo)
        return (x - self.low) / (self.high - self.low)


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple
    budget: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.dims:
            raise ConfigError("search space needs at least one dimension")
        if self.budget < 3:
            raise ConfigError("budget must be >= 3")

    @classmethod
    def for_method(cls, kind, temporal, budget=50, seed=0):
        """Default bounds: lam log [1e-3, 1e2] (linear [1, 50] for BM3D),
        rho and gamma log [1e-3, 1]."""
        lam = Dimension("lambda", 1.0, 50.0) if kind == "bm3d" else Dimension("lambda", 1e-3, 1e2, log=True)
        dims = [lam, Dimension("rho", 1e-3, 1.0, log=True)]
        if temporal:
            dims.append(Dimension("gamma", 1e-3, 1.0, log=True))
        return cls(tuple(dims), budget, seed)

    def decode(self, unit_point):
        return {d.name: d.from_unit(t) for d, t in zip(self.dims, unit_point)}


@dataclass
class TraceEntry:
    params: dict
    value: float
    seconds: float


@dataclass
class TuneResult:
    best_params: dict
    best_value: float
    trace: list = field(default_factory=list)

    @property
    def best_psnr_db(self):
        return self.best_value

    def best_so_far(self):
        return np.maximum.accumulate([t.value for t in self.trace])


def _sq_dists(a, b, scales):
    a = a / scales
    b = b / scales
    return np.maximum((a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2 * a @ b.T, 0.0)


class _GP:
    def __init__(self, X, y):
        self.X = X
        self.mean = y.mean()
        self.std = y.std() or 1.0
        z = (y - self.mean) / self.std
        best = None
        for scales in itertools.product(LENGTH_SCALES, repeat=X.shape[1]):
            scales = np.array(scales)
            fit = self._fit(X, z, scales)
            if fit is not None and (best is None or fit[0] > best[0]):
                best = fit
        _, self.scales, self.chol, self.alpha = best

    @staticmethod
    def _fit(X, z, scales):
        K = np.exp(-0.5 * _sq_dists(X, X, scales))
        jitter = GP_NOISE
        for _ in range(6):
            try:
                chol = linalg.cho_factor(K + jitter * np.eye(len(X)), lower=True)
                break
            except linalg.LinAlgError:
                jitter *= 10
        else:
            return None
        alpha = linalg.cho_solve(chol, z)
        loglik = -0.5 * z @ alpha - np.log(np.diag(chol[0])).sum()
        return loglik, scales, chol, alpha

    def predict(self, Xs):
        Ks = np.exp(-0.5 * _sq_dists(Xs, self.X, self.scales))
        mu = Ks @ self.alpha
        v = linalg.solve_triangular(self.chol[0], Ks.T, lower=True)
        var = np.maximum(1.0 - (v * v).sum(0), 1e-12)
        return mu * self.std + self.mean, var * self.std ** 2


def expected_improvement(mu, var, best):
    sd = np.sqrt(var)
    imp = mu - best
    z = imp / sd
    return imp * norm.cdf(z) + sd * norm.pdf(z)


def tune(objective, space, callback=None):
    """Maximise ``objective(params_dict)`` within ``space``; deterministic in its seed.

    Non-finite objective values are recorded as ``-inf`` and the search goes on.
    """
    rng = np.random.default_rng(space.seed)
    d = len(space.dims)
    n_init = min(space.budget, max(MIN_INITIAL, math.ceil(space.budget / 4)))
    unit_points, values, trace = [], [], []

    def run(t):
        params = space.decode(t)
        start = time.perf_counter()
        val = float(objective(params))
        if not math.isfinite(val):
            val = -math.inf
        trace.append(TraceEntry(params, val, time.perf_counter() - start))
        # store the clipped unit coordinates actually evaluated
        unit_points.append(np.array([dim.to_unit(params[dim.name]) for dim in space.dims]))
        values.append(val)
        if callback is not None:
            callback(len(trace), trace[-1])

    for t in qmc.LatinHypercube(d=d, seed=rng).random(n_init):
        run(t)
    while len(trace) < space.budget:
        X = np.array(unit_points)
        y = np.array(values)
        cand = qmc.LatinHypercube(d=d, seed=rng).random(N_CANDIDATES)
        finite = np.isfinite(y)
        if not finite.any():
            run(cand[0])
            continue
        y = np.where(finite, y, y[finite].min() - 1.0)
        gp = _GP(X, y)
        mu, var = gp.predict(cand)
        pick = int(np.argmax(expected_improvement(mu, var, y.max())))
        if np.abs(X - cand[pick]).max(axis=1).min() < MIN_SEPARATION:
            pick = int(np.argmax(var))
        run(cand[pick])
    best = max(range(len(trace)), key=lambda i: trace[i].value)
    return TuneResult(dict(trace[best].params), trace[best].value, trace)
