"""Retention probability bounds for the sketch and their Monte-Carlo check."""
import math
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .errors import DomainError
from .sketch import HotSketch, SketchConfig


def theorem1_bound(gamma, w, c):
    """Distribution-free lower bound on keeping a feature of mass share ``gamma``.

    ``1 - (1 - gamma) / ((c - 1) * gamma * w)``, clamped to [0, 1].
    """
    if c < 2:
        raise DomainError("bound is degenerate for c < 2")
    if not 0 < gamma <= 1:
        raise DomainError("gamma must lie in (0, 1]")
    if w < 1:
        raise DomainError("w must be >= 1")
    p = 1.0 - (1.0 - gamma) / ((c - 1) * gamma * w)
    return min(1.0, max(0.0, p))


def _zipf_objective(log_eta, gamma, z, w, c):
    # 3**-eta * (1 - eta / ((c-1) gamma (eta w)**z)), evaluated in log space
    eta = np.exp(log_eta)
    log_t = (1.0 - z) * log_eta - (math.log((c - 1) * gamma) + z * math.log(w))
    return np.exp(-eta * math.log(3.0)) * (1.0 - np.exp(log_t))


def theorem3_bound(gamma, z, w, c, grid_points=2000, eta_range=(1e-9, 1e3), tol=1e-12):
    """Zipf-aware lower bound: supremum over eta of the per-eta bound.

    ``eta * w`` is the number of hottest features assumed to stay clear of
    the tracked feature's bucket, so the search runs over ``eta >= 1 / w``
    (at least one such feature). Found by a log-spaced grid search followed
    by golden-section refinement around the best grid point. Clamped to
    [0, 1].
    """
    if z <= 1:
        raise DomainError("requires z > 1")
    if c < 2:
        raise DomainError("bound is degenerate for c < 2")
    if not 0 < gamma <= 1 or w < 1:
        raise DomainError("need gamma in (0, 1] and w >= 1")
    lo, hi = math.log(max(eta_range[0], 1.0 / w)), math.log(eta_range[1])
    grid = np.linspace(lo, hi, grid_points)
    vals = _zipf_objective(grid, gamma, z, w, c)
    i = int(np.argmax(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid_points - 1)]
    f = lambda x: float(_zipf_objective(np.float64(x), gamma, z, w, c))
    invphi = (math.sqrt(5) - 1) / 2
    x1, x2 = b - invphi * (b - a), a + invphi * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = f(x1)
    best = max(float(vals[i]), f1, f2)
    return min(1.0, max(0.0, best))


class OptimalC(NamedTuple):
    c_star: float
    floor: int
    ceil: int


def optimal_c(z):
    """Slots per bucket maximizing the Zipf bound at fixed ``c * w``: 1 + 1/(z-1)."""
    zq = Fraction(str(z)) if isinstance(z, float) else Fraction(z)
    if zq <= 1:
        raise DomainError("requires z > 1")
    c = 1 + 1 / (zq - 1)
    return OptimalC(float(c), math.floor(c), math.ceil(c))


def retention_trial(gamma, w, c, events, others, rng):
    """One randomized run: does a planted feature holding ``gamma`` of all
    events survive in a sketch with fresh hash seed and shuffled order?"""
    planted = int(round(gamma * events))
    stream = np.concatenate([np.zeros(planted, dtype=np.uint64),
                             rng.integers(1, others + 1, size=events - planted, dtype=np.uint64)])
    rng.shuffle(stream)
    sk = HotSketch(SketchConfig(w, c, seed=int(rng.integers(0, 2**63))))
    sk.insert_many(stream, np.ones(len(stream)))
    return 0 in sk


class RetentionEstimate(NamedTuple):
    gamma: float
    w: int
    c: int
    trials: int
    retained: int
    bound: float

    @property
    def frequency(self):
        return self.retained / self.trials

    @property
    def stderr(self):
        p = self.frequency
        return math.sqrt(max(p * (1 - p), 0.0) / self.trials)


def monte_carlo_retention(gamma, w, c, trials=1000, events=None, others=None, seed=0):
    """Empirical retention frequency of a planted feature with mass share gamma.

    The remaining mass is spread uniformly over ``others`` features
    (default ``4 * w * c`` so buckets overflow).
    """
    events = events or max(1000, 8 * w * c)
    others = others or 4 * w * c
    rng = np.random.default_rng([seed, int(gamma * 1e6), w, c])
    kept = sum(retention_trial(gamma, w, c, events, others, rng) for _ in range(trials))
    return RetentionEstimate(gamma, w, c, trials, int(kept), theorem1_bound(gamma, w, c))
