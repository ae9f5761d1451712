"""Importance score deltas fed to the sketch."""
from typing import NamedTuple

import numpy as np

from .errors import NonFinite


class ImportanceSignal(NamedTuple):
    feature: int
    grad_l2: float


def score_from_gradient(grad_vector) -> float:
    """L2 norm of one feature's embedding gradient."""
    g = np.asarray(grad_vector, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NonFinite("gradient contains NaN or inf")
    return float(np.linalg.norm(g))


def scores_from_gradients(grads):
    """Row-wise L2 norms of a ``(B, d)`` gradient batch."""
    g = np.asarray(grads, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NonFinite("gradient contains NaN or inf")
    return np.sqrt(np.einsum("ij,ij->i", g, g))


def score_from_frequency(count_delta) -> float:
    """Frequency ablation: one unit of score per occurrence."""
    return float(count_delta)


def signals(features, grads):
    """Per-occurrence importance signals for a batch, in batch order."""
    norms = scores_from_gradients(grads)
    return [ImportanceSignal(int(f), float(s)) for f, s in zip(features, norms)]
