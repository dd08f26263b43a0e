"""Load-balance metrics."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .routing import Assignment


def max_vio(loads) -> float:
    """Maximum relative overload: max_j load_j / mean_load - 1."""
    loads = np.asarray(loads, dtype=float)
    if loads.size == 0 or loads.sum() <= 0:
        raise ValueError("max_vio is undefined for a batch with no routed tokens")
    return float(loads.max() / loads.mean() - 1.0)


def avg_sup_maxvio(series: Sequence[float]) -> tuple[float, float]:
    """Mean and maximum of a per-step MaxVio series."""
    values = np.asarray(series, dtype=float)
    if values.size == 0:
        raise ValueError("empty MaxVio series")
    return float(values.mean()), float(values.max())


def aux_loss_value(scores, assignment: Assignment, alpha: float) -> float:
    """Auxiliary balance loss alpha * sum_j f_j P_j, evaluated as a number.

    f_j is the fraction of routed slots taken by expert j scaled by m,
    P_j the mean score of expert j over the batch.
    """
    s = np.asarray(scores, dtype=float)
    n, m = s.shape
    k = assignment.k
    f = assignment.loads() * (m / (k * n))
    P = s.mean(axis=0)
    return float(alpha * np.dot(f, P))
