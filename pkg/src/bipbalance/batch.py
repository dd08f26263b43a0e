"""Per-batch balancing by coordinate descent on the LP dual.

The capacitated routing problem

    max  sum_ij s_ij x_ij
    s.t. sum_j x_ij <= k,   sum_i x_ij <= kn/m,   x_ij in {0, 1}

has an LP relaxation whose dual, after eliminating the slack variables
r_ij = max(s_ij - p_i - q_j, 0), is the piecewise-linear convex function

    D(p, q) = k sum_i p_i + (kn/m) sum_j q_j + sum_ij max(s_ij - p_i - q_j, 0)

over p, q >= 0.  Minimizing D exactly in p (q fixed) sets each p_i to the
(k+1)-th largest of s_i - q; minimizing in q sets each q_j to the
(floor(kn/m)+1)-th largest of s_j - p.  The per-expert q then shifts the
top-k order of the scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .routing import (
    Assignment,
    BalanceConfig,
    StructureError,
    as_scores,
    build_gates,
    select_topk_batch,
)


@dataclass
class DualState:
    """Dual memory of one gate.

    ``q`` persists across batches; ``p`` belongs to the last batch only and
    is kept for diagnostics.
    """

    q: np.ndarray
    p: np.ndarray | None = None
    last_dual_objective: float | None = None
    objective_trace: list[float] = field(default_factory=list)

    @classmethod
    def zeros(cls, m: int) -> DualState:
        return cls(q=np.zeros(m))


def kth_largest(values: np.ndarray, r: int, axis: int = -1) -> np.ndarray:
    """r-th largest entry (duplicates counted) along ``axis``, r >= 1."""
    size = values.shape[axis]
    if not 1 <= r <= size:
        raise ValueError(f"rank {r} out of range for {size} values")
    idx = size - r
    return np.take(np.partition(values, idx, axis=axis), idx, axis=axis)


def update_p(scores, q, k: int) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    q = np.asarray(q, dtype=float)
    if q.shape != (s.shape[1],):
        raise StructureError(f"q has shape {q.shape}, expected ({s.shape[1]},)")
    return np.maximum(0.0, kth_largest(s - q, k + 1, axis=1))


def update_q(scores, p, cfg: BalanceConfig) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    p = np.asarray(p, dtype=float)
    if p.shape != (s.shape[0],):
        raise StructureError(f"p has shape {p.shape}, expected ({s.shape[0]},)")
    return np.maximum(0.0, kth_largest(s - p[:, None], cfg.expert_rank, axis=0))


def dual_objective(scores, p, q, cfg: BalanceConfig) -> float:
    s = np.asarray(scores, dtype=float)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    slack = np.maximum(s - p[:, None] - q[None, :], 0.0).sum()
    return float(cfg.k * p.sum() + cfg.mean_load * q.sum() + slack)


def balance_batch(
    scores, state: DualState, cfg: BalanceConfig, *, track: bool = False
) -> tuple[Assignment, DualState]:
    """Route one batch: ``cfg.iters`` rounds of (p, q) updates, then top-k of s - q.

    With ``track=True`` the returned state's ``objective_trace`` lists the
    dual objective at p = 0 and after every single p or q update.
    """
    s = as_scores(scores, cfg.m)
    if s.shape[0] != cfg.n:
        raise StructureError(f"batch has {s.shape[0]} tokens, config says n={cfg.n}")
    q = np.asarray(state.q, dtype=float)
    if q.shape != (cfg.m,):
        raise StructureError(f"dual q has shape {q.shape}, expected ({cfg.m},)")

    trace: list[float] = []
    p = np.zeros(cfg.n)
    if track:
        trace.append(dual_objective(s, p, q, cfg))
    for _ in range(cfg.iters):
        p = update_p(s, q, cfg.k)
        if track:
            trace.append(dual_objective(s, p, q, cfg))
        q = update_q(s, p, cfg)
        if track:
            trace.append(dual_objective(s, p, q, cfg))

    selected = select_topk_batch(s, q, cfg.k)
    new_state = DualState(
        q=q,
        p=p,
        last_dual_objective=trace[-1] if track else dual_objective(s, p, q, cfg),
        objective_trace=trace,
    )
    return build_gates(s, selected), new_state
