"""Shared routing types and tie-aware top-k selection.

Every router in the package (greedy, loss-free bias, batch and online
dual balancing) reduces to "pick the k largest of scores minus some
per-expert offset".  The selection here is deterministic: values at the
selection boundary that tie (within ``TIE_TOL``) go to the expert with the
smaller load so far in the current batch, then to the smaller index.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, floor

import numpy as np

# Boundary ties are detected up to this (relative) tolerance.  Dual offsets
# are themselves differences of scores, so exact ties at a dual optimum come
# out of float arithmetic a few ulps apart.
TIE_TOL = 1e-12

# Scores are clamped into [0, 1 - SCORE_EPS] on ingestion.
SCORE_EPS = 2.0**-32


class ConfigError(ValueError):
    """Invalid configuration (k >= m, T < 1, bucket count < 1, ...)."""


class StructureError(ValueError):
    """Shape mismatch or out-of-range index."""


class ScoreError(ValueError):
    """Non-finite or out-of-domain routing scores."""


@dataclass(frozen=True)
class BalanceConfig:
    """Problem size for one gate.

    ``m`` experts, ``k`` experts per token, ``n`` tokens per batch and
    ``iters`` dual-update iterations per batch (``T``).
    """

    m: int
    k: int
    n: int
    iters: int = 4

    def __post_init__(self) -> None:
        if self.m < 2:
            raise ConfigError(f"need at least 2 experts, got m={self.m}")
        if not 1 <= self.k < self.m:
            raise ConfigError(f"need 1 <= k < m, got k={self.k}, m={self.m}")
        if self.n < 1:
            raise ConfigError(f"need n >= 1, got n={self.n}")
        if self.iters < 1:
            raise ConfigError(f"need T >= 1, got T={self.iters}")

    @property
    def mean_load(self) -> float:
        """Balanced load kn/m (may be fractional)."""
        return self.k * self.n / self.m

    @property
    def integral(self) -> bool:
        return (self.k * self.n) % self.m == 0

    @property
    def capacity(self) -> int:
        """Per-expert token budget, ceil(kn/m)."""
        return ceil(self.k * self.n / self.m)

    @property
    def expert_rank(self) -> int:
        """Rank r of the order statistic used for expert duals: floor(kn/m) + 1."""
        return floor(self.k * self.n / self.m) + 1

    def with_n(self, n: int) -> BalanceConfig:
        return BalanceConfig(m=self.m, k=self.k, n=n, iters=self.iters)


@dataclass
class Assignment:
    """Per-token expert choices and the gate values that go with them.

    ``selected[i]`` holds the k expert indices of token ``i``;
    ``gates[i, t]`` is the raw score of token ``i`` for ``selected[i, t]``.
    """

    selected: np.ndarray  # (n, k) int
    gates: np.ndarray  # (n, k) float
    m: int

    @property
    def n(self) -> int:
        return self.selected.shape[0]

    @property
    def k(self) -> int:
        return self.selected.shape[1]

    def dense_gates(self) -> np.ndarray:
        """Gate matrix g of shape (n, m), zero on unselected pairs."""
        g = np.zeros((self.n, self.m), dtype=float)
        np.put_along_axis(g, self.selected, self.gates, axis=1)
        return g

    def mask(self) -> np.ndarray:
        """Binary decision matrix x of shape (n, m)."""
        x = np.zeros((self.n, self.m), dtype=np.int64)
        np.put_along_axis(x, self.selected, 1, axis=1)
        return x

    def loads(self) -> np.ndarray:
        return np.bincount(self.selected.ravel(), minlength=self.m)

    def total_score(self) -> float:
        return float(self.gates.sum())


def as_scores(scores, m: int | None = None, *, clamp: bool = False) -> np.ndarray:
    """Validate a score matrix (or a single row) and return a float64 2-D array."""
    s = np.array(scores, dtype=float, ndmin=2)
    if s.ndim != 2:
        raise StructureError(f"scores must be 2-D, got shape {s.shape}")
    if m is not None and s.shape[1] != m:
        raise StructureError(f"scores have {s.shape[1]} columns, expected m={m}")
    if not np.all(np.isfinite(s)):
        raise ScoreError("scores contain non-finite values")
    if clamp:
        s = clamp_scores(s)
    return s


def clamp_scores(scores: np.ndarray) -> np.ndarray:
    return np.clip(scores, 0.0, 1.0 - SCORE_EPS)


def _boundary_pick(values, loads, k):
    """Pick k indices from one row, breaking boundary ties by (load, index)."""
    # sorted() is stable under reverse=True, so equal values keep index order
    order = sorted(range(len(values)), key=values.__getitem__, reverse=True)
    kth = values[order[k - 1]]
    tol = TIE_TOL * max(1.0, abs(kth))
    if values[order[k]] < kth - tol:
        return order[:k]
    sure = [j for j in order if values[j] > kth + tol]
    tied = [j for j in range(len(values)) if abs(values[j] - kth) <= tol]
    tied.sort(key=lambda j: (loads[j], j))
    return sure + tied[: k - len(sure)]


def select_topk_batch(scores, offsets, k: int, loads_so_far=None) -> np.ndarray:
    """Top-k of ``scores - offsets`` for every row, processed in row order.

    ``loads_so_far`` is the per-expert load before the first row; the load
    used for tie-breaking on row ``i`` adds the choices made for rows
    ``0..i-1``.  Returns an (n, k) array of expert indices.
    """
    s = np.asarray(scores, dtype=float)
    if s.ndim != 2:
        raise StructureError(f"scores must be 2-D, got shape {s.shape}")
    n, m = s.shape
    if not 1 <= k < m:
        raise ConfigError(f"need 1 <= k < m, got k={k}, m={m}")
    off = np.broadcast_to(np.asarray(offsets, dtype=float), (m,))
    v = s - off
    if not np.all(np.isfinite(v)):
        raise ScoreError("adjusted scores contain non-finite values")

    order = np.argsort(-v, axis=1, kind="stable")
    ranked = np.take_along_axis(v, order[:, : k + 1], axis=1)
    kth = ranked[:, k - 1]
    tol = TIE_TOL * np.maximum(1.0, np.abs(kth))
    tie_rows = np.flatnonzero(ranked[:, k] >= kth - tol)
    selected = order[:, :k].copy()
    if tie_rows.size == 0:
        return selected

    base = np.zeros(m, dtype=np.int64)
    if loads_so_far is not None:
        base += np.asarray(loads_so_far, dtype=np.int64)
    fixed = np.zeros((n, m), dtype=np.int64)
    np.put_along_axis(fixed, selected, 1, axis=1)
    fixed[tie_rows] = 0
    before = np.cumsum(fixed, axis=0) - fixed
    tie_counts = np.zeros(m, dtype=np.int64)
    for i in tie_rows:
        loads = base + before[i] + tie_counts
        pick = _boundary_pick(v[i].tolist(), loads.tolist(), k)
        selected[i] = pick
        tie_counts[pick] += 1
    return selected


def select_topk_adjusted(scores_row, offsets, k: int, loads_so_far=None) -> list[int]:
    """Indices of the k largest ``scores_row - offsets`` for a single token."""
    row = np.asarray(scores_row, dtype=float)
    if row.ndim != 1:
        raise StructureError("scores_row must be 1-D")
    if loads_so_far is not None and len(loads_so_far) != row.size:
        raise StructureError("loads_so_far length does not match scores_row")
    return select_topk_batch(row[None, :], offsets, k, loads_so_far)[0].tolist()


def build_gates(scores, selections) -> Assignment:
    """Attach raw scores as gate values to per-token selections."""
    s = np.asarray(scores, dtype=float)
    sel = np.asarray(selections)
    if s.ndim != 2 or sel.ndim != 2 or sel.shape[0] != s.shape[0]:
        raise StructureError(
            f"selections shape {sel.shape} does not match scores shape {s.shape}"
        )
    if sel.size and (not np.issubdtype(sel.dtype, np.integer)):
        raise StructureError("selections must hold integer expert indices")
    m = s.shape[1]
    if sel.size and (sel.min() < 0 or sel.max() >= m):
        raise StructureError(f"expert index out of range [0, {m})")
    sel = sel.astype(np.int64)
    srt = np.sort(sel, axis=1)
    if sel.shape[1] > 1 and np.any(srt[:, 1:] == srt[:, :-1]):
        raise StructureError("a token selects the same expert twice")
    gates = np.take_along_axis(s, sel, axis=1)
    return Assignment(selected=sel, gates=gates, m=m)
