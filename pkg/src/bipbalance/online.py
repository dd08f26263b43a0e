"""Token-at-a-time balancing on one gate.

Each arriving token is routed by top-k of ``s - q`` first; the duals are
refreshed afterwards.  The expert dual ``q_j`` is the r-th largest value
(r = floor(nk/m) + 1) of the history ``Q_j`` of past ``s_j - p`` values plus
the current candidate.  Two history representations are offered:

* exact: a bounded min-heap holding the top r values, plus an overflow pool
  so the full multiset is still available;
* approximate: ``b`` bucket counters over [0, 1) per expert, with the order
  statistic recovered by linear interpolation inside its bucket.  State size
  does not depend on the number of tokens seen.

Histories are windowed.  ``"batch"`` clears them every ``n`` tokens,
``"sliding"`` keeps the last ``n`` tokens (exact histories only) and
``"none"`` never forgets.
"""

from __future__ import annotations

from heapq import heappush, heapreplace
from bisect import bisect_left, insort
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .routing import (
    Assignment,
    BalanceConfig,
    ConfigError,
    ScoreError,
    StructureError,
    _boundary_pick,
    build_gates,
)

WINDOWS = ("batch", "sliding", "none")


class ExpertHistory:
    """Multiset of one expert's past values with O(log r) r-th-largest upkeep."""

    __slots__ = ("r", "top", "overflow")

    def __init__(self, r: int):
        self.r = r
        self.top: list[float] = []  # min-heap of the r largest values
        self.overflow: list[float] = []

    def __len__(self) -> int:
        return len(self.top) + len(self.overflow)

    def push(self, value: float) -> None:
        top = self.top
        if len(top) < self.r:
            heappush(top, value)
        elif value > top[0]:
            self.overflow.append(heapreplace(top, value))
        else:
            self.overflow.append(value)

    def rth_largest(self) -> float | None:
        return self.top[0] if len(self.top) == self.r else None

    def rth_largest_with(self, candidate: float) -> float | None:
        """r-th largest of the history with ``candidate`` added (not stored)."""
        top, r = self.top, self.r
        have = len(top)
        if have < r - 1:
            return None
        if have == r - 1:
            return min(top[0], candidate) if have else candidate
        low = top[0]
        if candidate <= low:
            return low
        if r == 1:
            return candidate
        second = top[1] if r == 2 else min(top[1], top[2])
        return min(second, candidate)

    def contents(self) -> list[float]:
        return self.top + self.overflow

    def clear(self) -> None:
        self.top.clear()
        self.overflow.clear()


class SlidingHistory:
    """Exact history over the most recent ``span`` values, kept sorted.

    A gate with window n keeps n - 1 past values, so that together with the
    current candidate the statistic covers exactly n tokens.
    """

    __slots__ = ("r", "span", "sorted", "fifo")

    def __init__(self, r: int, span: int):
        self.r = r
        self.span = span
        self.sorted: list[float] = []
        self.fifo: deque[float] = deque()

    def __len__(self) -> int:
        return len(self.fifo)

    def push(self, value: float) -> None:
        if self.span == 0:
            return
        if len(self.fifo) == self.span:
            old = self.fifo.popleft()
            del self.sorted[bisect_left(self.sorted, old)]
        self.fifo.append(value)
        insort(self.sorted, value)

    def rth_largest(self) -> float | None:
        return self.sorted[-self.r] if len(self.sorted) >= self.r else None

    def rth_largest_with(self, candidate: float) -> float | None:
        vals, r = self.sorted, self.r
        if len(vals) + 1 < r:
            return None
        # position the candidate would take; the r-th largest of the union
        # is either the candidate or a neighbour of the plain r-th largest
        pos = bisect_left(vals, candidate)
        above = len(vals) - pos
        if above >= r:
            return vals[-r]
        if above == r - 1:
            return candidate
        return vals[-(r - 1)]

    def contents(self) -> list[float]:
        return list(self.fifo)

    def clear(self) -> None:
        self.sorted.clear()
        self.fifo.clear()


class BucketHistogram:
    """Counts of one expert's positive values in b equal buckets over [0, 1).

    Between clears the histogram only grows, so the bucket holding the r-th
    largest value moves monotonically upward; ``level``/``above`` track it
    with amortized O(1) work per insert.
    """

    __slots__ = ("b", "r", "counts", "total", "lowest", "level", "above", "next_up")

    def __init__(self, b: int, r: int):
        if b < 1:
            raise ConfigError(f"bucket count must be >= 1, got {b}")
        self.b = b
        self.r = r
        self.counts = [0] * b
        self.clear()

    def clear(self) -> None:
        for i in range(self.b):
            self.counts[i] = 0
        self.total = 0
        self.lowest = self.b  # lowest non-empty bucket
        self.level = -1  # bucket holding the r-th largest, once total >= r
        self.above = 0  # values in buckets strictly above level
        self.next_up = self.b  # lowest non-empty bucket above level

    def bucket(self, value: float) -> int:
        return min(int(value * self.b), self.b - 1)

    def _next_nonempty(self, start: int) -> int:
        counts = self.counts
        for i in range(start, self.b):
            if counts[i]:
                return i
        return self.b

    def insert(self, value: float) -> None:
        """Count ``value``; non-positive values are ignored."""
        if value <= 0.0:
            return
        lv = self.bucket(value)
        self.counts[lv] += 1
        self.total += 1
        if lv < self.lowest:
            self.lowest = lv
        if self.total < self.r:
            return
        if self.total == self.r:
            self.level = self.lowest
            self.above = self.total - self.counts[self.level]
            self.next_up = self._next_nonempty(self.level + 1)
            return
        if lv <= self.level:
            return
        self.above += 1
        if lv < self.next_up:
            self.next_up = lv
        if self.above >= self.r:
            self.level = self.next_up
            self.above -= self.counts[self.level]
            self.next_up = self._next_nonempty(self.level + 1)

    def _interpolate(self, level: int, above: int, inside: int) -> float:
        return (level + 1 - (self.r - above) / inside) / self.b

    def rth_largest(self) -> float | None:
        if self.total < self.r:
            return None
        return self._interpolate(self.level, self.above, self.counts[self.level])

    def rth_largest_with(self, candidate: float) -> float | None:
        """Interpolated r-th largest with ``candidate`` counted (not stored)."""
        if candidate <= 0.0:
            return self.rth_largest()
        lc = self.bucket(candidate)
        total = self.total + 1
        r = self.r
        if total < r:
            return None
        counts = self.counts
        if total == r:
            lv = min(self.lowest, lc)
            inside = counts[lv] + (lv == lc)
            return self._interpolate(lv, total - inside, inside)
        lv = self.level
        if lc < lv:
            return self._interpolate(lv, self.above, counts[lv])
        if lc == lv:
            return self._interpolate(lv, self.above, counts[lv] + 1)
        above = self.above + 1
        if above < r:
            return self._interpolate(lv, above, counts[lv])
        up = min(self.next_up, lc)
        inside = counts[up] + (up == lc)
        return self._interpolate(up, above - inside, inside)

    def __len__(self) -> int:
        return self.total


@dataclass
class OnlineGateState:
    """Dual vector, per-expert histories and window bookkeeping for one gate."""

    cfg: BalanceConfig
    approximate: bool = False
    buckets: int = 100
    window: str = "batch"
    keep_q_on_reset: bool = True
    q: list[float] = field(default_factory=list)
    histories: list = field(default_factory=list)
    window_loads: list[int] = field(default_factory=list)
    tokens_seen: int = 0
    window_seen: int = 0
    last_p: float = 0.0
    last_inserted: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        m, r = self.cfg.m, self.cfg.expert_rank
        if self.window not in WINDOWS:
            raise ConfigError(f"unknown window mode {self.window!r}")
        if self.approximate:
            if self.window == "sliding":
                raise ConfigError("sliding windows need exact histories")
            self.histories = [BucketHistogram(self.buckets, r) for _ in range(m)]
        elif self.window == "sliding":
            self.histories = [SlidingHistory(r, self.cfg.n - 1) for _ in range(m)]
        else:
            self.histories = [ExpertHistory(r) for _ in range(m)]
        if not self.q:
            self.q = [0.0] * m
        self.window_loads = [0] * m

    @classmethod
    def exact(cls, cfg: BalanceConfig, **kw) -> OnlineGateState:
        return cls(cfg=cfg, approximate=False, **kw)

    @classmethod
    def approx(cls, cfg: BalanceConfig, buckets: int = 100, **kw) -> OnlineGateState:
        return cls(cfg=cfg, approximate=True, buckets=buckets, **kw)

    def state_size(self) -> int:
        """Number of scalar slots held by the state."""
        fixed = len(self.q) + len(self.window_loads) + len(self.last_inserted) + 3
        if self.approximate:
            # counts plus total/lowest/level/above/next_up per expert
            return fixed + sum(len(h.counts) + 5 for h in self.histories)
        return fixed + sum(len(h) for h in self.histories)


def _check_row(scores, m: int) -> list[float]:
    row = [float(x) for x in scores]
    if len(row) != m:
        raise StructureError(f"token has {len(row)} scores, expected m={m}")
    for x in row:
        if not 0.0 <= x < 1.0:
            raise ScoreError(f"score {x!r} outside [0, 1)")
    return row


def _online_step(row: list[float], state: OnlineGateState) -> list[int]:
    cfg = state.cfg
    m, k = cfg.m, cfg.k
    q = state.q
    hist = state.histories
    experts = range(m)

    adj = [row[j] - q[j] for j in experts]
    chosen = _boundary_pick(adj, state.window_loads, k)

    p = 0.0
    for it in range(cfg.iters):
        if it:
            adj = [row[j] - q[j] for j in experts]
        p = sorted(adj, reverse=True)[k]
        if p < 0.0:
            p = 0.0
        for j in experts:
            v = hist[j].rth_largest_with(row[j] - p)
            q[j] = v if v is not None and v > 0.0 else 0.0

    inserted = [row[j] - p for j in experts]
    if state.approximate:
        for j in experts:
            hist[j].insert(inserted[j])
    else:
        for j in experts:
            hist[j].push(inserted[j])
    state.last_p = p
    state.last_inserted = inserted

    loads = state.window_loads
    for j in chosen:
        loads[j] += 1
    state.tokens_seen += 1
    state.window_seen += 1
    if state.window_seen == cfg.n:
        if state.window == "batch":
            reset_window(state)
        else:
            state.window_loads = [0] * m
            state.window_seen = 0
    return chosen


def online_step_exact(scores, state: OnlineGateState) -> tuple[list[int], OnlineGateState]:
    """Route one token with exact histories; mutates and returns ``state``."""
    if state.approximate:
        raise ConfigError("state holds bucket histograms; use online_step_approx")
    row = _check_row(scores, state.cfg.m)
    return _online_step(row, state), state


def online_step_approx(scores, state: OnlineGateState) -> tuple[list[int], OnlineGateState]:
    """Route one token with bucketed histories; mutates and returns ``state``."""
    if not state.approximate:
        raise ConfigError("state holds exact histories; use online_step_exact")
    row = _check_row(scores, state.cfg.m)
    return _online_step(row, state), state


def reset_window(state: OnlineGateState, keep_q: bool | None = None) -> OnlineGateState:
    """Forget histories and window loads; keep or zero q."""
    if keep_q is None:
        keep_q = state.keep_q_on_reset
    for h in state.histories:
        h.clear()
    m = state.cfg.m
    state.window_loads = [0] * m
    state.window_seen = 0
    if not keep_q:
        state.q = [0.0] * m
    return state


def route_online(scores, state: OnlineGateState, record: list | None = None) -> Assignment:
    """Feed a batch of tokens through the online engine in row order.

    When ``record`` is given, ``(q, inserted)`` lists are appended to it after
    every token.
    """
    s = np.asarray(scores, dtype=float)
    if s.ndim != 2:
        raise StructureError("scores must be 2-D")
    m = state.cfg.m
    if s.shape[1] != m:
        raise StructureError(f"scores have {s.shape[1]} columns, expected m={m}")
    if not np.all(np.isfinite(s)) or s.min(initial=0.0) < 0.0 or s.max(initial=0.0) >= 1.0:
        raise ScoreError("online routing needs finite scores in [0, 1)")
    chosen = []
    for row in s.tolist():
        chosen.append(_online_step(row, state))
        if record is not None:
            record.append((list(state.q), state.last_inserted))
    return build_gates(s, np.array(chosen, dtype=np.int64).reshape(len(chosen), state.cfg.k))


def naive_rth_largest(values, r: int) -> float | None:
    """Reference order statistic by full sort."""
    if len(values) < r:
        return None
    return sorted(values, reverse=True)[r - 1]


__all__ = [
    "BucketHistogram",
    "ExpertHistory",
    "OnlineGateState",
    "SlidingHistory",
    "naive_rth_largest",
    "online_step_approx",
    "online_step_exact",
    "reset_window",
    "route_online",
]
