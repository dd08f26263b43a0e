"""Exact solvers for small capacitated routing instances.

Two independent routes to the integer optimum:

* ``solve_exhaustive`` walks every per-token k-subset sequence in
  lexicographic order, dropping partial sequences as soon as an expert goes
  over capacity;
* ``solve_flow`` solves the transportation-structured program with HiGHS.
  The constraint matrix is the incidence matrix of a bipartite graph, hence
  totally unimodular, so the optimum is integral.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, milp

from .batch import dual_objective
from .routing import BalanceConfig, ConfigError, StructureError, as_scores

MAX_ENUMERATION = 10**7
MAX_FLOW_CELLS = 10**6
DUALITY_TOL = 1e-9


class InstanceTooLarge(ValueError):
    """The instance exceeds what the requested solver will attempt."""


class DualityViolation(AssertionError):
    """Dual objective fell below a primal optimum."""


@dataclass
class ExactSolution:
    x: np.ndarray  # (n, m) binary
    objective: float

    def loads(self) -> np.ndarray:
        return self.x.sum(axis=0)


def solve_exhaustive(scores, cfg: BalanceConfig) -> ExactSolution:
    s = as_scores(scores, cfg.m)
    n, m, k = s.shape[0], cfg.m, cfg.k
    if n != cfg.n:
        raise StructureError(f"instance has {n} tokens, config says n={cfg.n}")
    subsets = list(combinations(range(m), k))
    if len(subsets) ** n > MAX_ENUMERATION:
        raise InstanceTooLarge(
            f"C({m},{k})^{n} = {len(subsets) ** n} sequences exceeds {MAX_ENUMERATION}"
        )

    incidence = np.zeros((len(subsets), m), dtype=np.int64)
    for a, sub in enumerate(subsets):
        incidence[a, list(sub)] = 1
    cap = cfg.capacity

    # Rows of (seq, loads, value) stay in lexicographic order of seq because
    # each extension step repeats parents and tiles children in order.
    seq = np.zeros((1, 0), dtype=np.int64)
    loads = np.zeros((1, m), dtype=np.int64)
    value = np.zeros(1)
    for i in range(n):
        row_gain = incidence @ s[i]
        parents = np.repeat(np.arange(len(value)), len(subsets))
        child = np.tile(np.arange(len(subsets)), len(value))
        new_loads = loads[parents] + incidence[child]
        keep = np.all(new_loads <= cap, axis=1)
        seq = np.concatenate([seq[parents[keep]], child[keep, None]], axis=1)
        loads = new_loads[keep]
        value = value[parents[keep]] + row_gain[child[keep]]

    best = int(np.argmax(value))
    x = incidence[seq[best]]
    return ExactSolution(x=x, objective=float((s * x).sum()))


def solve_flow(scores, cfg: BalanceConfig) -> ExactSolution:
    s = as_scores(scores, cfg.m)
    n, m = s.shape
    if n != cfg.n:
        raise StructureError(f"instance has {n} tokens, config says n={cfg.n}")
    if not cfg.integral:
        raise ConfigError(
            f"kn/m = {cfg.k}*{n}/{m} is not integral; use solve_exhaustive"
        )
    if n * m > MAX_FLOW_CELLS:
        raise InstanceTooLarge(f"n*m = {n * m} exceeds {MAX_FLOW_CELLS}")

    # variable x_ij at column i*m + j
    cols = np.arange(n * m)
    token_rows = sparse.csr_array((np.ones(n * m), (cols // m, cols)), shape=(n, n * m))
    expert_rows = sparse.csr_array((np.ones(n * m), (cols % m, cols)), shape=(m, n * m))
    constraints = [
        LinearConstraint(token_rows, lb=cfg.k, ub=cfg.k),
        LinearConstraint(expert_rows, lb=0, ub=cfg.capacity),
    ]
    res = milp(
        c=-s.ravel(),
        constraints=constraints,
        integrality=np.ones(n * m),
        bounds=Bounds(0, 1),
        options={"mip_rel_gap": 0.0},
    )
    if res.status != 0 or res.x is None:
        raise RuntimeError(f"flow solve failed: {res.message}")
    x = np.rint(res.x).astype(np.int64).reshape(n, m)
    return ExactSolution(x=x, objective=float((s * x).sum()))


def solve(scores, cfg: BalanceConfig) -> ExactSolution:
    """Enumerate when tractable, otherwise fall back to the flow solver."""
    try:
        return solve_exhaustive(scores, cfg)
    except InstanceTooLarge:
        return solve_flow(scores, cfg)


def is_enumerable(cfg: BalanceConfig) -> bool:
    return comb(cfg.m, cfg.k) ** cfg.n <= MAX_ENUMERATION


def verify_weak_duality(scores, p, q, cfg: BalanceConfig, solution: ExactSolution) -> float:
    """Return the duality gap D(p, q) - OPT, raising if it is negative."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("duals must be non-negative")
    gap = dual_objective(scores, p, q, cfg) - solution.objective
    if gap < -DUALITY_TOL:
        raise DualityViolation(f"dual objective below primal optimum by {-gap:.3e}")
    return gap
