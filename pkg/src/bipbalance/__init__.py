"""Balanced top-k expert routing driven by an LP dual."""

from .baselines import BiasState, route_greedy, route_lossfree, update_bias
from .batch import DualState, balance_batch, dual_objective, update_p, update_q
from .metrics import aux_loss_value, avg_sup_maxvio, max_vio
from .online import (
    OnlineGateState,
    online_step_approx,
    online_step_exact,
    reset_window,
    route_online,
)
from .oracle import ExactSolution, solve_exhaustive, solve_flow, verify_weak_duality
from .routing import (
    Assignment,
    BalanceConfig,
    ConfigError,
    ScoreError,
    StructureError,
    build_gates,
    select_topk_adjusted,
    select_topk_batch,
)

__all__ = [
    "Assignment",
    "BalanceConfig",
    "BiasState",
    "ConfigError",
    "DualState",
    "ExactSolution",
    "OnlineGateState",
    "ScoreError",
    "StructureError",
    "aux_loss_value",
    "avg_sup_maxvio",
    "balance_batch",
    "build_gates",
    "dual_objective",
    "max_vio",
    "online_step_approx",
    "online_step_exact",
    "reset_window",
    "route_greedy",
    "route_lossfree",
    "route_online",
    "select_topk_adjusted",
    "select_topk_batch",
    "solve_exhaustive",
    "solve_flow",
    "update_bias",
    "update_p",
    "update_q",
    "verify_weak_duality",
]
