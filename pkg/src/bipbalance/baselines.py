"""Reference routers: plain top-k and loss-free bias routing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .routing import Assignment, StructureError, as_scores, build_gates, select_topk_batch

DEFAULT_BIAS_RATE = 0.001


@dataclass
class BiasState:
    """Per-expert selection bias for loss-free routing (never touches gates)."""

    b: np.ndarray
    u: float = DEFAULT_BIAS_RATE
    steps: int = field(default=0)

    @classmethod
    def zeros(cls, m: int, u: float = DEFAULT_BIAS_RATE) -> BiasState:
        if u <= 0:
            raise ValueError(f"bias update rate must be positive, got {u}")
        return cls(b=np.zeros(m), u=u)


def route_greedy(scores, k: int) -> Assignment:
    s = as_scores(scores)
    return build_gates(s, select_topk_batch(s, 0.0, k))


def route_lossfree(scores, bias: BiasState, k: int) -> Assignment:
    s = as_scores(scores)
    if bias.b.shape != (s.shape[1],):
        raise StructureError(f"bias has shape {bias.b.shape}, expected ({s.shape[1]},)")
    # top-k of s + b is top-k of s - (-b)
    return build_gates(s, select_topk_batch(s, -bias.b, k))


def update_bias(bias: BiasState, loads) -> BiasState:
    """Sign step toward the mean load: b_j += u * sign(mean - load_j)."""
    loads = np.asarray(loads, dtype=float)
    if loads.shape != bias.b.shape:
        raise StructureError(f"loads have shape {loads.shape}, expected {bias.b.shape}")
    step = bias.u * np.sign(loads.mean() - loads)
    return BiasState(b=bias.b + step, u=bias.u, steps=bias.steps + 1)
