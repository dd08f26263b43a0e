"""Synthetic routing-score streams.

Every matrix is a pure function of (seed, layer, step): generators are
derived from those integers, never from shared mutable RNG state, so the
order in which cells are evaluated cannot change the output.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .routing import BalanceConfig, ConfigError, clamp_scores

KINDS = ("uniform", "skew", "drift", "trace")
_WALK_TAG = 2**31


@dataclass(frozen=True)
class WorkloadSpec:
    kind: str
    cfg: BalanceConfig
    skew: float = 2.0
    drift: float = 0.0
    noise: float = 1.0
    seed: int = 0
    layers: int = 1
    steps: int = 200
    trace: Path | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown workload kind {self.kind!r}")
        if self.kind == "trace" and self.trace is None:
            raise ConfigError("trace workloads need a trace path")
        if self.skew < 0 or self.drift < 0 or self.noise < 0:
            raise ConfigError("skew, drift and noise must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.layers < 1:
            raise ConfigError(f"need at least one layer, got {self.layers}")
        if self.steps < 1:
            raise ConfigError(f"need at least one step, got {self.steps}")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def popularity(spec: WorkloadSpec, step: int, layer: int) -> np.ndarray:
    """Per-expert logit offset at ``step`` (0-based)."""
    m = spec.cfg.m
    ramp = spec.skew * (m - np.arange(m)) / m
    if spec.kind == "uniform":
        return np.zeros(m)
    if spec.kind == "drift" and spec.drift > 0 and step > 0:
        walk = np.random.default_rng([spec.seed, layer, _WALK_TAG, 1])
        ramp = ramp + spec.drift * walk.standard_normal((step, m)).sum(axis=0)
    return ramp


def gen_workload(spec: WorkloadSpec, step: int, layer: int) -> np.ndarray:
    """Score matrix (n, m) for one batch of one layer; ``step`` is 0-based."""
    if spec.kind == "trace":
        raise ConfigError("trace workloads are read from disk, not generated")
    n, m = spec.cfg.n, spec.cfg.m
    rng = np.random.default_rng([spec.seed, layer, step, 0])
    noise = rng.standard_normal((n, m))
    if spec.kind == "uniform":
        logits = noise
    else:
        logits = popularity(spec, step, layer) + spec.noise * noise
    return clamp_scores(softmax(logits))
