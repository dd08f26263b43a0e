"""Multi-strategy routing simulation over steps and layers."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baselines import DEFAULT_BIAS_RATE, BiasState, route_greedy, route_lossfree, update_bias
from .batch import DualState, balance_batch
from .metrics import avg_sup_maxvio, max_vio
from .online import OnlineGateState, route_online
from .oracle import is_enumerable, solve_exhaustive, verify_weak_duality
from .routing import Assignment, BalanceConfig, ConfigError, StructureError, as_scores
from .trace import layer_paths, read_trace
from .workload import WorkloadSpec, gen_workload

ALGORITHMS = ("greedy", "lossfree", "bip", "online", "online-approx")
DESCENT_RTOL = 1e-9
STEP_COLUMNS = ("step", "layer", "algo", "max_vio", "score", "dual_obj")


class DescentViolation(AssertionError):
    pass


@dataclass
class RunOptions:
    bias_rate: float = DEFAULT_BIAS_RATE
    buckets: int = 100
    cold_start: bool = False
    window: str = "batch"
    timing: bool = False
    log_duals: bool = False


@dataclass
class StepRecord:
    step: int
    layer: int
    algo: str
    max_vio: float
    score: float
    dual_obj: float | None = None


@dataclass
class Summary:
    algo: str
    layer: int
    avg_max_vio: float
    sup_max_vio: float
    total_score: float
    wall_ms: float | None


@dataclass
class RunReport:
    rows: list[StepRecord] = field(default_factory=list)
    summaries: list[Summary] = field(default_factory=list)
    duals: list[dict] = field(default_factory=list)

    def series(self, algo: str, layer: int = 0) -> list[float]:
        return [r.max_vio for r in self.rows if r.algo == algo and r.layer == layer]

    def summary(self, algo: str, layer: int = 0) -> Summary:
        for s in self.summaries:
            if s.algo == algo and s.layer == layer:
                return s
        raise KeyError((algo, layer))


class _Greedy:
    def route(self, s, cfg):
        return route_greedy(s, cfg.k), None


class _LossFree:
    def __init__(self, m, u):
        self.bias = BiasState.zeros(m, u)

    def route(self, s, cfg):
        a = route_lossfree(s, self.bias, cfg.k)
        self.bias = update_bias(self.bias, a.loads())
        return a, None


class _Bip:
    def __init__(self, m, cold_start):
        self.state = DualState.zeros(m)
        self.cold_start = cold_start
        self.last = None

    def route(self, s, cfg):
        if self.cold_start:
            self.state = DualState.zeros(cfg.m)
        a, self.state = balance_batch(s, self.state, cfg, track=True)
        trace = self.state.objective_trace
        for before, after in zip(trace, trace[1:]):
            if after > before + DESCENT_RTOL * max(1.0, abs(before)):
                raise DescentViolation(f"dual objective rose from {before!r} to {after!r}")
        return a, self.state.last_dual_objective


class _Online:
    def __init__(self, cfg, approximate, opts):
        self.state = OnlineGateState(
            cfg=cfg, approximate=approximate, buckets=opts.buckets, window=opts.window
        )

    def route(self, s, cfg):
        if cfg.n != self.state.cfg.n:
            raise StructureError(
                f"online routing needs a fixed batch size {self.state.cfg.n}, got {cfg.n}"
            )
        return route_online(s, self.state), None


def _make_router(algo: str, cfg: BalanceConfig, opts: RunOptions):
    if algo == "greedy":
        return _Greedy()
    if algo == "lossfree":
        return _LossFree(cfg.m, opts.bias_rate)
    if algo == "bip":
        return _Bip(cfg.m, opts.cold_start)
    if algo == "online":
        return _Online(cfg, False, opts)
    if algo == "online-approx":
        return _Online(cfg, True, opts)
    raise ConfigError(f"unknown algorithm {algo!r}; choose from {', '.join(ALGORITHMS)}")


def _batches(spec: WorkloadSpec):
    """Yield (step, [scores per layer]) with 1-based generated steps."""
    if spec.kind != "trace":
        for t in range(spec.steps):
            yield t + 1, [gen_workload(spec, t, layer) for layer in range(spec.layers)]
        return
    per_layer = [read_trace(p) for p in layer_paths(spec.trace, spec.layers)]
    steps = [[st for st, _ in tr] for tr in per_layer]
    if any(s != steps[0] for s in steps):
        raise StructureError("layer traces disagree on their step sequence")
    for idx, step in enumerate(steps[0][: spec.steps]):
        mats = [tr[idx][1] for tr in per_layer]
        for mat in mats:
            if mat.shape[1] != spec.cfg.m:
                raise StructureError(
                    f"trace step {step} has {mat.shape[1]} experts, expected m={spec.cfg.m}"
                )
        yield step, mats


def run_experiment(spec: WorkloadSpec, algorithms, opts: RunOptions | None = None) -> RunReport:
    opts = opts or RunOptions()
    algorithms = list(algorithms)
    if not algorithms:
        raise ConfigError("no algorithms requested")
    for algo in algorithms:
        if algo not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {algo!r}; choose from {', '.join(ALGORITHMS)}")
    if len(set(algorithms)) != len(algorithms):
        raise ConfigError("algorithm list has duplicates")

    cfg = spec.cfg
    routers = {
        (layer, algo): _make_router(algo, cfg, opts)
        for layer in range(spec.layers)
        for algo in algorithms
    }
    elapsed = {key: 0.0 for key in routers}
    report = RunReport()

    for step, mats in _batches(spec):
        for layer, scores in enumerate(mats):
            s = as_scores(scores, cfg.m)
            step_cfg = cfg.with_n(s.shape[0])
            for algo in algorithms:
                router = routers[(layer, algo)]
                t0 = time.perf_counter()
                assignment, dual = router.route(s, step_cfg)
                elapsed[(layer, algo)] += time.perf_counter() - t0
                if algo == "bip":
                    _check_oracle(s, router.state, step_cfg)
                    if opts.log_duals:
                        report.duals.append(
                            {
                                "layer": layer,
                                "step": step,
                                "p": router.state.p.tolist(),
                                "q": router.state.q.tolist(),
                            }
                        )
                report.rows.append(_record(step, layer, algo, assignment, dual))

    for layer in range(spec.layers):
        for algo in algorithms:
            series = report.series(algo, layer)
            avg, sup = avg_sup_maxvio(series)
            total = sum(r.score for r in report.rows if r.algo == algo and r.layer == layer)
            wall = round(elapsed[(layer, algo)] * 1e3, 3) if opts.timing else None
            report.summaries.append(Summary(algo, layer, avg, sup, total, wall))
    return report


def _record(step, layer, algo, assignment: Assignment, dual) -> StepRecord:
    return StepRecord(
        step=step,
        layer=layer,
        algo=algo,
        max_vio=max_vio(assignment.loads()),
        score=assignment.total_score(),
        dual_obj=dual,
    )


def _check_oracle(s: np.ndarray, state: DualState, cfg: BalanceConfig) -> None:
    """Weak duality against the enumerated optimum on tiny batches."""
    if cfg.integral and is_enumerable(cfg) and cfg.n <= 8:
        verify_weak_duality(s, state.p, state.q, cfg, solve_exhaustive(s, cfg))


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def emit_report(report: RunReport, out_dir) -> tuple[Path, Path]:
    """Write ``steps.csv`` and ``summary.json`` into ``out_dir``."""
    if not report.rows or not report.summaries:
        raise ValueError("refusing to emit an empty report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    steps_path = out / "steps.csv"
    with steps_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEP_COLUMNS)
        for r in report.rows:
            w.writerow([r.step, r.layer, r.algo, _fmt(r.max_vio), _fmt(r.score), _fmt(r.dual_obj)])
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps([asdict(s) for s in report.summaries], indent=2) + "\n")
    if report.duals:
        (out / "duals.json").write_text(json.dumps(report.duals) + "\n")
    return steps_path, summary_path


def load_steps(path) -> list[StepRecord]:
    rows = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                StepRecord(
                    step=int(rec["step"]),
                    layer=int(rec["layer"]),
                    algo=rec["algo"],
                    max_vio=float(rec["max_vio"]),
                    score=float(rec["score"]),
                    dual_obj=float(rec["dual_obj"]) if rec["dual_obj"] else None,
                )
            )
    return rows
