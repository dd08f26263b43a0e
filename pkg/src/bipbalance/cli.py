"""Command-line entry point: ``bipbalance run`` and ``bipbalance oracle``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .baselines import DEFAULT_BIAS_RATE
from .experiment import ALGORITHMS, RunOptions, emit_report, run_experiment
from .oracle import InstanceTooLarge, is_enumerable, solve_exhaustive, solve_flow, verify_weak_duality
from .routing import BalanceConfig, ConfigError
from .trace import read_trace
from .workload import KINDS, WorkloadSpec


def _algorithms(text: str) -> list[str]:
    algos = [a.strip() for a in text.split(",") if a.strip()]
    for a in algos:
        if a not in ALGORITHMS:
            raise argparse.ArgumentTypeError(
                f"unknown algorithm {a!r}; choose from {', '.join(ALGORITHMS)}"
            )
    if not algos:
        raise argparse.ArgumentTypeError("empty algorithm list")
    return algos


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bipbalance", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate routing strategies and write metrics")
    run.add_argument("--algo", type=_algorithms, default=["greedy", "lossfree", "bip"],
                     help=f"comma-separated subset of {','.join(ALGORITHMS)}")
    run.add_argument("--experts", type=int, default=16)
    run.add_argument("--topk", type=int, default=4)
    run.add_argument("--tokens", type=int, default=1024)
    run.add_argument("--steps", type=int, default=200)
    run.add_argument("--iters", type=int, default=4)
    run.add_argument("--buckets", type=int, default=100)
    run.add_argument("--workload", choices=KINDS, default="skew")
    run.add_argument("--skew", type=float, default=2.0)
    run.add_argument("--drift", type=float, default=0.0)
    run.add_argument("--noise", type=float, default=1.0)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--layers", type=int, default=1)
    run.add_argument("--trace", type=Path)
    run.add_argument("--bias-rate", type=float, default=DEFAULT_BIAS_RATE)
    run.add_argument("--cold-start", action="store_true",
                     help="reset the BIP dual q before every batch")
    run.add_argument("--window", choices=("batch", "sliding", "none"), default="batch",
                     help="history window of the online variants")
    run.add_argument("--timing", action="store_true",
                     help="record wall-clock ms in summary.json (breaks byte determinism)")
    run.add_argument("--log-duals", action="store_true",
                     help="also write duals.json with the final p and q of every BIP batch")
    run.add_argument("--out", type=Path, required=True)

    orc = sub.add_parser("oracle", help="exact optimum of every batch in a trace")
    orc.add_argument("--trace", type=Path, required=True)
    orc.add_argument("--experts", type=int, required=True)
    orc.add_argument("--topk", type=int, required=True)
    orc.add_argument("--run-log", type=Path,
                     help="duals.json from a BIP run; adds the weak-duality gap")
    orc.add_argument("--layer", type=int, default=0)
    return parser


def cmd_run(args) -> int:
    trace = args.trace
    kind = "trace" if trace is not None else args.workload
    if args.workload == "trace" and trace is None:
        raise ConfigError("--workload trace needs --trace PATH")
    cfg = BalanceConfig(m=args.experts, k=args.topk, n=args.tokens, iters=args.iters)
    spec = WorkloadSpec(
        kind=kind, cfg=cfg, skew=args.skew, drift=args.drift, noise=args.noise,
        seed=args.seed, layers=args.layers, steps=args.steps, trace=trace,
    )
    opts = RunOptions(
        bias_rate=args.bias_rate, buckets=args.buckets, cold_start=args.cold_start,
        window=args.window, timing=args.timing, log_duals=args.log_duals,
    )
    report = run_experiment(spec, args.algo, opts)
    steps_path, summary_path = emit_report(report, args.out)
    for s in report.summaries:
        print(f"{s.algo:>14} layer {s.layer}: AvgMaxVio {s.avg_max_vio:.4f}  "
              f"SupMaxVio {s.sup_max_vio:.4f}  score {s.total_score:.4f}")
    print(f"wrote {steps_path} and {summary_path}")
    return 0


def cmd_oracle(args) -> int:
    batches = read_trace(args.trace)
    duals = {}
    if args.run_log is not None:
        for rec in json.loads(args.run_log.read_text()):
            if rec["layer"] == args.layer:
                duals[rec["step"]] = rec
    for step, s in batches:
        cfg = BalanceConfig(m=args.experts, k=args.topk, n=s.shape[0])
        if s.shape[1] != cfg.m:
            raise ConfigError(f"trace step {step} has {s.shape[1]} experts, expected {cfg.m}")
        if is_enumerable(cfg):
            sol, solver = solve_exhaustive(s, cfg), "exhaustive"
        else:
            sol, solver = solve_flow(s, cfg), "flow"
        out = {"step": step, "n": cfg.n, "solver": solver, "optimum": sol.objective}
        if step in duals:
            rec = duals[step]
            out["gap"] = verify_weak_duality(s, np.array(rec["p"]), np.array(rec["q"]), cfg, sol)
        print(json.dumps(out))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_oracle(args)
    except (ValueError, OSError, InstanceTooLarge, AssertionError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
