from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from typing import Sequence

from ccgym.agent.quantize import quantize
from ccgym.agent.trainer import TrainConfig, parse_target, train
from ccgym.bench.suite import SuiteConfig, run_benchmark, runs_csv, summary_table
from ccgym.config import PROJECT_NAME
from ccgym.core.errors import CcGymError, ConfigError, TrainingDiverged
from ccgym.core.save import (
    inspect_checkpoint,
    load_checkpoint,
    load_document,
    open_text,
    save_quantized,
    sidecar_path,
)
from ccgym.sim.scenarios import ScenarioKind, ScenarioSpec


logger = logging.getLogger(PROJECT_NAME)

LEARNED_ALGO = "adpg"


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--flows", type=int, default=None, help="override the flow count")
    p.add_argument("--seed", type=int, default=None, help="override the seed")
    p.add_argument("--duration-ms", type=float, default=None, help="override the simulated duration")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("-q", "--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROJECT_NAME, description="Datacenter congestion-control gym.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy on the many-to-one train set")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--curve", default=None, help="learning-curve CSV path")
    p.add_argument("--target", default=None, help="strict, standard, loose or a number")
    _add_common(p)

    p = sub.add_parser("eval", help="run one scenario with a policy or a baseline")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--algo", default=None, help="adpg (with --ckpt), dcqcn, hpcc or swift")
    p.add_argument("--scenario", required=True)
    p.add_argument("--report", required=True, help="run CSV path")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--trace", default=None, help="write every simulation event to this file")
    _add_common(p)

    p = sub.add_parser("bench", help="run a benchmark suite")
    p.add_argument("--suite", required=True)
    p.add_argument("--out", required=True, help="run CSV path")
    p.add_argument("--workers", type=int, default=None)
    _add_common(p)

    p = sub.add_parser("quantize", help="int8-quantize a float checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("policy", help="checkpoint utilities")
    psub = p.add_subparsers(dest="policy_command", required=True)
    pi = psub.add_parser("inspect", help="print tensor shapes and norms")
    pi.add_argument("ckpt")
    _add_common(pi)
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.INFO
    if getattr(args, "verbose", False):
        level = logging.DEBUG
    elif getattr(args, "quiet", False):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _override_scenario(spec: ScenarioSpec, args: argparse.Namespace) -> ScenarioSpec:
    s = spec
    if args.flows is not None:
        if s.kind is ScenarioKind.ALL_TO_ALL:
            s = replace(s, hosts=args.flows)
        else:
            # The host layout is re-derived for the new count.
            s = replace(s, total_flows=args.flows, hosts=0, flows_per_host=0, short_flow_count=0)
    if args.seed is not None:
        s = replace(s, seed=args.seed)
    if args.duration_ms is not None:
        s = replace(s, duration_ns=int(round(args.duration_ms * 1_000_000)))
    return s


def cmd_train(args: argparse.Namespace) -> int:
    cfg = TrainConfig.from_dict(load_document(args.config))
    if args.target is not None:
        cfg.target = parse_target(args.target)
    if args.flows is not None:
        cfg.train_flows = (args.flows,)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.duration_ms is not None:
        cfg.max_iteration_ns = int(round(args.duration_ms * 1_000_000))
    cfg.validate()
    try:
        result = train(cfg, out=args.out, curve_path=args.curve)
    except TrainingDiverged as e:
        print(f"training diverged; last good checkpoint: {e.last_good or 'none'}", file=sys.stderr)
        return 2
    last = result.curve[-1]
    print(
        f"OK {len(result.curve)} iterations, {result.decision_steps} decisions, "
        f"{result.skipped_updates} skipped; final reward {last.mean_reward:.4f} -> {args.out}"
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    spec = _override_scenario(ScenarioSpec.from_dict(load_document(args.scenario)), args)
    algo = args.algo if args.algo is not None else (LEARNED_ALGO if args.ckpt is not None else None)
    if algo is None:
        raise ConfigError("eval: give --algo, or --ckpt for a trained policy")
    if algo == LEARNED_ALGO and args.ckpt is None:
        raise ConfigError(f"eval: --algo {LEARNED_ALGO} needs --ckpt")
    if algo != LEARNED_ALGO and args.ckpt is not None:
        raise ConfigError(f"eval: --ckpt only applies to --algo {LEARNED_ALGO}, not {algo}")
    suite = SuiteConfig(
        scenarios=[spec],
        algorithms=[algo],
        seeds=[spec.seed + i for i in range(max(1, args.seeds))],
        checkpoints={LEARNED_ALGO: args.ckpt} if args.ckpt is not None else {},
    )
    if args.trace is not None:
        with open_text(args.trace) as sink:
            records = run_benchmark(suite, csv_path=args.report, trace_sink=sink)
    else:
        records = run_benchmark(suite, csv_path=args.report)
    print(summary_table(records))
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    suite = SuiteConfig.from_dict(load_document(args.suite))
    suite.scenarios = [_override_scenario(s, args) for s in suite.scenarios]
    if args.seed is not None:
        suite.seeds = [args.seed]
    records = run_benchmark(suite, csv_path=args.out, workers=args.workers)
    print(summary_table(records))
    failed = sum(1 for r in records if r.error is not None)
    if failed:
        logger.warning("%d of %d runs raised errors; see %s", failed, len(records), args.out)
    logger.debug("run CSV:\n%s", runs_csv(records))
    return 0


def cmd_quantize(args: argparse.Namespace) -> int:
    params = load_checkpoint(args.ckpt)
    qp = quantize(params)
    try:
        meta = load_document(sidecar_path(args.ckpt))
    except ConfigError:
        meta = {}
    meta["quantized_from"] = args.ckpt
    save_quantized(args.out, qp, meta)
    err = max(float(abs(a - b).max()) for (_n, a), (_m, b) in zip(params.items(), qp.dequantize().items()))
    print(f"OK quantized {args.ckpt} -> {args.out} (max abs weight error {err:.3g})")
    return 0


def cmd_policy(args: argparse.Namespace) -> int:
    info = inspect_checkpoint(args.ckpt)
    kind = "int8" if info.quantized else "float32"
    print(f"{info.path}: {kind} checkpoint v{info.version}, {info.feature_count} features")
    width = max(len(name) for name, *_rest in info.tensors)
    for name, shape, norm, scale in info.tensors:
        dims = "x".join(str(d) for d in shape)
        extra = f"  scale={scale:.6g}" if scale is not None else ""
        print(f"  {name.ljust(width)}  {dims:>8}  |W|={norm:.6f}{extra}")
    meta_path = sidecar_path(args.ckpt)
    try:
        meta = load_document(meta_path)
        if "target" in meta:
            print(f"  target={meta['target']}")
    except ConfigError:
        logger.debug("no metadata at %s", meta_path)
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "quantize": cmd_quantize,
    "policy": cmd_policy,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args)
    try:
        return COMMANDS[args.command](args)
    except CcGymError as e:
        print(f"{PROJECT_NAME}: error: {e}", file=sys.stderr)
        return 2
