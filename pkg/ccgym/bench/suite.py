from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, TextIO

import numpy as np

from ccgym.agent.adpg import AdpgAgent
from ccgym.agent.policy import PolicyConfig
from ccgym.bench.metrics import MetricsReport, compute_metrics
from ccgym.bench.pareto import non_dominated
from ccgym.cc.base import ControllerFactory
from ccgym.cc.registry import RULE_ALGORITHMS, rule_controller_factory
from ccgym.config import DROP_BIN_FAIL_SHARE, METRICS_BIN_NS, SEED, TARGET_STANDARD, WARMUP_FRACTION
from ccgym.core.errors import CcGymError, ConfigError
from ccgym.core.save import (
    csv_text,
    is_quantized,
    load_checkpoint,
    load_document,
    load_quantized,
    sidecar_path,
    write_csv,
)
from ccgym.sim.scenarios import ScenarioKind, ScenarioSpec, build_scenario


logger = logging.getLogger(__name__)

RUN_HEADER = ("scenario", "algo", "seed", "su", "fr", "ql_us", "dr_gbps", "recovery_s", "failed")


@dataclass
class SuiteConfig:
    scenarios: list[ScenarioSpec] = field(default_factory=list)
    algorithms: list[str] = field(default_factory=lambda: ["dcqcn", "hpcc", "swift"])
    seeds: list[int] = field(default_factory=lambda: [SEED])
    algo_params: dict[str, dict[str, Any]] = field(default_factory=dict)
    # policy algorithm id -> checkpoint path (float or quantized)
    checkpoints: dict[str, str] = field(default_factory=dict)
    workers: int = 1

    def validate(self) -> None:
        if not self.scenarios:
            raise ConfigError("suite: no scenarios")
        if not self.algorithms:
            raise ConfigError("suite: no algorithms")
        if not self.seeds:
            raise ConfigError("suite: no seeds")
        for algo in self.algorithms:
            if algo not in RULE_ALGORITHMS and algo not in self.checkpoints:
                raise ConfigError(f"suite: algorithm {algo!r} is neither rule-based nor has a checkpoint")
        for s in self.scenarios:
            s.resolved()

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenarios": [s.to_dict() for s in self.scenarios],
            "algorithms": list(self.algorithms),
            "seeds": [int(s) for s in self.seeds],
            "algo_params": {k: dict(v) for k, v in self.algo_params.items()},
            "checkpoints": dict(self.checkpoints),
            "workers": int(self.workers),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "SuiteConfig":
        if not data:
            return cls()
        cfg = cls(
            scenarios=[ScenarioSpec.from_dict(s) for s in data.get("scenarios", []) or []],
            algorithms=[str(a) for a in data.get("algorithms", ["dcqcn", "hpcc", "swift"])],
            seeds=[int(s) for s in data.get("seeds", [SEED])],
            algo_params={str(k): dict(v or {}) for k, v in (data.get("algo_params", {}) or {}).items()},
            checkpoints={str(k): str(v) for k, v in (data.get("checkpoints", {}) or {}).items()},
            workers=int(data.get("workers", 1)),
        )
        cfg.validate()
        return cfg


@dataclass
class RunRecord:
    scenario: str
    algo: str
    seed: int
    spec: dict[str, Any]
    algo_params: dict[str, Any]
    report: MetricsReport | None
    wall_time_s: float = 0.0
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.report is None or self.report.failed

    def csv_row(self) -> tuple[Any, ...]:
        r = self.report
        if r is None:
            return (self.scenario, self.algo, self.seed, "", "", "", "", "", 1)
        if r.recovery_time_s is None:
            rec = ""
        elif math.isinf(r.recovery_time_s):
            rec = "inf"
        else:
            rec = f"{r.recovery_time_s:.9f}"
        return (
            self.scenario,
            self.algo,
            self.seed,
            f"{r.su_percent:.3f}",
            f"{r.fr:.3f}",
            f"{r.ql_us:.3f}",
            f"{r.dr_gbps:.3f}",
            rec,
            int(r.failed),
        )


def policy_controller_factory(path: str, target: float | None = None) -> ControllerFactory:
    """Evaluation-only agent from a float or quantized checkpoint."""
    meta: dict[str, Any] = {}
    try:
        meta = load_document(sidecar_path(path))
    except ConfigError:
        meta = {}
    cfg = PolicyConfig.from_dict(meta.get("policy"))
    tgt = float(target if target is not None else meta.get("target", TARGET_STANDARD))
    if is_quantized(path):
        qp = load_quantized(path)
        agent = AdpgAgent(qp.dequantize(), cfg, tgt, quantized=qp, record=False)
    else:
        agent = AdpgAgent(load_checkpoint(path), cfg, tgt, record=False)
    if agent.params.feature_count != len(cfg.features):
        raise ConfigError(f"{path}: checkpoint has {agent.params.feature_count} features, config lists {len(cfg.features)}")
    return agent.controller_factory(None)


def controller_factory(
    algo: str, algo_params: dict[str, dict[str, Any]] | None = None, checkpoints: dict[str, str] | None = None
) -> ControllerFactory:
    if checkpoints and algo in checkpoints:
        return policy_controller_factory(checkpoints[algo])
    return rule_controller_factory(algo, (algo_params or {}).get(algo))


def run_single(
    spec: ScenarioSpec,
    algo: str,
    seed: int,
    *,
    algo_params: dict[str, dict[str, Any]] | None = None,
    checkpoints: dict[str, str] | None = None,
    trace_sink: TextIO | None = None,
) -> RunRecord:
    """One (scenario, algorithm, seed) run; failures are captured in the record.

    With `trace_sink`, every dispatched event is written as
    `time_ns kind flow_id port occupancy`, after a `# scenario algo seed` header.
    """
    s = replace(spec, seed=int(seed))
    params = dict((algo_params or {}).get(algo, {}))
    t0 = time.perf_counter()
    if trace_sink is not None:
        trace_sink.write(f"# {s.label} {algo} seed={int(seed)}\n")
    try:
        sim = build_scenario(s, trace_sink=trace_sink)
        sim.attach(controller_factory(algo, algo_params, checkpoints))
        sim.run()
        report = compute_metrics(sim.recorder, scenario=s.label, long_short=s.kind is ScenarioKind.LONG_SHORT)
        return RunRecord(s.label, algo, int(seed), s.to_dict(), params, report, time.perf_counter() - t0)
    except CcGymError as e:
        logger.warning("run %s/%s/seed=%d failed: %s", s.label, algo, seed, e)
        return RunRecord(s.label, algo, int(seed), s.to_dict(), params, None, time.perf_counter() - t0, str(e))


def _run_job(job: tuple[ScenarioSpec, str, int, dict[str, dict[str, Any]], dict[str, str]]) -> RunRecord:
    spec, algo, seed, algo_params, checkpoints = job
    return run_single(spec, algo, seed, algo_params=algo_params, checkpoints=checkpoints)


def run_benchmark(
    suite: SuiteConfig,
    *,
    csv_path: str | None = None,
    workers: int | None = None,
    trace_sink: TextIO | None = None,
) -> list[RunRecord]:
    """Every scenario x algorithm x seed, in that order regardless of parallelism.

    Tracing runs serially into the one sink.
    """
    suite.validate()
    jobs = [
        (spec, algo, seed, suite.algo_params, suite.checkpoints)
        for spec in suite.scenarios
        for algo in suite.algorithms
        for seed in suite.seeds
    ]
    n_workers = max(1, int(workers if workers is not None else suite.workers))
    logger.info("benchmark: %d runs on %d worker(s)", len(jobs), n_workers)
    if trace_sink is not None:
        records = [
            run_single(spec, algo, seed, algo_params=ap, checkpoints=ck, trace_sink=trace_sink)
            for spec, algo, seed, ap, ck in jobs
        ]
    elif n_workers == 1:
        records = [_run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            records = list(pool.map(_run_job, jobs))
    if csv_path is not None:
        write_csv(csv_path, RUN_HEADER, (r.csv_row() for r in records))
    return records


def runs_csv(records: list[RunRecord]) -> str:
    return csv_text(RUN_HEADER, (r.csv_row() for r in records))


def report_header() -> str:
    return (
        f"# warm-up: first {WARMUP_FRACTION:.0%} of each run excluded; bins: {METRICS_BIN_NS / 1000:g} us; "
        f"a run fails if drops occur in more than {DROP_BIN_FAIL_SHARE:.0%} of bins "
        f"(long-short: also if the long flow never recovers)"
    )


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def summary_table(records: list[RunRecord]) -> str:
    """Aligned per-(scenario, algo) table of seed means with std; '*' marks non-dominated rows."""
    groups: dict[tuple[str, str], list[MetricsReport]] = {}
    failures: dict[tuple[str, str], int] = {}
    for r in records:
        key = (r.scenario, r.algo)
        groups.setdefault(key, [])
        failures[key] = failures.get(key, 0) + int(r.failed)
        if r.report is not None:
            groups[key].append(r.report)

    keys = list(groups)
    means: list[MetricsReport | None] = []
    cells: list[list[str]] = []
    for key in keys:
        reps = groups[key]
        if not reps:
            means.append(None)
            cells.append([key[0], key[1], "-", "-", "-", "-", "-", str(failures[key])])
            continue
        su = _mean_std([x.su_percent for x in reps])
        fr = _mean_std([x.fr for x in reps])
        ql = _mean_std([x.ql_us for x in reps])
        dr = _mean_std([x.dr_gbps for x in reps])
        means.append(MetricsReport(key[0], su[0], fr[0], ql[0], dr[0], reps[0].window_ns))
        recs = [x.recovery_time_s for x in reps if x.recovery_time_s is not None]
        if not recs:
            rec = "-"
        elif any(math.isinf(v) for v in recs):
            rec = "inf"
        else:
            m, s = _mean_std([v * 1e6 for v in recs])
            rec = f"{m:.1f}±{s:.1f}"
        cells.append(
            [
                key[0],
                key[1],
                f"{su[0]:.1f}±{su[1]:.1f}",
                f"{fr[0]:.1f}±{fr[1]:.1f}",
                f"{ql[0]:.2f}±{ql[1]:.2f}",
                f"{dr[0]:.2f}±{dr[1]:.2f}",
                rec,
                str(failures[key]),
            ]
        )

    present = [m for m in means if m is not None]
    flags = iter(non_dominated(present))
    for row, m in zip(cells, means):
        mark = "*" if m is not None and next(flags) else " "
        row[1] = f"{mark}{row[1]}"

    header = ["scenario", " algo", "SU %", "FR", "QL us", "DR Gbps", "RT us", "failed"]
    widths = [max(len(header[i]), *(len(c[i]) for c in cells)) if cells else len(header[i]) for i in range(len(header))]
    lines = [report_header(), "  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for c in cells:
        lines.append("  ".join(v.ljust(w) for v, w in zip(c, widths)))
    lines.append("* = not dominated within its scenario")
    return "\n".join(lines)
