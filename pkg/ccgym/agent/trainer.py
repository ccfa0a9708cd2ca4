from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Any

import numpy as np

from ccgym.agent.adpg import COEFF_MODES, AdpgAgent, AdpgController, KeySeparatedReplay, adpg_gradient
from ccgym.agent.policy import Optimizer, PolicyConfig, PolicyParams, init_params
from ccgym.bench.metrics import compute_metrics
from ccgym.config import (
    MAX_DECISION_STEPS,
    OPERATION_POINTS,
    ROLLOUT_LEN,
    SEED,
    TARGET_STANDARD,
    TRAIN_FLOWS,
    TRAIN_LEARNING_RATE,
    TRAIN_OPTIMIZER,
    NetConfig,
)
from ccgym.core.errors import ConfigError, ContractError, TrainingDiverged
from ccgym.core.save import save_checkpoint, write_csv
from ccgym.sim.network import Simulation
from ccgym.sim.scenarios import build_many_to_one, many_to_one


logger = logging.getLogger(__name__)

CURVE_HEADER = ("iteration", "mean_reward", "mean_abs_coeff", "su", "fr")


def default_train_policy() -> PolicyConfig:
    return PolicyConfig(lr=TRAIN_LEARNING_RATE, optimizer=TRAIN_OPTIMIZER)


def parse_target(value: Any) -> float:
    if isinstance(value, str):
        key = value.strip().lower()
        if key in OPERATION_POINTS:
            return OPERATION_POINTS[key]
        try:
            return float(key)
        except ValueError as e:
            raise ConfigError(f"unknown target {value!r} (use strict, standard, loose or a number)") from e
    return float(value)


@dataclass
class TrainConfig:
    target: float = TARGET_STANDARD
    lr: float = TRAIN_LEARNING_RATE
    rollout_len: int = ROLLOUT_LEN
    # Upper bound; the decision-step budget usually ends training first.
    iterations: int = 1_000
    max_decision_steps: int = MAX_DECISION_STEPS
    train_flows: tuple[int, ...] = TRAIN_FLOWS
    seed: int = SEED
    coeff_mode: str = "trajectory_mean"
    # Simulations are rebuilt with fresh seeds after this many iterations.
    episode_iterations: int = 10
    checkpoint_every: int = 25
    # Simulated time advanced per slice while collecting a rollout.
    slice_ns: int = 10_000
    max_iteration_ns: int = 200_000
    float64: bool = False
    max_skipped_updates: int = 3
    net: NetConfig = field(default_factory=NetConfig)
    policy: PolicyConfig = field(default_factory=default_train_policy)

    def validate(self) -> None:
        if self.rollout_len < 1:
            raise ConfigError("train: rollout_len must be >= 1")
        if not self.target > 0:
            raise ConfigError(f"train: target must be > 0, got {self.target}")
        if self.iterations < 1:
            raise ConfigError("train: iterations must be >= 1")
        if self.max_decision_steps < 1:
            raise ConfigError("train: max_decision_steps must be >= 1")
        if not self.train_flows or any(n < 1 for n in self.train_flows):
            raise ConfigError("train: train_flows must list positive flow counts")
        if self.coeff_mode not in COEFF_MODES:
            raise ConfigError(f"train: coeff_mode must be one of {COEFF_MODES}")
        if self.lr < 0:
            raise ConfigError("train: lr must be >= 0")
        if self.episode_iterations < 1 or self.slice_ns <= 0 or self.max_iteration_ns < self.slice_ns:
            raise ConfigError("train: bad episode/slice settings")
        self.net.validate()
        self.policy.validate()

    def to_dict(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("net", "policy")}
        d["train_flows"] = list(self.train_flows)
        d["net"] = self.net.to_dict()
        d["policy"] = self.policy.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "TrainConfig":
        if not data:
            return cls()
        names = {f.name for f in fields(cls)} - {"net", "policy"}
        raw = {k: v for k, v in data.items() if k in names}
        if "target" in raw:
            raw["target"] = parse_target(raw["target"])
        if "train_flows" in raw:
            raw["train_flows"] = tuple(int(n) for n in raw["train_flows"])
        policy = PolicyConfig.from_dict({**default_train_policy().to_dict(), **(data.get("policy") or {})})
        cfg = cls(net=NetConfig.from_dict(data.get("net")), policy=policy, **raw)
        if "lr" not in data and (data.get("policy") or {}).get("lr") is not None:
            cfg.lr = float(cfg.policy.lr)
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class CurveRecord:
    iteration: int
    mean_reward: float
    mean_abs_coeff: float
    su: float
    fr: float

    def row(self) -> tuple[Any, ...]:
        return (self.iteration, f"{self.mean_reward:.6f}", f"{self.mean_abs_coeff:.6f}", f"{self.su:.2f}", f"{self.fr:.2f}")


@dataclass
class TrainResult:
    params: PolicyParams
    curve: list[CurveRecord]
    decision_steps: int
    skipped_updates: int
    checkpoint: str | None


@dataclass
class _Episode:
    sim: Simulation
    replay: KeySeparatedReplay
    flows: int


def _build_episode(cfg: TrainConfig, agent: AdpgAgent, flows: int, episode: int) -> _Episode:
    seed = cfg.seed + 7919 * episode + flows
    spec = many_to_one(flows, duration_ns=cfg.max_iteration_ns * cfg.episode_iterations, seed=seed, net=cfg.net)
    sim = build_many_to_one(spec)
    replay = KeySeparatedReplay(capacity=cfg.rollout_len)
    sim.attach(agent.controller_factory(replay, instance=f"{flows}->1#{episode}"))
    return _Episode(sim, replay, flows)


def _collect(ep: _Episode, rollout_len: int, slice_ns: int, max_ns: int) -> tuple[int, int]:
    """Advance until every started flow has `rollout_len` fresh steps (or the time cap)."""
    ep.replay.clear()
    for ctl in ep.sim.controllers.values():
        if isinstance(ctl, AdpgController):
            ctl.reset_tape()
    t0 = ep.sim.now
    deadline = t0 + max_ns
    while ep.sim.now < deadline:
        ep.sim.run_until(min(deadline, ep.sim.now + slice_ns))
        counts = [len(v) for v in ep.replay.rollouts.values()]
        if counts and len(counts) == ep.flows and min(counts) >= rollout_len:
            break
    return t0, ep.sim.now


def train(
    cfg: TrainConfig,
    *,
    out: str | None = None,
    curve_path: str | None = None,
    params: PolicyParams | None = None,
) -> TrainResult:
    """Collect rollouts on the many-to-one train set, then take one ascent step; repeat until the
    iteration cap or the decision-step budget."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    dtype = np.float64 if cfg.float64 else np.float32
    if params is None:
        params = init_params(len(cfg.policy.features), rng, init_range=cfg.policy.init_range, dtype=dtype)
    policy_cfg = PolicyConfig.from_dict({**cfg.policy.to_dict(), "lr": cfg.lr})
    opt = Optimizer.from_config(policy_cfg)
    agent = AdpgAgent(params, policy_cfg, cfg.target)
    meta = {"target": cfg.target, "policy": policy_cfg.to_dict(), "train": cfg.to_dict()}

    curve: list[CurveRecord] = []
    episodes: list[_Episode] = []
    steps_total = 0
    skipped = 0
    consecutive_skips = 0
    last_good: str | None = None
    peak_steps = 0

    for it in range(1, cfg.iterations + 1):
        if steps_total + peak_steps > cfg.max_decision_steps:
            logger.info("decision-step budget reached after %d iterations (%d steps)", it - 1, steps_total)
            break
        if (it - 1) % cfg.episode_iterations == 0:
            episode = (it - 1) // cfg.episode_iterations
            episodes = [_build_episode(cfg, agent, n, episode) for n in cfg.train_flows]

        sus: list[float] = []
        frs: list[float] = []
        for ep in episodes:
            t0, t1 = _collect(ep, cfg.rollout_len, cfg.slice_ns, cfg.max_iteration_ns)
            try:
                report = compute_metrics(ep.sim.recorder, (t0, t1), scenario=ep.sim.name)
                sus.append(report.su_percent)
                frs.append(report.fr)
            except ConfigError:
                logger.debug("iteration %d: %s window too short for metrics", it, ep.sim.name)
        replay = KeySeparatedReplay.merge(ep.replay for ep in episodes)
        steps = replay.seen
        steps_total += steps
        peak_steps = max(peak_steps, steps)
        grads = adpg_gradient(replay, agent.params, cfg.coeff_mode)
        try:
            agent.params = opt.step(agent.params, grads)
            consecutive_skips = 0
        except ContractError as e:
            skipped += 1
            consecutive_skips += 1
            logger.warning("iteration %d: %s", it, e)
            if consecutive_skips > cfg.max_skipped_updates:
                raise TrainingDiverged(f"training diverged at iteration {it}", last_good=last_good) from e

        rec = CurveRecord(
            iteration=it,
            mean_reward=replay.mean_reward(),
            mean_abs_coeff=replay.mean_abs_coeff(),
            su=float(np.mean(sus)) if sus else 0.0,
            fr=float(np.mean(frs)) if frs else 0.0,
        )
        curve.append(rec)
        logger.info(
            "iter %d: steps=%d reward=%.4f |coeff|=%.4f su=%.1f fr=%.1f",
            it, steps, rec.mean_reward, rec.mean_abs_coeff, rec.su, rec.fr,
        )
        if out is not None and cfg.checkpoint_every > 0 and it % cfg.checkpoint_every == 0:
            save_checkpoint(out, agent.params, meta)
            last_good = out

    if out is not None:
        save_checkpoint(out, agent.params, meta)
    if curve_path is not None:
        write_curve(curve_path, curve)
    return TrainResult(agent.params, curve, steps_total, skipped, out)


def write_curve(path: str, curve: list[CurveRecord]) -> None:
    write_csv(path, CURVE_HEADER, (r.row() for r in curve))
