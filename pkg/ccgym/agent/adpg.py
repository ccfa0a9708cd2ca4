from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Iterator, Sequence

import numpy as np

from ccgym.agent.policy import (
    Observation,
    PolicyConfig,
    PolicyParams,
    PolicyState,
    Tape,
    action_map,
    backward,
    forward,
    initial_state,
    make_observation,
)
from ccgym.agent.quantize import QuantizedPolicy, qforward
from ccgym.cc.base import CcDecision, CcEvent, CcEventKind, ControllerFactory, FlowContext, clamp_rate
from ccgym.core.errors import ConfigError, ContractError
from ccgym.sim.host import FlowState


logger = logging.getLogger(__name__)

COEFF_MODES = ("trajectory_mean", "per_step")


@dataclass(frozen=True)
class RewardTerms:
    target: float
    rtt_inflation: float
    rate_norm: float

    def validate(self) -> None:
        if not self.target > 0:
            raise ContractError(f"reward: target must be > 0, got {self.target}")
        if not 0.0 < self.rate_norm <= 1.0 + 1e-12:
            raise ContractError(f"reward: rate_norm must be in (0,1], got {self.rate_norm}")
        if not math.isfinite(self.rtt_inflation) or self.rtt_inflation < 0:
            raise ContractError(f"reward: bad rtt_inflation {self.rtt_inflation}")


def coefficient(terms: RewardTerms) -> float:
    """target - inflation * sqrt(rate_norm): positive pushes the rate up, negative down."""
    terms.validate()
    return terms.target - terms.rtt_inflation * math.sqrt(terms.rate_norm)


def reward(terms: RewardTerms) -> float:
    c = coefficient(terms)
    return -(c * c)


@dataclass(frozen=True)
class RolloutStep:
    obs: Observation
    raw: float
    coeff: float
    time: int
    tape: Tape | None = None
    reward: float = 0.0


ReplayKey = Hashable


@dataclass
class KeySeparatedReplay:
    """Asynchronous per-flow rollouts stored under their own key, never interleaved.

    With a `capacity` each key keeps only its first `capacity` steps; `seen`
    still counts every step offered.
    """

    rollouts: dict[ReplayKey, list[RolloutStep]] = field(default_factory=dict)
    capacity: int | None = None
    seen: int = 0

    def append(self, key: ReplayKey, step: RolloutStep) -> None:
        if not math.isfinite(step.coeff):
            raise ContractError(f"replay {key}: non-finite coefficient")
        steps = self.rollouts.setdefault(key, [])
        if steps and step.time <= steps[-1].time:
            raise ContractError(f"replay {key}: step at t={step.time} not after t={steps[-1].time}")
        self.seen += 1
        if self.capacity is None or len(steps) < self.capacity:
            steps.append(step)

    def keys(self) -> list[ReplayKey]:
        return list(self.rollouts)

    def items(self) -> Iterator[tuple[ReplayKey, list[RolloutStep]]]:
        return iter(self.rollouts.items())

    def steps(self, key: ReplayKey) -> list[RolloutStep]:
        return self.rollouts.get(key, [])

    @property
    def total_steps(self) -> int:
        return sum(len(v) for v in self.rollouts.values())

    def __len__(self) -> int:
        return len(self.rollouts)

    def clear(self) -> None:
        self.rollouts.clear()
        self.seen = 0

    def trim(self, max_steps: int) -> None:
        """Keep only the most recent `max_steps` steps of each key."""
        for k, v in self.rollouts.items():
            if len(v) > max_steps:
                self.rollouts[k] = v[-max_steps:]

    def split(self) -> list["KeySeparatedReplay"]:
        return [KeySeparatedReplay({k: list(v)}, seen=len(v)) for k, v in self.rollouts.items()]

    @classmethod
    def merge(cls, parts: Iterable["KeySeparatedReplay"]) -> "KeySeparatedReplay":
        out = cls()
        for part in parts:
            for k, v in part.rollouts.items():
                if k in out.rollouts:
                    raise ContractError(f"replay merge: key {k} appears twice")
                out.rollouts[k] = list(v)
            out.seen += part.seen
        return out

    def mean_abs_coeff(self) -> float:
        vals = [abs(s.coeff) for v in self.rollouts.values() for s in v]
        return float(np.mean(vals)) if vals else 0.0

    def mean_reward(self) -> float:
        vals = [s.reward for v in self.rollouts.values() for s in v]
        return float(np.mean(vals)) if vals else 0.0


@dataclass
class AdpgAgent:
    """Policy shared read-only by every flow during rollout collection."""

    params: PolicyParams
    config: PolicyConfig
    target: float
    quantized: QuantizedPolicy | None = None
    record: bool = True

    def controller_factory(self, replay: KeySeparatedReplay | None = None, instance: str = "") -> ControllerFactory:
        def make(ctx: FlowContext) -> "AdpgController":
            return AdpgController(self, ctx, replay, (instance, ctx.flow_id))

        return make


class AdpgController:
    """Per-flow agent: acts on every returning RTT probe."""

    timer_ns = 0

    def __init__(self, agent: AdpgAgent, ctx: FlowContext, replay: KeySeparatedReplay | None, key: ReplayKey) -> None:
        self.agent = agent
        self.ctx = ctx
        self.replay = replay
        self.key = key
        dtype = np.float32 if agent.quantized is not None else agent.params.dtype
        self.state: PolicyState = initial_state(dtype)
        self.last_action = 1.0

    def reset_tape(self) -> None:
        """Drop recorded history so later tapes only hold steps taken under the current parameters."""
        self.state = PolicyState(self.state.lstm_hidden, self.state.lstm_cell, ())

    def on_event(self, flow: FlowState, ev: CcEvent) -> CcDecision | None:
        if ev.kind is not CcEventKind.PROBE_RETURNED:
            return None
        return self.on_probe_return(flow, ev.rtt_ns, ev.now)

    def on_probe_return(self, flow: FlowState, rtt_ns: int, now: int) -> CcDecision:
        if flow.base_rtt_ns <= 0:
            raise ContractError(f"flow {flow.flow_id}: no base RTT, flow not initialized")
        agent = self.agent
        rate_norm = flow.rate_bps / self.ctx.link_rate_bps
        inflation = rtt_ns / flow.base_rtt_ns
        obs = make_observation(rate_norm, inflation, flow.cnp_count, flow.nack_count, agent.config.features)
        tape: Tape | None = None
        if agent.quantized is not None:
            raw, self.state = qforward(agent.quantized, self.state, obs)
        else:
            window = agent.config.bptt_window if (agent.record and self.replay is not None) else 0
            raw, self.state, tape = forward(agent.params, self.state, obs, window=window)
        a = action_map(raw)
        self.last_action = a
        new_rate = clamp_rate(a * flow.rate_bps, self.ctx)
        if self.replay is not None and agent.record:
            terms = RewardTerms(agent.target, inflation, rate_norm)
            c = coefficient(terms)
            self.replay.append(self.key, RolloutStep(obs, raw, c, now, tape, -(c * c)))
        flow.cnp_count = 0
        flow.nack_count = 0
        return CcDecision(new_rate)


def adpg_gradient(
    replay: KeySeparatedReplay,
    params: PolicyParams,
    coeff_mode: str = "trajectory_mean",
) -> PolicyParams:
    """Sum over flows and steps of coeff x d(action)/d(params), normalized by the step count.

    trajectory_mean uses each flow's mean coefficient for all its steps;
    per_step uses the coefficient recorded at each step.
    """
    if coeff_mode not in COEFF_MODES:
        raise ConfigError(f"adpg: unknown coeff_mode {coeff_mode!r}")
    grads = params.zeros_like()
    total = replay.total_steps
    if total == 0:
        logger.warning("adpg_gradient: empty replay, no update")
        return grads
    for key, steps in replay.items():
        if not steps:
            continue
        cbar = float(np.mean([s.coeff for s in steps]))
        for s in steps:
            c = cbar if coeff_mode == "trajectory_mean" else s.coeff
            if c == 0.0:
                continue
            if s.tape is None:
                raise ContractError(f"replay {key}: step at t={s.time} has no tape")
            g = backward(params, s.tape, c)
            for name, arr in grads.items():
                arr += getattr(g, name)
    inv = 1.0 / total
    for _name, arr in grads.items():
        arr *= inv
    return grads


def fixed_point_check(
    n: int,
    rates: Sequence[float],
    inflations: Sequence[float],
    target: float,
    link_rate_bps: float,
    tol: float = 0.05,
) -> bool:
    """Whether N flows sit at a fixed point of the reward.

    Either every flow runs at line rate below the target, or every flow hits the
    target within `tol`. Equal shares C/N are not checked separately: they follow
    from the second case when the flows see equal inflations.
    """
    if n < 1 or len(rates) != n or len(inflations) != n:
        raise ConfigError(f"fixed_point_check: need {n} rates and inflations")
    norm = [r / link_rate_bps for r in rates]
    if all(abs(r - 1.0) <= tol for r in norm) and all(i * math.sqrt(r) < target for i, r in zip(inflations, norm)):
        return True
    return all(abs(i * math.sqrt(r) - target) <= tol * target for i, r in zip(inflations, norm))


# --- differentiable toy environment ---


@dataclass(frozen=True)
class ToyEnv:
    """Single flow whose inflation is a smooth function of its own rate."""

    target: float = 2.0
    kappa: float = 1.5

    def inflation(self, rate_norm: float) -> float:
        return 1.0 + self.kappa * rate_norm * rate_norm

    def level(self, rate_norm: float) -> float:
        return self.inflation(rate_norm) * math.sqrt(rate_norm)


def toy_rollout(
    params: PolicyParams, env: ToyEnv, rate0: float, horizon: int, *, record: bool = True
) -> tuple[float, KeySeparatedReplay]:
    """Run the policy on the toy for `horizon` steps; returns mean reward and the replay."""
    replay = KeySeparatedReplay()
    state = initial_state(params.dtype)
    rate = float(rate0)
    total = 0.0
    for t in range(horizon):
        obs = make_observation(rate, env.inflation(rate))
        raw, state, tape = forward(params, state, obs, window=horizon if record else 0)
        rate = action_map(raw) * rate
        c = env.target - env.level(rate)
        total += -(c * c)
        if record:
            replay.append("toy", RolloutStep(obs, raw, c, t, tape, -(c * c)))
    return total / horizon, replay


def toy_direction_agrees(params: PolicyParams, env: ToyEnv, rate0: float, horizon: int = 1, eps: float = 1e-5) -> bool:
    """Sign of <analytic update, exact reward gradient>, via a directional derivative."""
    _r, replay = toy_rollout(params, env, rate0, horizon)
    g = adpg_gradient(replay, params)
    norm = float(np.linalg.norm(g.flat()))
    if norm == 0.0:
        return False
    step = g.map(lambda a: a * (eps / norm))
    plus = PolicyParams(**{n: a + getattr(step, n) for n, a in params.items()})
    minus = PolicyParams(**{n: a - getattr(step, n) for n, a in params.items()})
    up, _ = toy_rollout(plus, env, rate0, horizon, record=False)
    down, _ = toy_rollout(minus, env, rate0, horizon, record=False)
    return up - down > 0.0
