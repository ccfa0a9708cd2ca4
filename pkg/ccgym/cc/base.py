from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Callable, Generic, Protocol, TypeVar

from ccgym.core.errors import ContractError
from ccgym.sim.host import FlowState
from ccgym.sim.packets import Telemetry


class CcEventKind(str, Enum):
    PROBE_RETURNED = "ProbeReturned"
    CNP_RECEIVED = "CnpReceived"
    NACK_RECEIVED = "NackReceived"
    TIMER_FIRED = "TimerFired"


@dataclass(frozen=True)
class CcEvent:
    kind: CcEventKind
    now: int
    flow_id: int
    rtt_ns: int = 0
    telemetry: Telemetry | None = None

    @classmethod
    def probe(cls, now: int, flow_id: int, rtt_ns: int, telemetry: Telemetry | None = None) -> "CcEvent":
        return cls(CcEventKind.PROBE_RETURNED, now, flow_id, rtt_ns=rtt_ns, telemetry=telemetry)

    @classmethod
    def cnp(cls, now: int, flow_id: int) -> "CcEvent":
        return cls(CcEventKind.CNP_RECEIVED, now, flow_id)

    @classmethod
    def nack(cls, now: int, flow_id: int) -> "CcEvent":
        return cls(CcEventKind.NACK_RECEIVED, now, flow_id)

    @classmethod
    def timer(cls, now: int, flow_id: int) -> "CcEvent":
        return cls(CcEventKind.TIMER_FIRED, now, flow_id)


@dataclass(frozen=True)
class CcDecision:
    new_rate_bps: int


@dataclass(frozen=True)
class FlowContext:
    """Static per-flow facts handed to a controller at setup."""

    flow_id: int
    link_rate_bps: int
    min_rate_bps: int
    base_rtt_ns: int
    initial_rate_bps: int


def clamp_rate(rate_bps: float, ctx: FlowContext) -> int:
    """Integer rate in (min_rate, link_rate]."""
    if not math.isfinite(rate_bps):
        raise ContractError(f"flow {ctx.flow_id}: non-finite rate {rate_bps}")
    lo = ctx.min_rate_bps + 1
    return max(lo, min(ctx.link_rate_bps, int(rate_bps)))


def clamp_internal(rate_bps: float, ctx: FlowContext) -> float:
    return max(float(ctx.min_rate_bps + 1), min(float(ctx.link_rate_bps), float(rate_bps)))


S = TypeVar("S")
P = TypeVar("P")


@dataclass(frozen=True)
class CcAlgorithm(Generic[S, P]):
    """A rule-based algorithm: pure init/update functions over a frozen state."""

    name: str
    params_cls: type
    init: Callable[[FlowContext, P], S]
    update: Callable[[S, CcEvent, P, FlowContext], S]
    timer_ns: Callable[[P], int]

    def params_from_dict(self, data: dict[str, Any] | None) -> P:
        return self.params_cls.from_dict(data)


def cc_on_event(algo: CcAlgorithm, state: Any, ev: CcEvent, params: Any, ctx: FlowContext) -> tuple[CcDecision, Any]:
    """Run one algorithm step and clamp the result; pure given its arguments."""
    if ev.flow_id != state.flow_id:
        raise ContractError(f"event for flow {ev.flow_id} routed to state of flow {state.flow_id}")
    nxt = algo.update(state, ev, params, ctx)
    rate = clamp_rate(nxt.rate_bps, ctx)
    nxt = replace(nxt, rate_bps=float(rate))
    return CcDecision(rate), nxt


class CongestionControl(Protocol):
    timer_ns: int

    def on_event(self, flow: FlowState, ev: CcEvent) -> CcDecision | None:
        ...


ControllerFactory = Callable[[FlowContext], CongestionControl]


class RuleController:
    """Per-flow driver that owns one algorithm state inside a simulation."""

    def __init__(self, algo: CcAlgorithm, params: Any, ctx: FlowContext) -> None:
        self.algo = algo
        self.params = params
        self.ctx = ctx
        self.state = algo.init(ctx, params)
        self.timer_ns = int(algo.timer_ns(params))
        self.decisions = 0

    def on_event(self, flow: FlowState, ev: CcEvent) -> CcDecision | None:
        decision, self.state = cc_on_event(self.algo, self.state, ev, self.params, self.ctx)
        if ev.kind is CcEventKind.PROBE_RETURNED:
            flow.cnp_count = 0
            flow.nack_count = 0
        self.decisions += 1
        return decision


@dataclass(frozen=True)
class FixedParams:
    def to_dict(self) -> dict[str, Any]:
        return {}

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "FixedParams":
        return cls()


@dataclass(frozen=True)
class FixedState:
    flow_id: int
    rate_bps: float


def _fixed_init(ctx: FlowContext, params: FixedParams) -> FixedState:
    return FixedState(ctx.flow_id, float(ctx.initial_rate_bps))


def _fixed_update(state: FixedState, ev: CcEvent, params: FixedParams, ctx: FlowContext) -> FixedState:
    return state


FIXED = CcAlgorithm("fixed", FixedParams, _fixed_init, _fixed_update, lambda p: 0)
