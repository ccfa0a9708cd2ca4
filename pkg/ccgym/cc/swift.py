from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Any

from ccgym.cc.base import CcAlgorithm, CcEvent, CcEventKind, FlowContext, clamp_internal
from ccgym.core.errors import ConfigError


@dataclass(frozen=True)
class SwiftParams:
    target_factor: float = 2.0  # target delay = factor x base RTT
    ai_bps: float = 0.5e9
    beta: float = 0.8
    max_mdf: float = 0.5  # decrease factor never below 1 - max_mdf

    def validate(self) -> None:
        if self.target_factor < 1.0:
            raise ConfigError(f"swift: target_factor must be >= 1, got {self.target_factor}")
        if self.ai_bps < 0:
            raise ConfigError("swift: ai_bps must be >= 0")
        if not 0.0 < self.max_mdf < 1.0:
            raise ConfigError("swift: max_mdf must be in (0,1)")
        if self.beta <= 0:
            raise ConfigError("swift: beta must be positive")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "SwiftParams":
        names = {f.name for f in fields(cls)}
        p = cls(**{k: v for k, v in (data or {}).items() if k in names})
        p.validate()
        return p


@dataclass(frozen=True)
class SwiftState:
    flow_id: int
    rate_bps: float
    target_delay_ns: int
    last_increase_ns: int | None = None
    last_decrease_ns: int | None = None
    last_rtt_ns: int = 0


def swift_init(ctx: FlowContext, params: SwiftParams) -> SwiftState:
    target = int(round(params.target_factor * ctx.base_rtt_ns))
    return SwiftState(ctx.flow_id, float(ctx.initial_rate_bps), target, last_rtt_ns=ctx.base_rtt_ns)


def _window_open(last: int | None, now: int, window_ns: int) -> bool:
    return last is None or now - last >= window_ns


def decrease_factor(rtt_ns: int, target_ns: int, params: SwiftParams) -> float:
    return max(1.0 - params.beta * (rtt_ns - target_ns) / rtt_ns, 1.0 - params.max_mdf)


def swift_update(state: SwiftState, ev: CcEvent, params: SwiftParams, ctx: FlowContext) -> SwiftState:
    """Delay-based AIMD: at most one increase and one decrease per RTT window."""
    if ev.kind is CcEventKind.NACK_RECEIVED:
        if not _window_open(state.last_decrease_ns, ev.now, state.last_rtt_ns):
            return state
        rate = clamp_internal(state.rate_bps * (1.0 - params.max_mdf), ctx)
        return replace(state, rate_bps=rate, last_decrease_ns=ev.now)
    if ev.kind is not CcEventKind.PROBE_RETURNED:
        return state

    rtt = max(1, ev.rtt_ns)
    if rtt < state.target_delay_ns:
        if not _window_open(state.last_increase_ns, ev.now, rtt):
            return replace(state, last_rtt_ns=rtt)
        rate = clamp_internal(state.rate_bps + params.ai_bps, ctx)
        return replace(state, rate_bps=rate, last_increase_ns=ev.now, last_rtt_ns=rtt)
    if not _window_open(state.last_decrease_ns, ev.now, rtt):
        return replace(state, last_rtt_ns=rtt)
    rate = clamp_internal(state.rate_bps * decrease_factor(rtt, state.target_delay_ns, params), ctx)
    return replace(state, rate_bps=rate, last_decrease_ns=ev.now, last_rtt_ns=rtt)


SWIFT = CcAlgorithm("swift", SwiftParams, swift_init, swift_update, lambda p: 0)
