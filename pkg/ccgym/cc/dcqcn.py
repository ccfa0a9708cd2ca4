from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Any

from ccgym.cc.base import CcAlgorithm, CcEvent, CcEventKind, FlowContext, clamp_internal
from ccgym.core.errors import ConfigError


@dataclass(frozen=True)
class DcqcnParams:
    g: float = 1.0 / 16.0
    timer_ns: int = 55_000
    fast_recovery_steps: int = 5
    rai_bps: float = 2.5e9
    rhai_bps: float = 10e9
    initial_alpha: float = 1.0

    def validate(self) -> None:
        if not 0.0 < self.g <= 1.0:
            raise ConfigError(f"dcqcn: g must be in (0,1], got {self.g}")
        if self.timer_ns <= 0:
            raise ConfigError("dcqcn: timer_ns must be positive")
        if self.fast_recovery_steps < 0:
            raise ConfigError("dcqcn: fast_recovery_steps must be >= 0")
        if not 0.0 <= self.initial_alpha <= 1.0:
            raise ConfigError("dcqcn: initial_alpha must be in [0,1]")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "DcqcnParams":
        names = {f.name for f in fields(cls)}
        p = cls(**{k: v for k, v in (data or {}).items() if k in names})
        p.validate()
        return p


@dataclass(frozen=True)
class DcqcnState:
    flow_id: int
    rate_bps: float  # current rate (Rc)
    target_bps: float  # Rt
    alpha: float
    # timer periods since the last CNP
    stage: int = 0
    cnp_in_period: bool = False


def dcqcn_init(ctx: FlowContext, params: DcqcnParams) -> DcqcnState:
    r = float(ctx.initial_rate_bps)
    return DcqcnState(ctx.flow_id, r, r, params.initial_alpha)


def dcqcn_update(state: DcqcnState, ev: CcEvent, params: DcqcnParams, ctx: FlowContext) -> DcqcnState:
    """Reaction point: cut on CNP, recover on the rate-increase timer."""
    if ev.kind is CcEventKind.CNP_RECEIVED:
        rc = clamp_internal(state.rate_bps * (1.0 - state.alpha / 2.0), ctx)
        alpha = min(1.0, (1.0 - params.g) * state.alpha + params.g)
        return replace(state, rate_bps=rc, target_bps=state.rate_bps, alpha=alpha, stage=0, cnp_in_period=True)

    if ev.kind is not CcEventKind.TIMER_FIRED:
        return state

    alpha = state.alpha if state.cnp_in_period else (1.0 - params.g) * state.alpha
    stage = state.stage + 1
    rt = state.target_bps
    f = params.fast_recovery_steps
    if stage > 2 * f:
        rt += params.rhai_bps
    elif stage > f:
        rt += params.rai_bps
    rt = clamp_internal(rt, ctx)
    rc = clamp_internal((rt + state.rate_bps) / 2.0, ctx)
    # Close the last half-step once the gap is below one bit per second.
    if rt - rc < 1.0:
        rc = rt
    return replace(state, rate_bps=rc, target_bps=rt, alpha=max(0.0, alpha), stage=stage, cnp_in_period=False)


DCQCN = CcAlgorithm("dcqcn", DcqcnParams, dcqcn_init, dcqcn_update, lambda p: p.timer_ns)
