from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Any

from ccgym.cc.base import CcAlgorithm, CcEvent, CcEventKind, FlowContext, clamp_internal
from ccgym.core.errors import ConfigError
from ccgym.sim.packets import Telemetry


@dataclass(frozen=True)
class HpccParams:
    eta: float = 0.95
    max_stage: int = 5
    ai_bps: float = 100e6

    def validate(self) -> None:
        if not 0.0 < self.eta <= 1.0:
            raise ConfigError(f"hpcc: eta must be in (0,1], got {self.eta}")
        if self.max_stage < 0:
            raise ConfigError("hpcc: max_stage must be >= 0")
        if self.ai_bps < 0:
            raise ConfigError("hpcc: ai_bps must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "HpccParams":
        names = {f.name for f in fields(cls)}
        p = cls(**{k: v for k, v in (data or {}).items() if k in names})
        p.validate()
        return p


@dataclass(frozen=True)
class HpccState:
    flow_id: int
    rate_bps: float
    ref_rate_bps: float
    stage: int = 0
    last_telemetry: Telemetry | None = None
    last_ref_update_ns: int | None = None
    utilization: float = 0.0


def hpcc_init(ctx: FlowContext, params: HpccParams) -> HpccState:
    r = float(ctx.initial_rate_bps)
    return HpccState(ctx.flow_id, r, r)


def normalized_utilization(prev: Telemetry, cur: Telemetry, base_rtt_ns: int, eta: float) -> float:
    """Port utilization from two telemetry stamps, divided by the target share `eta`.

    Queue term: qlen / (B * T); throughput term: tx rate / B.
    """
    b = float(cur.port_rate_bps)
    dt = cur.ts - prev.ts
    tx_rate = (cur.tx_bytes_cum - prev.tx_bytes_cum) * 8e9 / dt if dt > 0 else 0.0
    qlen_bits = min(cur.queue_bytes, prev.queue_bytes) * 8.0
    u = qlen_bits * 1e9 / (b * base_rtt_ns) + tx_rate / b
    return u / eta


def hpcc_update(state: HpccState, ev: CcEvent, params: HpccParams, ctx: FlowContext) -> HpccState:
    if ev.kind is not CcEventKind.PROBE_RETURNED or ev.telemetry is None:
        return state
    if state.last_telemetry is None:
        return replace(state, last_telemetry=ev.telemetry)
    u = normalized_utilization(state.last_telemetry, ev.telemetry, ctx.base_rtt_ns, params.eta)
    gate = state.last_ref_update_ns is None or ev.now - state.last_ref_update_ns >= ctx.base_rtt_ns
    if u >= 1.0 or state.stage >= params.max_stage:
        new = clamp_internal(state.ref_rate_bps / max(u, 1e-9) + params.ai_bps, ctx)
        if gate:
            return replace(
                state, rate_bps=new, ref_rate_bps=new, stage=0,
                last_telemetry=ev.telemetry, last_ref_update_ns=ev.now, utilization=u,
            )
    else:
        new = clamp_internal(state.ref_rate_bps + params.ai_bps, ctx)
        if gate:
            return replace(
                state, rate_bps=new, ref_rate_bps=new, stage=state.stage + 1,
                last_telemetry=ev.telemetry, last_ref_update_ns=ev.now, utilization=u,
            )
    return replace(state, rate_bps=new, last_telemetry=ev.telemetry, utilization=u)


HPCC = CcAlgorithm("hpcc", HpccParams, hpcc_init, hpcc_update, lambda p: 0)
