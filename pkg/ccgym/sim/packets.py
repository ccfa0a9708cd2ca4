from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class PacketKind(str, Enum):
    DATA = "Data"
    RTT_PROBE = "RttProbe"
    CNP = "Cnp"
    NACK = "Nack"


@dataclass(frozen=True, slots=True)
class Telemetry:
    """Per-hop switch stamp carried on a packet (INT-style)."""

    queue_bytes: int
    tx_bytes_cum: int
    port_rate_bps: int
    ts: int


@dataclass(slots=True)
class Packet:
    pkt_id: int
    flow_id: int
    kind: PacketKind
    size_bytes: int
    send_time: int
    ecn_marked: bool = False
    telemetry: Telemetry | None = None
    # Set by the switch on enqueue; used for queueing latency.
    enqueued_at: int = -1

    @property
    def is_data(self) -> bool:
        return self.kind is PacketKind.DATA


def serialization_ns(size_bytes: int, rate_bps: int) -> int:
    """Time to put `size_bytes` on a wire of `rate_bps`, rounded up to whole ns."""
    return -(-(int(size_bytes) * 8 * 1_000_000_000) // int(rate_bps))
