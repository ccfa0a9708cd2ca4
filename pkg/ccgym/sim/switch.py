from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field

from ccgym.config import ECN_KMAX_BYTES, ECN_KMIN_BYTES, ECN_PMAX, SWITCH_BUFFER_BYTES
from ccgym.core.errors import SchedulerError
from ccgym.sim.packets import Packet, Telemetry, serialization_ns


@dataclass(frozen=True)
class EnqueueResult:
    dropped: bool
    marked: bool = False


DROPPED = EnqueueResult(dropped=True)
ENQUEUED = EnqueueResult(dropped=False, marked=False)
ENQUEUED_MARKED = EnqueueResult(dropped=False, marked=True)


@dataclass
class SwitchPort:
    """Egress port with a FIFO byte-bounded buffer and RED-style ECN marking."""

    port_id: int
    service_rate_bps: int
    capacity_bytes: int = SWITCH_BUFFER_BYTES
    ecn_kmin_bytes: int = ECN_KMIN_BYTES
    ecn_kmax_bytes: int = ECN_KMAX_BYTES
    ecn_pmax: float = ECN_PMAX
    telemetry: bool = True
    occupancy_bytes: int = 0
    drop_count: int = 0
    dropped_bytes: int = 0
    tx_bytes: int = 0
    marked_count: int = 0
    served_count: int = 0
    wait_ns_total: int = 0
    last_wait_ns: int = 0
    busy: bool = False
    queue: deque[Packet] = field(default_factory=deque)

    def marking_probability(self, occupancy_bytes: int) -> float:
        if occupancy_bytes <= self.ecn_kmin_bytes:
            return 0.0
        if occupancy_bytes >= self.ecn_kmax_bytes:
            return 1.0
        span = float(self.ecn_kmax_bytes - self.ecn_kmin_bytes)
        return self.ecn_pmax * (occupancy_bytes - self.ecn_kmin_bytes) / span


def switch_enqueue(port: SwitchPort, pkt: Packet, now: int, rng: random.Random) -> EnqueueResult:
    """Admit `pkt` to the port buffer or drop it when it would overflow."""
    size = pkt.size_bytes
    occ = port.occupancy_bytes
    if occ + size > port.capacity_bytes:
        port.drop_count += 1
        port.dropped_bytes += size
        return DROPPED
    marked = False
    if pkt.is_data:
        p = port.marking_probability(occ)
        # Draw only inside the RED band so the RNG stream does not depend on idle traffic.
        if p >= 1.0 or (p > 0.0 and rng.random() < p):
            marked = True
            pkt.ecn_marked = True
            port.marked_count += 1
    port.occupancy_bytes = occ + size
    assert port.occupancy_bytes <= port.capacity_bytes
    pkt.enqueued_at = now
    port.queue.append(pkt)
    return ENQUEUED_MARKED if marked else ENQUEUED


def switch_dequeue(port: SwitchPort, now: int) -> tuple[Packet, int]:
    """Start serving the head-of-line packet; returns it with its departure time."""
    if not port.queue:
        raise SchedulerError(f"dequeue on empty port {port.port_id}")
    pkt = port.queue.popleft()
    port.occupancy_bytes -= pkt.size_bytes
    assert port.occupancy_bytes >= 0
    depart = now + serialization_ns(pkt.size_bytes, port.service_rate_bps)
    wait = now - pkt.enqueued_at
    port.last_wait_ns = wait
    port.wait_ns_total += wait
    port.served_count += 1
    port.tx_bytes += pkt.size_bytes
    if port.telemetry:
        pkt.telemetry = Telemetry(
            queue_bytes=port.occupancy_bytes,
            tx_bytes_cum=port.tx_bytes,
            port_rate_bps=port.service_rate_bps,
            ts=depart,
        )
    return pkt, depart
