from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

from ccgym.config import NetConfig
from ccgym.sim.packets import Packet, PacketKind, serialization_ns


NS_PER_S = 1_000_000_000


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass
class FlowState:
    """Per-flow transmission and accounting state.

    Byte credit is kept in bit-nanoseconds (rate_bps * ns) so accrual is exact.
    """

    flow_id: int
    src_host: int
    dst_host: int
    rate_bps: int
    start_ns: int = 0
    size_bytes: int | None = None  # None = infinite backlog
    long_lived: bool = True
    base_rtt_ns: int = 0
    last_rtt_ns: int = 0
    cnp_count: int = 0
    nack_count: int = 0
    bytes_sent: int = 0
    bytes_delivered: int = 0
    bytes_dropped: int = 0
    bytes_in_flight: int = 0
    active: bool = False
    finished_at_ns: int | None = None
    credit: int = 0
    credit_at_ns: int = 0
    last_sched_ns: int = 0
    last_cnp_sent_ns: int | None = None
    bursts: int = 0

    def remaining_packets(self, mtu_bytes: int) -> int | None:
        if self.size_bytes is None:
            return None
        return max(0, _ceil_div(self.size_bytes - self.bytes_sent, mtu_bytes))

    def settle_credit(self, now: int, cap: int) -> int:
        """Accrue credit at the current rate up to `now`, capped; returns the new credit."""
        elapsed = now - self.credit_at_ns
        if elapsed > 0:
            self.credit = min(cap, self.credit + self.rate_bps * elapsed)
            self.credit_at_ns = now
        return self.credit

    def set_rate(self, rate_bps: int, now: int, cap: int) -> None:
        self.settle_credit(now, cap)
        self.rate_bps = int(rate_bps)

    def ready_at(self, now: int, net: NetConfig) -> int:
        """Earliest time this flow is eligible for a burst (<= now means ready)."""
        mtu_units = net.mtu_bytes * 8 * NS_PER_S
        cap = net.max_burst_bytes * 8 * NS_PER_S
        remaining = self.remaining_packets(net.mtu_bytes)
        if remaining is not None:
            cap = min(cap, max(1, remaining) * mtu_units)
        credit = min(cap, self.credit + self.rate_bps * max(0, now - self.credit_at_ns))
        if credit >= cap:
            return now
        full_at = now + _ceil_div(cap - credit, self.rate_bps)
        if credit >= mtu_units:
            one_at = now
        else:
            one_at = now + _ceil_div(mtu_units - credit, self.rate_bps)
        interval_at = max(one_at, self.last_sched_ns + net.sched_interval_ns)
        return min(full_at, interval_at)


@dataclass
class HostSched:
    """Round-robin scheduler over the flows that originate at one host."""

    host_id: int
    link_rate_bps: int
    max_burst_bytes: int
    flow_ids: list[int] = field(default_factory=list)
    cursor: int = 0
    busy_until: int = 0
    wake_token: int = 0
    wake_at: int | None = None


def schedule_burst(
    host: HostSched,
    flow: FlowState,
    now: int,
    net: NetConfig,
    ids: Iterator[int],
) -> tuple[list[Packet], int | None]:
    """Emit one burst for `flow` and return it with the host's next schedule time.

    The data part is the accrued byte credit rounded down to whole packets (and
    capped at the max burst); the remainder is carried. A non-empty burst ends
    with one RTT probe. An empty burst has no probe, and the next schedule is
    when one packet of credit will be available. Inactive flows get (`[]`, None).
    """
    if not flow.active:
        return [], None
    mtu = net.mtu_bytes
    mtu_units = mtu * 8 * NS_PER_S
    cap = host.max_burst_bytes * 8 * NS_PER_S
    credit = flow.settle_credit(now, cap)
    n = credit // mtu_units
    remaining = flow.remaining_packets(mtu)
    if remaining is not None:
        n = min(n, remaining)
    flow.last_sched_ns = now
    if n <= 0:
        wait = _ceil_div(mtu_units - credit, flow.rate_bps) if credit < mtu_units else 1
        return [], now + max(1, wait)

    flow.credit = credit - n * mtu_units
    burst: list[Packet] = []
    for _ in range(n):
        burst.append(Packet(next(ids), flow.flow_id, PacketKind.DATA, mtu, now))
    data_bytes = n * mtu
    probe_send = now + serialization_ns(data_bytes, host.link_rate_bps)
    burst.append(Packet(next(ids), flow.flow_id, PacketKind.RTT_PROBE, net.probe_bytes, probe_send))
    flow.bytes_sent += data_bytes
    flow.bytes_in_flight += data_bytes
    flow.bursts += 1
    if flow.size_bytes is not None and flow.bytes_sent >= flow.size_bytes:
        flow.active = False
    ser = serialization_ns(data_bytes + net.probe_bytes, host.link_rate_bps)
    return burst, now + ser
