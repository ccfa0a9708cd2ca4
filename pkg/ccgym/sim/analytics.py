from __future__ import annotations

from dataclasses import dataclass, field

from ccgym.config import METRICS_BIN_NS


@dataclass(frozen=True)
class RateSample:
    t: int  # ns, probe return time
    rate_bps: int
    rtt_ns: int


@dataclass
class BinMetrics:
    """Counters for one fixed-width time bin."""

    # delivered data bytes by egress port / by flow
    delivered_by_port: dict[int, int] = field(default_factory=dict)
    delivered_by_flow: dict[int, int] = field(default_factory=dict)
    dropped_bytes: int = 0
    drops: int = 0
    # queueing wait of packets that started service in this bin
    wait_ns_total: int = 0
    wait_count: int = 0


@dataclass
class MetricsRecorder:
    """Binned run counters plus per-flow probe samples, filled by the simulator."""

    bin_ns: int = METRICS_BIN_NS
    bins: dict[int, BinMetrics] = field(default_factory=dict)
    samples: dict[int, list[RateSample]] = field(default_factory=dict)
    flow_port: dict[int, int] = field(default_factory=dict)
    flow_start_ns: dict[int, int] = field(default_factory=dict)
    flow_finish_ns: dict[int, int] = field(default_factory=dict)
    long_flows: set[int] = field(default_factory=set)
    bottleneck_ports: list[int] = field(default_factory=list)
    port_rate_bps: int = 0
    duration_ns: int = 0

    def _bin(self, t: int) -> BinMetrics:
        b = max(0, int(t)) // self.bin_ns
        m = self.bins.get(b)
        if m is None:
            m = BinMetrics()
            self.bins[b] = m
        return m

    def record_delivery(self, *, t: int, flow_id: int, size_bytes: int) -> None:
        m = self._bin(t)
        port = self.flow_port.get(flow_id, -1)
        m.delivered_by_port[port] = m.delivered_by_port.get(port, 0) + int(size_bytes)
        m.delivered_by_flow[flow_id] = m.delivered_by_flow.get(flow_id, 0) + int(size_bytes)

    def record_drop(self, *, t: int, size_bytes: int) -> None:
        m = self._bin(t)
        m.drops += 1
        m.dropped_bytes += int(size_bytes)

    def record_wait(self, *, t: int, wait_ns: int) -> None:
        m = self._bin(t)
        m.wait_ns_total += int(wait_ns)
        m.wait_count += 1

    def record_probe(self, *, t: int, flow_id: int, rate_bps: int, rtt_ns: int) -> None:
        self.samples.setdefault(flow_id, []).append(RateSample(int(t), int(rate_bps), int(rtt_ns)))

    def record_flow_start(self, *, t: int, flow_id: int) -> None:
        self.flow_start_ns[flow_id] = int(t)

    def record_flow_finish(self, *, t: int, flow_id: int) -> None:
        self.flow_finish_ns[flow_id] = int(t)

    def bin_range(self, start_ns: int, end_ns: int) -> range:
        """Indices of the bins fully inside [start_ns, end_ns)."""
        first = -(-int(start_ns) // self.bin_ns)
        last = int(end_ns) // self.bin_ns
        return range(first, max(first, last))

    def delivered_bytes(self, *, port: int | None = None, flow_id: int | None = None) -> int:
        total = 0
        for m in self.bins.values():
            if flow_id is not None:
                total += m.delivered_by_flow.get(flow_id, 0)
            elif port is not None:
                total += m.delivered_by_port.get(port, 0)
            else:
                total += sum(m.delivered_by_port.values())
        return total
