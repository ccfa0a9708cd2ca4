from __future__ import annotations

import hashlib
import itertools
import logging
import random
from dataclasses import dataclass
from typing import Callable, TextIO

from ccgym.cc.base import CcEvent, CongestionControl, ControllerFactory, FlowContext
from ccgym.config import NetConfig
from ccgym.core.errors import ConfigError
from ccgym.core.events import EventKind, EventQueue, SimEvent, push_event
from ccgym.sim.analytics import MetricsRecorder
from ccgym.sim.host import NS_PER_S, FlowState, HostSched, schedule_burst
from ccgym.sim.packets import Packet, PacketKind, serialization_ns
from ccgym.sim.switch import SwitchPort, switch_dequeue, switch_enqueue


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Topology:
    """Hosts hanging off one switch; port `p` serves traffic toward host `p`."""

    net: NetConfig
    hosts: int
    ports: tuple[int, ...]

    def port_for(self, dst_host: int) -> int:
        if dst_host not in self.ports:
            raise ConfigError(f"topology: no switch port toward host {dst_host}")
        return dst_host

    def validate_flow(self, flow: FlowState) -> None:
        if not 0 <= flow.src_host < self.hosts:
            raise ConfigError(f"flow {flow.flow_id}: unknown source host {flow.src_host}")
        if not 0 <= flow.dst_host < self.hosts:
            raise ConfigError(f"flow {flow.flow_id}: unknown destination host {flow.dst_host}")
        if flow.src_host == flow.dst_host:
            raise ConfigError(f"flow {flow.flow_id}: source and destination are both host {flow.src_host}")
        self.port_for(flow.dst_host)
        if not 0 < flow.rate_bps <= self.net.link_rate_bps:
            raise ConfigError(f"flow {flow.flow_id}: rate {flow.rate_bps} outside (0, link rate]")


def compute_base_rtt(topology: Topology, flow: FlowState) -> int:
    """Empty-system probe RTT: forward serialization and propagation, return propagation."""
    topology.validate_flow(flow)
    net = topology.net
    forward = (
        serialization_ns(net.probe_bytes, net.link_rate_bps)
        + net.prop_delay_ns
        + serialization_ns(net.probe_bytes, net.link_rate_bps)
        + net.prop_delay_ns
    )
    return forward + 2 * net.prop_delay_ns


TIMER_START = "start"
TIMER_CC = "cc"


class Simulation:
    """One independent simulation instance: hosts, one switch, flows and their controllers."""

    def __init__(
        self,
        net: NetConfig,
        topology: Topology,
        flows: list[FlowState],
        *,
        seed: int,
        duration_ns: int = 0,
        name: str = "sim",
        bottleneck_ports: list[int] | None = None,
        trace: bool = False,
        trace_sink: TextIO | None = None,
    ) -> None:
        net.validate()
        self.net = net
        self.topology = topology
        self.name = name
        self.seed = int(seed)
        self.duration_ns = int(duration_ns)
        self.rng = random.Random(self.seed)
        self.queue = EventQueue()
        self.flows: dict[int, FlowState] = {}
        self.hosts: dict[int, HostSched] = {}
        self.ports: dict[int, SwitchPort] = {}
        self.controllers: dict[int, CongestionControl] = {}
        self._ids = itertools.count()
        self._started = False
        self._burst_cap = net.max_burst_bytes * 8 * NS_PER_S
        self._return_ns = 2 * net.prop_delay_ns

        for port_id in topology.ports:
            self.ports[port_id] = SwitchPort(
                port_id=port_id,
                service_rate_bps=net.link_rate_bps,
                capacity_bytes=net.buffer_bytes,
                ecn_kmin_bytes=net.ecn.kmin_bytes,
                ecn_kmax_bytes=net.ecn.kmax_bytes,
                ecn_pmax=net.ecn.pmax,
                telemetry=net.telemetry,
            )
        self.recorder = MetricsRecorder(bin_ns=net.metrics_bin_ns, port_rate_bps=net.link_rate_bps)
        self.recorder.bottleneck_ports = list(bottleneck_ports if bottleneck_ports is not None else topology.ports)
        for flow in flows:
            if flow.flow_id in self.flows:
                raise ConfigError(f"duplicate flow id {flow.flow_id}")
            topology.validate_flow(flow)
            flow.base_rtt_ns = compute_base_rtt(topology, flow)
            self.flows[flow.flow_id] = flow
            host = self.hosts.get(flow.src_host)
            if host is None:
                host = HostSched(flow.src_host, net.link_rate_bps, net.max_burst_bytes)
                self.hosts[flow.src_host] = host
            host.flow_ids.append(flow.flow_id)
            self.recorder.flow_port[flow.flow_id] = topology.port_for(flow.dst_host)
            if flow.long_lived:
                self.recorder.long_flows.add(flow.flow_id)

        self._trace_on = bool(trace or trace_sink is not None)
        self._trace_sink = trace_sink
        self._trace_hash = hashlib.sha256()
        self.trace_order: list[tuple[int, int]] = []
        self.trace_lines = 0

        self._register(EventKind.FLOW_SCHEDULED, self._on_flow_scheduled)
        self._register(EventKind.PACKET_ARRIVE_SWITCH, self._on_arrive_switch)
        self._register(EventKind.PACKET_DEPART_SWITCH, self._on_depart_switch)
        self._register(EventKind.PACKET_ARRIVE_DEST, self._on_arrive_dest)
        self._register(EventKind.PROBE_RETURN, self._on_probe_return)
        self._register(EventKind.TIMER_FIRE, self._on_timer)

    # --- setup ---

    @property
    def now(self) -> int:
        return self.queue.now

    def attach(self, factory: ControllerFactory) -> None:
        """Create one controller per flow. Must be called before the first run."""
        if self._started:
            raise ConfigError("controllers must be attached before the simulation starts")
        for fid, flow in self.flows.items():
            ctx = FlowContext(
                flow_id=fid,
                link_rate_bps=self.net.link_rate_bps,
                min_rate_bps=self.net.min_rate_bps,
                base_rtt_ns=flow.base_rtt_ns,
                initial_rate_bps=flow.rate_bps,
            )
            self.controllers[fid] = factory(ctx)

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        for fid in sorted(self.flows):
            flow = self.flows[fid]
            self.queue.schedule(flow.start_ns, EventKind.TIMER_FIRE, (TIMER_START, fid))
        logger.debug("%s: started %d flows on %d ports", self.name, len(self.flows), len(self.ports))

    def run_until(self, t_ns: int) -> int:
        self.start()
        n = self.queue.run(until=int(t_ns))
        self.recorder.duration_ns = max(self.recorder.duration_ns, self.queue.now)
        return n

    def run(self) -> MetricsRecorder:
        self.run_until(self.duration_ns)
        return self.recorder

    # --- tracing ---

    def _register(self, kind: EventKind, handler: Callable[[SimEvent], None]) -> None:
        if not self._trace_on:
            self.queue.on(kind, handler)
            return

        def traced(ev: SimEvent) -> None:
            self._trace(ev)
            handler(ev)

        self.queue.on(kind, traced)

    def _trace(self, ev: SimEvent) -> None:
        flow_id, port_id = -1, -1
        p = ev.payload
        if ev.kind in (EventKind.PACKET_ARRIVE_SWITCH, EventKind.PACKET_DEPART_SWITCH):
            port_id, pkt = p
            flow_id = pkt.flow_id
        elif ev.kind in (EventKind.PACKET_ARRIVE_DEST, EventKind.PROBE_RETURN):
            flow_id = p.flow_id
            port_id = self.recorder.flow_port.get(flow_id, -1)
        elif ev.kind is EventKind.TIMER_FIRE:
            flow_id = p[1]
        occ = self.ports[port_id].occupancy_bytes if port_id in self.ports else -1
        line = f"{ev.time} {ev.kind.value} {flow_id} {port_id} {occ}"
        self._trace_hash.update(line.encode("ascii") + b"\n")
        self.trace_order.append((ev.time, ev.seq))
        self.trace_lines += 1
        if self._trace_sink is not None:
            self._trace_sink.write(line + "\n")

    def trace_digest(self) -> str:
        return self._trace_hash.hexdigest()

    # --- hosts ---

    def _wake_host(self, host: HostSched, t: int) -> None:
        if host.wake_at is not None and host.wake_at <= t:
            return
        host.wake_token += 1
        host.wake_at = t
        self.queue.schedule(t, EventKind.FLOW_SCHEDULED, (host.host_id, host.wake_token))

    def _on_flow_scheduled(self, ev: SimEvent) -> None:
        host_id, token = ev.payload
        host = self.hosts[host_id]
        if token != host.wake_token:
            return
        host.wake_at = None
        self._service_host(host, ev.time)

    def _service_host(self, host: HostSched, now: int) -> None:
        if now < host.busy_until:
            self._wake_host(host, host.busy_until)
            return
        n = len(host.flow_ids)
        earliest: int | None = None
        for i in range(n):
            idx = (host.cursor + i) % n
            flow = self.flows[host.flow_ids[idx]]
            if not flow.active:
                continue
            ready = flow.ready_at(now, self.net)
            if ready <= now:
                burst, next_t = schedule_burst(host, flow, now, self.net, self._ids)
                host.cursor = (idx + 1) % n
                if burst and next_t is not None:
                    self._emit_burst(flow, burst, now)
                    host.busy_until = next_t
                    self._wake_host(host, next_t)
                    return
                ready = flow.ready_at(now + 1, self.net)
            earliest = ready if earliest is None else min(earliest, ready)
        if earliest is not None:
            self._wake_host(host, max(earliest, now + 1))

    def _emit_burst(self, flow: FlowState, burst: list[Packet], now: int) -> None:
        port_id = self.topology.port_for(flow.dst_host)
        link = self.net.link_rate_bps
        prop = self.net.prop_delay_ns
        cum = 0
        for pkt in burst:
            cum += pkt.size_bytes
            arrive = now + serialization_ns(cum, link) + prop
            self.queue.schedule(arrive, EventKind.PACKET_ARRIVE_SWITCH, (port_id, pkt))

    # --- switch ---

    def _on_arrive_switch(self, ev: SimEvent) -> None:
        port_id, pkt = ev.payload
        port = self.ports[port_id]
        now = ev.time
        res = switch_enqueue(port, pkt, now, self.rng)
        if res.dropped:
            if pkt.is_data:
                flow = self.flows[pkt.flow_id]
                flow.bytes_dropped += pkt.size_bytes
                flow.bytes_in_flight -= pkt.size_bytes
                self.recorder.record_drop(t=now, size_bytes=pkt.size_bytes)
                nack = Packet(next(self._ids), pkt.flow_id, PacketKind.NACK, self.net.control_bytes, now)
                self.queue.schedule(now + self.net.prop_delay_ns, EventKind.PACKET_ARRIVE_DEST, nack)
                self._maybe_finish(flow, now)
            return
        if not port.busy:
            self._start_service(port, now)

    def _start_service(self, port: SwitchPort, now: int) -> None:
        pkt, depart = switch_dequeue(port, now)
        port.busy = True
        if port.port_id in self.recorder.bottleneck_ports:
            self.recorder.record_wait(t=now, wait_ns=port.last_wait_ns)
        self.queue.schedule(depart, EventKind.PACKET_DEPART_SWITCH, (port.port_id, pkt))

    def _on_depart_switch(self, ev: SimEvent) -> None:
        port_id, pkt = ev.payload
        port = self.ports[port_id]
        port.busy = False
        self.queue.schedule(ev.time + self.net.prop_delay_ns, EventKind.PACKET_ARRIVE_DEST, pkt)
        if port.queue:
            self._start_service(port, ev.time)

    # --- endpoints ---

    def _on_arrive_dest(self, ev: SimEvent) -> None:
        for out in self.deliver(ev.payload, ev.time):
            push_event(self.queue, out)

    def deliver(self, pkt: Packet, now: int) -> list[SimEvent]:
        """Handle a packet reaching its endpoint; returns the events it triggers."""
        flow = self.flows[pkt.flow_id]
        if pkt.kind is PacketKind.DATA:
            flow.bytes_delivered += pkt.size_bytes
            flow.bytes_in_flight -= pkt.size_bytes
            self.recorder.record_delivery(t=now, flow_id=flow.flow_id, size_bytes=pkt.size_bytes)
            self._maybe_finish(flow, now)
            if not pkt.ecn_marked:
                return []
            last = flow.last_cnp_sent_ns
            if last is not None and now - last < self.net.cnp_interval_ns:
                return []
            flow.last_cnp_sent_ns = now
            cnp = Packet(next(self._ids), flow.flow_id, PacketKind.CNP, self.net.control_bytes, now)
            return [SimEvent(now + self._return_ns, EventKind.PACKET_ARRIVE_DEST, cnp)]
        if pkt.kind is PacketKind.RTT_PROBE:
            return [SimEvent(now + self._return_ns, EventKind.PROBE_RETURN, pkt)]
        if pkt.kind is PacketKind.CNP:
            flow.cnp_count += 1
            self._notify(flow, CcEvent.cnp(now, flow.flow_id))
        else:
            flow.nack_count += 1
            self._notify(flow, CcEvent.nack(now, flow.flow_id))
        return []

    def _maybe_finish(self, flow: FlowState, now: int) -> None:
        if flow.size_bytes is None or flow.finished_at_ns is not None:
            return
        if not flow.active and flow.bytes_in_flight == 0 and flow.bytes_sent >= flow.size_bytes:
            flow.finished_at_ns = now
            self.recorder.record_flow_finish(t=now, flow_id=flow.flow_id)

    def _on_probe_return(self, ev: SimEvent) -> None:
        pkt: Packet = ev.payload
        flow = self.flows[pkt.flow_id]
        rtt = ev.time - pkt.send_time
        flow.last_rtt_ns = rtt
        self.recorder.record_probe(t=ev.time, flow_id=flow.flow_id, rate_bps=flow.rate_bps, rtt_ns=rtt)
        self._notify(flow, CcEvent.probe(ev.time, flow.flow_id, rtt, pkt.telemetry))

    def _on_timer(self, ev: SimEvent) -> None:
        tag, fid = ev.payload
        flow = self.flows[fid]
        now = ev.time
        if tag == TIMER_START:
            flow.active = True
            flow.credit = 0
            flow.credit_at_ns = now
            flow.last_sched_ns = now
            self.recorder.record_flow_start(t=now, flow_id=fid)
            host = self.hosts[flow.src_host]
            self._wake_host(host, max(now, host.busy_until))
            ctl = self.controllers.get(fid)
            if ctl is not None and ctl.timer_ns > 0:
                self.queue.schedule(now + ctl.timer_ns, EventKind.TIMER_FIRE, (TIMER_CC, fid))
            return
        if flow.finished_at_ns is not None:
            return
        self._notify(flow, CcEvent.timer(now, fid))
        ctl = self.controllers.get(fid)
        if ctl is not None and ctl.timer_ns > 0:
            self.queue.schedule(now + ctl.timer_ns, EventKind.TIMER_FIRE, (TIMER_CC, fid))

    # --- control ---

    def _notify(self, flow: FlowState, ev: CcEvent) -> None:
        ctl = self.controllers.get(flow.flow_id)
        if ctl is None or flow.finished_at_ns is not None:
            return
        decision = ctl.on_event(flow, ev)
        if decision is not None:
            self.apply_rate(flow, decision.new_rate_bps, ev.now)

    def apply_rate(self, flow: FlowState, rate_bps: int, now: int) -> None:
        if rate_bps == flow.rate_bps:
            return
        flow.set_rate(rate_bps, now, self._burst_cap)
        if not flow.active:
            return
        host = self.hosts[flow.src_host]
        self._wake_host(host, max(host.busy_until, flow.ready_at(now, self.net), now))

    # --- accounting ---

    def in_flight_by_flow(self) -> dict[int, int]:
        """Data bytes currently on wires or in switch buffers, recomputed from the event heap."""
        out = {fid: 0 for fid in self.flows}
        for ev in self.queue.pending():
            if ev.kind in (EventKind.PACKET_ARRIVE_SWITCH, EventKind.PACKET_DEPART_SWITCH):
                pkt = ev.payload[1]
            elif ev.kind is EventKind.PACKET_ARRIVE_DEST:
                pkt = ev.payload
            else:
                continue
            if pkt.is_data:
                out[pkt.flow_id] += pkt.size_bytes
        for port in self.ports.values():
            for pkt in port.queue:
                if pkt.is_data:
                    out[pkt.flow_id] += pkt.size_bytes
        return out

    def conservation_holds(self) -> bool:
        tracked = self.in_flight_by_flow()
        for fid, flow in self.flows.items():
            if flow.bytes_sent != flow.bytes_delivered + flow.bytes_dropped + flow.bytes_in_flight:
                return False
            if tracked[fid] != flow.bytes_in_flight:
                return False
        return True
