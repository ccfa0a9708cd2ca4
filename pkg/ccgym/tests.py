from __future__ import annotations

import io
import math
import os
import random
import sys
import tempfile

import numpy as np

from ccgym.agent.adpg import (
    AdpgAgent,
    AdpgController,
    KeySeparatedReplay,
    RewardTerms,
    RolloutStep,
    ToyEnv,
    adpg_gradient,
    coefficient,
    fixed_point_check,
    reward,
    toy_direction_agrees,
)
from ccgym.agent.policy import (
    PolicyConfig,
    PolicyParams,
    PolicyState,
    Tape,
    action_map,
    apply_update,
    backward,
    forward,
    init_params,
    initial_state,
    make_observation,
    zero_params,
)
from ccgym.agent.quantize import qforward, quantize, quantize_tensor, tensor_scale
from ccgym.agent.trainer import TrainConfig, parse_target, train
from ccgym.bench.metrics import MetricsReport, compute_metrics, fairness, recovery_time
from ccgym.bench.pareto import Domination, non_dominated, pareto_compare
from ccgym.bench.suite import SuiteConfig, run_benchmark, run_single, runs_csv, summary_table
from ccgym.cc.base import CcEvent, FlowContext, RuleController, cc_on_event
from ccgym.cc.dcqcn import DCQCN, DcqcnParams, DcqcnState
from ccgym.cc.hpcc import HPCC, HpccParams, HpccState
from ccgym.cc.registry import get_algorithm, rule_controller_factory
from ccgym.cc.swift import SWIFT, SwiftParams
from ccgym.config import NetConfig
from ccgym.core.app import main as cli_main
from ccgym.core.errors import CheckpointError, ConfigError, ContractError, SchedulerError
from ccgym.core.events import EventKind, EventQueue, SimEvent, push_event
from ccgym.core.save import (
    inspect_checkpoint,
    is_quantized,
    load_checkpoint,
    load_quantized,
    save_checkpoint,
    save_document,
    save_quantized,
)
from ccgym.sim.analytics import MetricsRecorder
from ccgym.sim.host import FlowState, HostSched, schedule_burst
from ccgym.sim.network import Simulation, Topology, compute_base_rtt
from ccgym.sim.packets import Packet, PacketKind, Telemetry, serialization_ns
from ccgym.sim.scenarios import (
    MAPPING_TABLE,
    ScenarioSpec,
    all_to_all,
    build_all_to_all,
    build_long_short,
    build_many_to_one,
    build_scenario,
    interrupt_schedule,
    long_short,
    many_to_one,
    many_to_one_layout,
)
from ccgym.sim.switch import SwitchPort, switch_dequeue, switch_enqueue


LINK = 100_000_000_000


def _single_flow_sim(rate_bps: int = LINK, duration_ns: int = 100_000, **net_kw) -> Simulation:
    net = NetConfig(**net_kw)
    topo = Topology(net, 2, (1,))
    return Simulation(net, topo, [FlowState(0, 0, 1, rate_bps)], seed=1, duration_ns=duration_ns)


def _ctx(rate: float = 50e9, base_rtt: int = 4012) -> FlowContext:
    return FlowContext(0, LINK, LINK // 10_000, base_rtt, int(rate))


def _final_action(params: PolicyParams, obs_seq: list) -> float:
    state = initial_state(params.dtype)
    raw = 0.0
    for o in obs_seq:
        raw, state, _ = forward(params, state, o, window=0)
    return action_map(raw)


def _random_obs(rng: np.random.Generator, n: int) -> list:
    return [rng.uniform(0.0, 2.0, size=4) for _ in range(n)]


# --- event engine ---


def test_event_queue_order() -> None:
    q = EventQueue()
    q.schedule(5, EventKind.TIMER_FIRE, "late")
    q.schedule(3, EventKind.TIMER_FIRE, "early")
    q.schedule(7, EventKind.TIMER_FIRE, "A")
    q.schedule(7, EventKind.TIMER_FIRE, "B")
    out = []
    while True:
        ev = q.pop()
        if ev is None:
            break
        out.append(ev.payload)
    assert out == ["early", "late", "A", "B"]
    assert q.pop() is None
    assert q.now == 7

    push_event(q, SimEvent(9, EventKind.TIMER_FIRE, "x"))
    push_event(q, SimEvent(8, EventKind.TIMER_FIRE, "y"))
    assert [q.pop().payload, q.pop().payload] == ["y", "x"]
    try:
        push_event(q, SimEvent(1, EventKind.TIMER_FIRE))
    except SchedulerError:
        pass
    else:
        raise AssertionError("push_event accepted an event in the past")


def test_event_queue_rejects_past() -> None:
    q = EventQueue()
    q.schedule(10, EventKind.TIMER_FIRE)
    q.pop()
    try:
        q.schedule(9, EventKind.TIMER_FIRE)
    except SchedulerError:
        pass
    else:
        raise AssertionError("event in the past accepted")
    seen = []
    q.on(EventKind.TIMER_FIRE, lambda ev: seen.append(ev.time))
    q.schedule(10, EventKind.TIMER_FIRE)
    q.schedule(20, EventKind.TIMER_FIRE)
    assert q.run(until=15) == 1
    assert seen == [10] and q.now == 15


# --- hosts and switch ---


def test_schedule_burst_credit() -> None:
    net = NetConfig()
    host = HostSched(0, LINK, net.max_burst_bytes)
    rate = 12_500_000_000
    flow = FlowState(0, 0, 1, rate, active=True)
    ids = iter(range(100))
    burst, nxt = schedule_burst(host, flow, 1_000, net, ids)
    assert [p.kind for p in burst] == [PacketKind.DATA, PacketKind.RTT_PROBE]
    assert burst[0].size_bytes == 1024 and burst[1].size_bytes == net.probe_bytes
    # 1562.5 bytes accrued; 1 KB sent, the rest carried as credit.
    assert flow.credit == rate * 1_000 - 1024 * 8 * 1_000_000_000
    assert flow.bytes_sent == 1024
    assert burst[1].send_time == 1_000 + serialization_ns(1024, LINK)
    assert nxt == 1_000 + serialization_ns(1024 + net.probe_bytes, LINK)


def test_schedule_burst_cap_and_inactive() -> None:
    net = NetConfig()
    host = HostSched(0, LINK, net.max_burst_bytes)
    flow = FlowState(0, 0, 1, LINK, active=True)
    burst, _ = schedule_burst(host, flow, 1_000_000, net, iter(range(100)))
    data = [p for p in burst if p.is_data]
    assert sum(p.size_bytes for p in data) == net.max_burst_bytes
    assert burst[-1].kind is PacketKind.RTT_PROBE

    idle = FlowState(1, 0, 1, LINK, active=False)
    assert schedule_burst(host, idle, 5_000, net, iter(range(10))) == ([], None)

    fresh = FlowState(2, 0, 1, LINK, active=True, credit_at_ns=5_000)
    burst, nxt = schedule_burst(host, fresh, 5_000, net, iter(range(10)))
    assert burst == [] and nxt is not None and nxt > 5_000


def test_short_flow_stops_after_size() -> None:
    net = NetConfig()
    host = HostSched(0, LINK, net.max_burst_bytes)
    flow = FlowState(0, 0, 1, LINK, active=True, size_bytes=3000)
    burst, _ = schedule_burst(host, flow, 1_000_000, net, iter(range(100)))
    assert sum(1 for p in burst if p.is_data) == 3
    assert not flow.active


def test_switch_drop_and_floor() -> None:
    rng = random.Random(0)
    port = SwitchPort(0, LINK, capacity_bytes=10_000)
    port.occupancy_bytes = 10_000
    res = switch_enqueue(port, Packet(1, 0, PacketKind.DATA, 64, 0), 0, rng)
    assert res.dropped and port.drop_count == 1 and port.occupancy_bytes == 10_000

    port = SwitchPort(0, LINK)
    for i in range(20):
        res = switch_enqueue(port, Packet(i, 0, PacketKind.DATA, 1024, 0), 0, rng)
        assert not res.dropped and not res.marked
    assert port.occupancy_bytes == 20 * 1024


def test_switch_marking_frequency() -> None:
    rng = random.Random(42)
    port = SwitchPort(0, LINK, ecn_kmin_bytes=100_000, ecn_kmax_bytes=1_000_000, ecn_pmax=0.8)
    mid = 550_000
    assert abs(port.marking_probability(mid) - 0.4) < 1e-12
    assert port.marking_probability(2_000_000) == 1.0
    trials = 100_000
    marked = 0
    for i in range(trials):
        port.occupancy_bytes = mid
        port.queue.clear()
        if switch_enqueue(port, Packet(i, 0, PacketKind.DATA, 1024, 0), 0, rng).marked:
            marked += 1
    assert abs(marked / trials - 0.4) <= 0.02


def test_switch_fifo_and_serialization() -> None:
    assert serialization_ns(1000, LINK) == 80
    assert serialization_ns(1024, LINK) == 82
    rng = random.Random(0)
    port = SwitchPort(0, LINK)
    a = Packet(1, 0, PacketKind.DATA, 1024, 0)
    b = Packet(2, 1, PacketKind.DATA, 1024, 0)
    switch_enqueue(port, a, 100, rng)
    switch_enqueue(port, b, 100, rng)
    first, depart = switch_dequeue(port, 100)
    assert first is a and depart == 182 and port.last_wait_ns == 0
    assert first.telemetry is not None and first.telemetry.queue_bytes == 1024
    second, _ = switch_dequeue(port, depart)
    assert second is b and port.last_wait_ns == 82
    assert port.occupancy_bytes == 0
    try:
        switch_dequeue(port, 500)
    except SchedulerError:
        pass
    else:
        raise AssertionError("dequeue on empty port accepted")


# --- endpoints and base RTT ---


def test_deliver_cnp_and_probe() -> None:
    sim = _single_flow_sim()
    prop = sim.net.prop_delay_ns
    marked = Packet(100, 0, PacketKind.DATA, 1024, 0, ecn_marked=True)
    out = sim.deliver(marked, 5_000)
    assert len(out) == 1
    assert out[0].kind is EventKind.PACKET_ARRIVE_DEST and out[0].payload.kind is PacketKind.CNP
    assert out[0].time == 5_000 + 2 * prop
    # paced: a second mark inside the CNP interval is not answered
    assert sim.deliver(Packet(101, 0, PacketKind.DATA, 1024, 0, ecn_marked=True), 5_100) == []
    assert sim.deliver(Packet(102, 0, PacketKind.DATA, 1024, 0), 6_000) == []
    probe = Packet(103, 0, PacketKind.RTT_PROBE, 64, 4_000)
    out = sim.deliver(probe, 7_000)
    assert len(out) == 1 and out[0].kind is EventKind.PROBE_RETURN and out[0].time == 7_000 + 2 * prop
    sim.deliver(Packet(104, 0, PacketKind.CNP, 64, 0), 8_000)
    assert sim.flows[0].cnp_count == 1
    # the next mark after a full interval is answered again
    later = sim.deliver(Packet(105, 0, PacketKind.DATA, 1024, 0, ecn_marked=True), 5_000 + sim.net.cnp_interval_ns)
    assert len(later) == 1 and later[0].payload.kind is PacketKind.CNP


def test_base_rtt() -> None:
    net = NetConfig()
    topo = Topology(net, 2, (1,))
    flow = FlowState(0, 0, 1, LINK)
    base = compute_base_rtt(topo, flow)
    assert base == 2 * serialization_ns(net.probe_bytes, LINK) + 4 * net.prop_delay_ns
    assert abs(base - 4_000) <= 2 * serialization_ns(net.probe_bytes, LINK)
    assert compute_base_rtt(topo, flow) == base
    short = Topology(NetConfig(prop_delay_ns=500), 2, (1,))
    assert abs(compute_base_rtt(short, flow) - 2_000) <= 2 * serialization_ns(64, LINK)
    try:
        compute_base_rtt(topo, FlowState(1, 0, 5, LINK))
    except ConfigError:
        pass
    else:
        raise AssertionError("unroutable flow accepted")


def test_idle_probe_rtt_matches_base() -> None:
    sim = _single_flow_sim(rate_bps=1_000_000_000, duration_ns=200_000)
    sim.attach(rule_controller_factory("fixed"))
    sim.run()
    base = sim.flows[0].base_rtt_ns
    samples = sim.recorder.samples[0]
    assert len(samples) > 5
    quantum = serialization_ns(sim.net.mtu_bytes, LINK)
    assert all(base <= s.rtt_ns <= base + quantum for s in samples)


# --- simulator properties ---


def test_simulator_properties_randomized() -> None:
    rng = random.Random(7)
    for case in range(6):
        flows = rng.randint(2, 8)
        algo = rng.choice(["dcqcn", "hpcc", "swift"])
        spec = many_to_one(flows, duration_ns=200_000, seed=rng.randint(0, 10_000))
        sim = build_many_to_one(spec, trace=True)
        sim.attach(rule_controller_factory(algo))
        t = 0
        while t < spec.duration_ns:
            t += 20_000
            sim.run_until(t)
            assert sim.conservation_holds(), f"case {case}: conservation broken at t={t}"
            for port in sim.ports.values():
                assert 0 <= port.occupancy_bytes <= port.capacity_bytes
        order = sim.trace_order
        assert all(a < b for a, b in zip(order, order[1:])), f"case {case}: trace out of order"


def test_drops_raise_nacks() -> None:
    spec = many_to_one(4, duration_ns=50_000, seed=3, net=NetConfig(buffer_bytes=8_192))
    sim = build_many_to_one(spec)
    sim.run()
    port = sim.ports[4]
    assert port.drop_count > 0
    assert sum(f.nack_count for f in sim.flows.values()) > 0
    assert sum(f.bytes_dropped for f in sim.flows.values()) > 0
    assert sim.conservation_holds()


def test_golden_trace_determinism() -> None:
    def digest(seed: int) -> tuple[str, int]:
        sink = io.StringIO()
        sim = build_many_to_one(many_to_one(3, duration_ns=100_000, seed=seed), trace_sink=sink)
        sim.attach(rule_controller_factory("dcqcn"))
        sim.run()
        assert len(sink.getvalue().splitlines()) == sim.trace_lines
        return sim.trace_digest(), sim.trace_lines

    a, n = digest(11)
    b, m = digest(11)
    assert a == b and n == m and n > 0
    c, _ = digest(12)
    assert c != a


# --- scenarios ---


def test_mapping_table() -> None:
    assert many_to_one_layout(1024) == (32, 32)
    assert many_to_one_layout(8192) == (64, 128)
    assert many_to_one_layout(2) == (2, 1)
    assert many_to_one_layout(8) == (8, 1)
    for total, hosts, per_host in MAPPING_TABLE:
        assert hosts * per_host == total
    try:
        many_to_one_layout(100)
    except ConfigError:
        pass
    else:
        raise AssertionError("100 flows should need an explicit layout")


def test_many_to_one_build() -> None:
    sim = build_many_to_one(many_to_one(128, duration_ns=1_000_000))
    assert len(sim.flows) == 128 and len(sim.hosts) == 64
    assert list(sim.ports) == [64]
    starts = sorted(f.start_ns for f in sim.flows.values())
    assert starts[0] == 0 and starts[-1] <= 100_000


def test_all_to_all_build() -> None:
    sim = build_all_to_all(4)
    assert len(sim.flows) == 12 and len(sim.ports) == 4
    sim = build_all_to_all(8)
    assert len(sim.flows) == 56 and len(sim.ports) == 8
    for f in sim.flows.values():
        assert sim.recorder.flow_port[f.flow_id] == f.dst_host
    try:
        build_all_to_all(1)
    except ConfigError:
        pass
    else:
        raise AssertionError("all-to-all with one host accepted")


def test_all_to_all_two_hosts_is_fair() -> None:
    sim = build_all_to_all(all_to_all(2, duration_ns=300_000, seed=5))
    assert len(sim.flows) == 2
    sim.attach(rule_controller_factory("dcqcn"))
    report = compute_metrics(sim.run(), scenario="a2a-2")
    assert report.fr == 100.0


def test_long_short_build() -> None:
    sim = build_long_short(long_short(2))
    assert len(sim.flows) == 2
    assert sim.flows[0].long_lived and sim.flows[0].size_bytes is None
    assert not sim.flows[1].long_lived and sim.flows[1].size_bytes == 1_048_576
    spec = long_short(128, seed=9)
    sim = build_long_short(spec)
    assert len(sim.flows) == 128 and sum(1 for f in sim.flows.values() if f.long_lived) == 1
    assert interrupt_schedule(spec) == interrupt_schedule(long_short(128, seed=9))
    first = min(f.start_ns for f in sim.flows.values() if not f.long_lived)
    assert sim.flows[0].start_ns == 0 < first
    try:
        build_long_short(long_short(2, short_bytes=0))
    except ConfigError:
        pass
    else:
        raise AssertionError("zero-byte short flows accepted")


def test_scenario_document() -> None:
    spec = ScenarioSpec.from_dict({"kind": "LongShort", "total_flows": 3, "duration_ms": 2})
    assert spec.duration_ns == 2_000_000 and spec.label == "ls-3"
    again = ScenarioSpec.from_dict(spec.to_dict())
    assert again.resolved().short_flow_count == 2
    try:
        ScenarioSpec.from_dict({"kind": "Ring"})
    except ConfigError:
        pass
    else:
        raise AssertionError("unknown scenario kind accepted")


# --- rule-based algorithms ---


def test_swift_increase_below_target() -> None:
    ctx = _ctx()
    params = SwiftParams()
    state = SWIFT.init(ctx, params)
    decision, state = cc_on_event(SWIFT, state, CcEvent.probe(10_000, 0, ctx.base_rtt_ns), params, ctx)
    assert decision.new_rate_bps == int(50e9 + params.ai_bps)


def test_swift_decrease_once_per_window() -> None:
    ctx = _ctx()
    params = SwiftParams()
    state = SWIFT.init(ctx, params)
    rtt = 2 * state.target_delay_ns
    d1, state = cc_on_event(SWIFT, state, CcEvent.probe(100_000, 0, rtt), params, ctx)
    assert abs(d1.new_rate_bps - 50e9 * 0.6) <= 1
    d2, state = cc_on_event(SWIFT, state, CcEvent.probe(101_000, 0, rtt), params, ctx)
    assert d2.new_rate_bps == d1.new_rate_bps
    d3, state = cc_on_event(SWIFT, state, CcEvent.probe(100_000 + rtt, 0, rtt), params, ctx)
    assert d3.new_rate_bps < d2.new_rate_bps


def test_dcqcn_cnp_cut() -> None:
    ctx = _ctx()
    params = DcqcnParams()
    state = DCQCN.init(ctx, params)
    decision, state = cc_on_event(DCQCN, state, CcEvent.cnp(1_000, 0), params, ctx)
    assert decision.new_rate_bps == int(50e9 * (1 - 1.0 / 2))
    assert state.target_bps == 50e9
    assert 0.0 <= state.alpha <= 1.0


def test_dcqcn_recovers_to_line_rate() -> None:
    ctx = _ctx(rate=10e9)
    params = DcqcnParams()
    state = DcqcnState(0, 10e9, 10e9, 0.5)
    decision = None
    for k in range(1, 200):
        decision, state = cc_on_event(DCQCN, state, CcEvent.timer(k * params.timer_ns, 0), params, ctx)
    assert decision is not None and decision.new_rate_bps == LINK
    assert state.alpha < 0.5


def test_hpcc_overutilized_cut() -> None:
    ctx = _ctx()
    params = HpccParams()
    # queue term 1 and throughput term 1: U = 2 / eta
    prev = Telemetry(queue_bytes=50_150, tx_bytes_cum=0, port_rate_bps=LINK, ts=0)
    cur = Telemetry(queue_bytes=50_150, tx_bytes_cum=50_150, port_rate_bps=LINK, ts=4_012)
    state = HpccState(0, 50e9, 50e9, last_telemetry=prev)
    decision, state = cc_on_event(HPCC, state, CcEvent.probe(10_000, 0, 8_000, cur), params, ctx)
    expected = 50e9 / (2.0 / params.eta) + params.ai_bps
    assert abs(decision.new_rate_bps - expected) <= 2
    assert abs(state.utilization - 2.0 / params.eta) < 1e-9


def test_hpcc_equilibrium_and_first_sample() -> None:
    ctx = _ctx()
    params = HpccParams()
    state = HPCC.init(ctx, params)
    t0 = Telemetry(queue_bytes=0, tx_bytes_cum=0, port_rate_bps=LINK, ts=0)
    d0, state = cc_on_event(HPCC, state, CcEvent.probe(5_000, 0, 4_012, t0), params, ctx)
    assert d0.new_rate_bps == int(50e9) and state.last_telemetry == t0
    t1 = Telemetry(queue_bytes=0, tx_bytes_cum=95_000, port_rate_bps=LINK, ts=8_000)
    d1, state = cc_on_event(HPCC, state, CcEvent.probe(13_000, 0, 4_012, t1), params, ctx)
    assert abs(d1.new_rate_bps - (50e9 + params.ai_bps)) <= 1


def test_cc_clamp_and_replay() -> None:
    rng = random.Random(5)
    for algo in (DCQCN, HPCC, SWIFT):
        params = algo.params_from_dict(None)
        ctx = _ctx(rate=rng.uniform(1e9, 100e9))
        events = []
        t, tx = 0, 0
        for _ in range(300):
            t += rng.randint(100, 20_000)
            tx += rng.randint(0, 250_000)
            kind = rng.random()
            if kind < 0.5:
                tel = Telemetry(rng.randint(0, 2_000_000), tx, LINK, t)
                events.append(CcEvent.probe(t, 0, rng.randint(ctx.base_rtt_ns, 20 * ctx.base_rtt_ns), tel))
            elif kind < 0.7:
                events.append(CcEvent.cnp(t, 0))
            elif kind < 0.8:
                events.append(CcEvent.nack(t, 0))
            else:
                events.append(CcEvent.timer(t, 0))

        def replay() -> list[int]:
            state = algo.init(ctx, params)
            out = []
            for ev in events:
                d, state = cc_on_event(algo, state, ev, params, ctx)
                out.append(d.new_rate_bps)
            return out

        rates = replay()
        assert all(ctx.min_rate_bps < r <= LINK for r in rates), algo.name
        assert rates == replay(), algo.name


def test_cc_monotone_response() -> None:
    ctx = _ctx()
    sp = SwiftParams()
    s = SWIFT.init(ctx, sp)
    low, _ = cc_on_event(SWIFT, s, CcEvent.probe(50_000, 0, 9_000), sp, ctx)
    high, _ = cc_on_event(SWIFT, s, CcEvent.probe(50_000, 0, 30_000), sp, ctx)
    assert high.new_rate_bps <= low.new_rate_bps

    dp = DcqcnParams()
    d = DcqcnState(0, 40e9, 60e9, 0.3, stage=3)
    cnp, _ = cc_on_event(DCQCN, d, CcEvent.cnp(1_000, 0), dp, ctx)
    quiet, _ = cc_on_event(DCQCN, d, CcEvent.timer(1_000, 0), dp, ctx)
    assert cnp.new_rate_bps <= quiet.new_rate_bps

    hp = HpccParams()
    prev = Telemetry(0, 0, LINK, 0)
    h = HpccState(0, 50e9, 50e9, last_telemetry=prev)
    busy, _ = cc_on_event(HPCC, h, CcEvent.probe(9_000, 0, 4_012, Telemetry(200_000, 100_000, LINK, 8_000)), hp, ctx)
    calm, _ = cc_on_event(HPCC, h, CcEvent.probe(9_000, 0, 4_012, Telemetry(0, 50_000, LINK, 8_000)), hp, ctx)
    assert busy.new_rate_bps <= calm.new_rate_bps


def test_cc_flow_mismatch_and_registry() -> None:
    ctx = _ctx()
    params = DcqcnParams()
    state = DCQCN.init(ctx, params)
    try:
        cc_on_event(DCQCN, state, CcEvent.cnp(0, 3), params, ctx)
    except ContractError:
        pass
    else:
        raise AssertionError("event for another flow accepted")
    try:
        get_algorithm("cubic")
    except ConfigError:
        pass
    else:
        raise AssertionError("unknown algorithm accepted")
    ctl = RuleController(SWIFT, SwiftParams(), ctx)
    flow = FlowState(0, 0, 1, int(50e9), cnp_count=3, nack_count=1)
    ctl.on_event(flow, CcEvent.probe(1_000, 0, 4_012))
    assert flow.cnp_count == 0 and flow.nack_count == 0


# --- policy ---


def test_policy_forward_basics() -> None:
    zero = zero_params()
    obs = make_observation(0.7, 1.8, 2, 0)
    raw, _, _ = forward(zero, initial_state(), obs)
    assert raw == 0.0

    rng = np.random.default_rng(3)
    params = init_params(rng=np.random.default_rng(1))
    seq = [make_observation(*rng.uniform(0.1, 2.0, size=2)) for _ in range(20)]

    def run_seq() -> list[float]:
        state = initial_state()
        out = []
        for o in seq:
            r, state, _ = forward(params, state, o)
            out.append(r)
        return out

    assert run_seq() == run_seq()
    state = initial_state()
    r1, _, _ = forward(params, state, seq[0])
    r2, _, _ = forward(params, state, seq[0])
    assert r1 == r2


def test_action_map() -> None:
    assert action_map(0.0) == 1.0
    assert abs(action_map(0.5) - (1.0 + 0.2 * math.tanh(0.5))) < 1e-12
    assert abs(action_map(50.0) - 1.2) < 1e-9 and abs(action_map(-50.0) - 0.8) < 1e-9
    xs = np.linspace(-3, 3, 61)
    vals = [action_map(float(x)) for x in xs]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert all(0.8 - 1e-12 <= v <= 1.2 + 1e-12 for v in vals)


def test_backward_zero_and_linearity() -> None:
    rng = np.random.default_rng(4)
    params = init_params(rng=rng, init_range=0.5, dtype=np.float64)
    state = initial_state(np.float64)
    tape = None
    for o in _random_obs(rng, 3):
        _, state, tape = forward(params, state, o)
    assert tape is not None
    g0 = backward(params, tape, 0.0)
    assert all(not np.any(a) for _n, a in g0.items())
    g1 = backward(params, tape, 0.7)
    g2 = backward(params, tape, 1.4)
    for (_n, a), (_m, b) in zip(g1.items(), g2.items()):
        assert np.allclose(2 * a, b, rtol=1e-12, atol=1e-15)
    other = init_params(5, rng=rng, dtype=np.float64)
    try:
        backward(other, tape, 1.0)
    except ContractError:
        pass
    else:
        raise AssertionError("mismatched tape accepted")


def _gradient_check(seed: int, steps: int = 3, h: float = 1e-5) -> None:
    rng = np.random.default_rng(seed)
    params = init_params(rng=rng, init_range=0.5, dtype=np.float64)
    seq = _random_obs(rng, steps)
    state = initial_state(np.float64)
    tape = None
    for o in seq:
        _, state, tape = forward(params, state, o, window=16)
    grads = backward(params, tape, 1.0)
    analytic: list[float] = []
    numeric: list[float] = []
    for name, arr in params.items():
        g = getattr(grads, name)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            fp = _final_action(params, seq)
            arr[idx] = old - h
            fm = _final_action(params, seq)
            arr[idx] = old
            numeric.append((fp - fm) / (2 * h))
            analytic.append(float(g[idx]))
    an = np.asarray(analytic)
    fd = np.asarray(numeric)
    err = float(np.max(np.abs(an - fd)))
    assert err <= 1e-3 * float(np.max(np.abs(an))) + 1e-7, f"seed {seed}: gradient error {err}"


def test_backward_finite_differences() -> None:
    for seed in (0, 1):
        _gradient_check(seed)


def test_apply_update_rules() -> None:
    rng = np.random.default_rng(6)
    params = init_params(rng=rng)
    zero = params.zeros_like()
    same = apply_update(params, zero, 0.1)
    assert all(np.array_equal(a, getattr(same, n)) for n, a in params.items())
    grads = init_params(rng=rng)
    same = apply_update(params, grads, 0.0)
    assert all(np.array_equal(a, getattr(same, n)) for n, a in params.items())
    bad = grads.copy()
    bad.w1[0, 0] = np.nan
    for g, lr in ((bad, 0.1), (grads, -0.1)):
        try:
            apply_update(params, g, lr)
        except ContractError:
            pass
        else:
            raise AssertionError("bad update accepted")


def test_update_moves_action_with_coefficient() -> None:
    rng = np.random.default_rng(8)
    params = init_params(rng=rng, init_range=0.5, dtype=np.float64)
    obs = make_observation(0.5, 1.5)
    raw0, _, tape = forward(params, initial_state(np.float64), obs)
    for c in (1.0, -1.0):
        new = apply_update(params, backward(params, tape, c), 1e-3)
        raw1, _, _ = forward(new, initial_state(np.float64), obs)
        assert (action_map(raw1) - action_map(raw0)) * c > 0


def test_recurrence_isolation() -> None:
    params = init_params(rng=np.random.default_rng(2))
    agent = AdpgAgent(params, PolicyConfig(), 2.0, record=False)
    make = agent.controller_factory(None)
    ctx = FlowContext(0, LINK, LINK // 10_000, 4_012, int(50e9))
    a, b = make(ctx), make(ctx)
    fa = FlowState(0, 0, 2, int(50e9), base_rtt_ns=4_012)
    fb = FlowState(0, 1, 2, int(50e9), base_rtt_ns=4_012)
    for k in range(30):
        rtt = 4_012 + 300 * (k % 7)
        da = a.on_probe_return(fa, rtt, 1_000 * (k + 1))
        db = b.on_probe_return(fb, rtt, 1_000 * (k + 1))
        assert da == db
        fa.rate_bps, fb.rate_bps = da.new_rate_bps, db.new_rate_bps


def test_default_init_scales() -> None:
    params = init_params(rng=np.random.default_rng(4))
    w1 = float(np.abs(params.w1).max())
    assert 0.05 < w1 <= 0.5
    assert float(np.abs(params.wh).max()) <= 0.25 and float(np.abs(params.w2).max()) <= 1 / math.sqrt(32)
    assert float(np.abs(params.w3).max()) <= 3e-3 and float(np.abs(params.b3).max()) <= 3e-3
    raw, _, _ = forward(params, initial_state(), make_observation(0.5, 1.5))
    assert abs(action_map(raw) - 1.0) <= 0.011
    flat = init_params(rng=np.random.default_rng(4), init_range=0.01)
    assert all(float(np.abs(a).max()) <= 0.01 for _n, a in flat.items())
    try:
        PolicyConfig(init_range=0.0).validate()
    except ConfigError:
        pass
    else:
        raise AssertionError("zero init_range accepted")


# --- quantization ---


def test_quantize_error_bound() -> None:
    rng = np.random.default_rng(10)
    params = init_params(rng=rng, init_range=0.3)
    qp = quantize(params)
    for name, w in qp.weights():
        err = np.abs(w.dequantize() - getattr(params, name))
        assert float(err.max()) <= w.scale / 2 + 1e-6
    zero = quantize_tensor(np.zeros((3, 3)))
    assert zero.scale == 1.0 and not np.any(zero.q)
    assert tensor_scale(np.array([-2.54, 1.0])) == 2.54 / 127


def test_quantized_bias_path_exact() -> None:
    rng = np.random.default_rng(11)
    params = zero_params()
    params.b1[:] = rng.uniform(-0.5, 0.5, size=params.b1.shape)
    params.b2[:] = rng.uniform(-0.5, 0.5, size=params.b2.shape)
    params.bl[:] = rng.uniform(-0.5, 0.5, size=params.bl.shape)
    params.b3[:] = 0.3
    obs = np.zeros(4)
    raw, _, _ = forward(params, initial_state(), obs)
    raw_q, _ = qforward(quantize(params), initial_state(), obs)
    assert raw_q == raw == float(np.float32(0.3))


def test_quantized_action_deviation() -> None:
    rng = np.random.default_rng(12)
    params = init_params(rng=rng)
    qp = quantize(params)
    devs = []
    for _ in range(1000):
        obs = make_observation(rng.uniform(0.01, 1.0), rng.uniform(1.0, 5.0), int(rng.integers(0, 3)), 0)
        raw, _, _ = forward(params, initial_state(), obs, window=0)
        raw_q, _ = qforward(qp, initial_state(), obs)
        devs.append(abs(action_map(raw_q) - action_map(raw)))
    assert float(np.mean(devs)) <= 0.01


# --- checkpoints ---


def test_checkpoint_files() -> None:
    params = init_params(rng=np.random.default_rng(13))
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "ckpt", "policy.bin")
        save_checkpoint(path, params, {"target": 2.0})
        loaded = load_checkpoint(path)
        assert all(np.array_equal(a, getattr(loaded, n)) for n, a in params.items())
        assert not is_quantized(path)
        assert os.path.exists(path + ".json")

        with open(path, "rb") as f:
            data = f.read()
        for name, blob in (("magic", b"XXXX" + data[4:]), ("short", data[:-4]), ("long", data + b"\0")):
            bad = os.path.join(tmp, f"bad_{name}.bin")
            with open(bad, "wb") as f:
                f.write(blob)
            try:
                load_checkpoint(bad)
            except CheckpointError:
                pass
            else:
                raise AssertionError(f"{name} checkpoint accepted")

        qpath = os.path.join(tmp, "policy.q")
        qp = quantize(params)
        save_quantized(qpath, qp)
        assert is_quantized(qpath)
        back = load_quantized(qpath)
        for (_n, a), (_m, b) in zip(qp.weights(), back.weights()):
            assert np.array_equal(a.q, b.q) and abs(a.scale - b.scale) <= 1e-7 * a.scale
        info = inspect_checkpoint(qpath)
        assert info.quantized and len(info.tensors) == 9 and info.feature_count == 4


# --- ADPG ---


def test_reward_known_values() -> None:
    assert reward(RewardTerms(2.0, 2.0, 1.0)) == 0.0
    assert reward(RewardTerms(2.0, 2.0, 0.25)) == -1.0
    assert reward(RewardTerms(1.0, 1.0, 1.0)) == 0.0
    try:
        coefficient(RewardTerms(2.0, 1.0, 0.0))
    except ContractError:
        pass
    else:
        raise AssertionError("rate_norm 0 accepted")


def test_reward_nonpositive_grid() -> None:
    rng = random.Random(14)
    for _ in range(10_000):
        target = rng.uniform(0.5, 20.0)
        rate = rng.uniform(1e-3, 1.0)
        infl = rng.uniform(1.0, 40.0)
        r = reward(RewardTerms(target, infl, rate))
        assert r <= 0.0
        on_target = reward(RewardTerms(target, target / math.sqrt(rate), rate))
        assert abs(on_target) < 1e-18


def test_on_probe_return() -> None:
    ctx = FlowContext(0, LINK, LINK // 10_000, 4_012, int(50e9))
    replay = KeySeparatedReplay()
    agent = AdpgAgent(zero_params(), PolicyConfig(), 2.0)
    ctl = AdpgController(agent, ctx, replay, ("t", 0))
    flow = FlowState(0, 0, 1, int(50e9), base_rtt_ns=4_012, cnp_count=2, nack_count=1)
    decision = ctl.on_probe_return(flow, 4_012, 1_000)
    assert decision.new_rate_bps == int(50e9)
    assert flow.cnp_count == 0 and flow.nack_count == 0
    assert len(replay.steps(("t", 0))) == 1

    flow.rate_bps = LINK
    ctl.on_probe_return(flow, 3 * 4_012, 2_000)
    assert replay.steps(("t", 0))[-1].coeff == 2.0 - 3.0

    push = zero_params()
    push.b3[:] = 10.0
    up = AdpgController(AdpgAgent(push, PolicyConfig(), 2.0), ctx, None, ("u", 0))
    assert up.on_probe_return(flow, 4_012, 3_000).new_rate_bps == LINK

    fresh = FlowState(1, 0, 1, int(50e9))
    try:
        ctl.on_probe_return(fresh, 4_012, 4_000)
    except ContractError:
        pass
    else:
        raise AssertionError("flow without base RTT accepted")


def _one_step_replay(params: PolicyParams, obs, key, coeff: float, replay: KeySeparatedReplay) -> None:
    raw, _, tape = forward(params, initial_state(params.dtype), obs)
    replay.append(key, RolloutStep(obs, raw, coeff, 0, tape, -(coeff * coeff)))


def test_adpg_gradient_cases() -> None:
    rng = np.random.default_rng(15)
    params = init_params(rng=rng, init_range=0.5, dtype=np.float64)
    obs = make_observation(0.4, 1.7)

    zero = KeySeparatedReplay()
    for k in range(3):
        _one_step_replay(params, obs, k, 0.0, zero)
    assert all(not np.any(a) for _n, a in adpg_gradient(zero, params).items())

    single = KeySeparatedReplay()
    _one_step_replay(params, obs, "a", 0.6, single)
    g = adpg_gradient(single, params)
    _raw, _s, tape = forward(params, initial_state(np.float64), obs)
    ref = backward(params, tape, 1.0)
    for name, arr in g.items():
        assert np.allclose(arr, 0.6 * getattr(ref, name), rtol=1e-12, atol=1e-15)
    h = 1e-6
    old = float(params.b3[0])
    params.b3[0] = old + h
    fp = 0.6 * _final_action(params, [obs])
    params.b3[0] = old - h
    fm = 0.6 * _final_action(params, [obs])
    params.b3[0] = old
    assert abs((fp - fm) / (2 * h) - float(g.b3[0])) < 1e-6

    pair = KeySeparatedReplay()
    _one_step_replay(params, obs, "x", 0.8, pair)
    _one_step_replay(params, obs, "y", -0.8, pair)
    assert all(not np.any(a) for _n, a in adpg_gradient(pair, params).items())

    assert all(not np.any(a) for _n, a in adpg_gradient(KeySeparatedReplay(), params).items())


def test_replay_key_separation() -> None:
    replay = KeySeparatedReplay()
    obs = make_observation(0.5, 1.0)
    for key in ("a", "b", "c"):
        for t in range(4):
            replay.append(key, RolloutStep(obs, 0.0, 0.1 * t, t))
    parts = replay.split()
    merged = KeySeparatedReplay.merge(parts)
    assert merged.keys() == replay.keys()
    assert all(a is b for k in replay.keys() for a, b in zip(merged.steps(k), replay.steps(k)))
    assert merged.total_steps == 12
    try:
        KeySeparatedReplay.merge([replay, parts[0]])
    except ContractError:
        pass
    else:
        raise AssertionError("duplicate key merged")
    try:
        replay.append("a", RolloutStep(obs, 0.0, 0.0, 2))
    except ContractError:
        pass
    else:
        raise AssertionError("out-of-order step accepted")
    replay.trim(2)
    assert [s.time for s in replay.steps("a")] == [2, 3]
    assert merged.seen == 12
    capped = KeySeparatedReplay(capacity=2)
    for t in range(5):
        capped.append("a", RolloutStep(obs, 0.0, 0.1, t))
    assert [s.time for s in capped.steps("a")] == [0, 1] and capped.seen == 5
    capped.clear()
    assert capped.seen == 0 and capped.total_steps == 0


def test_fixed_point_cases() -> None:
    c = 12.5e9
    assert fixed_point_check(4, [c / 4] * 4, [4.0] * 4, 2.0, c)
    assert fixed_point_check(1, [c], [1.2], 2.0, c)
    assert not fixed_point_check(2, [0.9 * c, 0.1 * c], [3.0, 3.0], 2.0, c)
    # every flow on target is enough; unequal inflations allow unequal shares
    assert fixed_point_check(2, [0.64 * c, 0.16 * c], [2.5, 5.0], 2.0, c)
    assert not fixed_point_check(2, [0.64 * c, 0.16 * c], [2.5, 2.5], 2.0, c)


def test_toy_gradient_direction() -> None:
    rng = np.random.default_rng(16)
    env = ToyEnv()
    agree = 0
    trials = 20
    for _ in range(trials):
        params = init_params(rng=rng, init_range=0.5, dtype=np.float64)
        if toy_direction_agrees(params, env, float(rng.uniform(0.1, 0.9))):
            agree += 1
    assert agree >= trials - 1


def _replayed_action(params: PolicyParams, tape: Tape) -> float:
    first = tape.steps[0]
    state = PolicyState(first.h_prev, first.c_prev)
    raw = 0.0
    for st in tape.steps:
        raw, state, _ = forward(params, state, st.x, window=0)
    return action_map(raw)


def test_ascent_step_moves_actions_along_coefficient() -> None:
    params = init_params(rng=np.random.default_rng(21), dtype=np.float64)
    replay = KeySeparatedReplay(capacity=16)
    sim = build_many_to_one(many_to_one(2, duration_ns=100_000, seed=5))
    sim.attach(AdpgAgent(params, PolicyConfig(), 2.0).controller_factory(replay, instance="dir"))
    sim.run()
    assert len(replay) == 2 and replay.total_steps > 2
    new = apply_update(params, adpg_gradient(replay, params), 1e-5)
    gain = 0.0
    for _key, steps in replay.items():
        cbar = float(np.mean([s.coeff for s in steps]))
        for s in steps:
            before = _replayed_action(params, s.tape)
            assert abs(before - action_map(s.raw)) < 1e-12
            gain += cbar * (_replayed_action(new, s.tape) - before)
    # first order: lr * steps * |grad|^2
    assert gain > 0, gain


def test_reset_tape_starts_fresh_window() -> None:
    params = init_params(rng=np.random.default_rng(22), dtype=np.float64)
    replay = KeySeparatedReplay()
    sim = build_many_to_one(many_to_one(2, duration_ns=200_000, seed=6))
    sim.attach(AdpgAgent(params, PolicyConfig(), 2.0).controller_factory(replay, instance="tape"))
    sim.run_until(60_000)
    assert any(len(ctl.state.history) > 1 for ctl in sim.controllers.values())
    hidden = {fid: ctl.state.lstm_hidden.copy() for fid, ctl in sim.controllers.items()}
    replay.clear()
    for fid, ctl in sim.controllers.items():
        ctl.reset_tape()
        assert ctl.state.history == () and np.array_equal(ctl.state.lstm_hidden, hidden[fid])
    sim.run_until(120_000)
    assert replay.total_steps > 0
    window = PolicyConfig().bptt_window
    for _key, steps in replay.items():
        assert [len(s.tape.steps) for s in steps] == [min(k + 1, window) for k in range(len(steps))]


# --- metrics ---


def _recorder(rates_by_flow: dict[int, float], bins: int = 10) -> MetricsRecorder:
    r = MetricsRecorder(bin_ns=10_000, port_rate_bps=LINK, duration_ns=bins * 10_000, bottleneck_ports=[9])
    for fid in rates_by_flow:
        r.flow_port[fid] = 9
        r.long_flows.add(fid)
        r.flow_start_ns[fid] = 0
    for b in range(bins):
        for fid, share in rates_by_flow.items():
            r.record_delivery(t=b * 10_000, flow_id=fid, size_bytes=int(125_000 * share))
    return r


def test_metrics_known_values() -> None:
    rep = compute_metrics(_recorder({0: 1.0}), scenario="one")
    assert abs(rep.su_percent - 100.0) < 1e-9 and rep.fr == 100.0 and rep.ql_us == 0.0 and rep.dr_gbps == 0.0
    assert rep.window_ns == 80_000 and not rep.failed
    assert compute_metrics(_recorder({0: 0.5, 1: 0.5})).fr == 100.0
    assert abs(compute_metrics(_recorder({0: 0.75, 1: 0.25})).fr - 100.0 / 3.0) < 1e-9
    assert fairness([]) == 100.0


def test_metrics_drop_failure() -> None:
    r = _recorder({0: 1.0})
    for b in range(2, 6):
        r.record_drop(t=b * 10_000, size_bytes=1024)
    rep = compute_metrics(r)
    assert rep.drop_bin_share == 0.5 and rep.failed and rep.dr_gbps > 0
    try:
        compute_metrics(r, (50_000, 55_000))
    except ConfigError:
        pass
    else:
        raise AssertionError("empty window accepted")


def test_recovery_time_cases() -> None:
    r = MetricsRecorder(port_rate_bps=LINK)
    r.long_flows.add(0)
    r.flow_start_ns[0] = 0
    assert recovery_time(r, 0) == 0.0

    r.flow_start_ns[1] = 1_000
    for k in range(1, 40):
        r.record_probe(t=1_000 * k, flow_id=0, rate_bps=LINK, rtt_ns=4_012)
    assert recovery_time(r, 0) == math.inf
    r.record_flow_finish(t=5_000, flow_id=1)
    assert recovery_time(r, 0) == (14_000 - 1_000) / 1e9


def test_recovery_time_simulated() -> None:
    spec = long_short(2, duration_ns=2_000_000, seed=21)
    sim = build_long_short(spec)
    sim.attach(rule_controller_factory("fixed"))
    sim.run()
    rt = recovery_time(sim.recorder, 0)
    line_rate_s = 1_048_576 * 8 / LINK
    assert line_rate_s <= rt <= 4e-4
    rep = compute_metrics(sim.recorder, long_short=True)
    assert rep.recovery_time_s == rt and not rep.failed


def test_su_accounting_identity() -> None:
    sim = build_many_to_one(many_to_one(4, duration_ns=300_000, seed=2))
    sim.attach(rule_controller_factory("swift"))
    rec = sim.run()
    assert rec.delivered_bytes(port=4) == sum(f.bytes_delivered for f in sim.flows.values())
    rep = compute_metrics(rec)
    assert 0.0 <= rep.su_percent <= 100.0 and 0.0 <= rep.fr <= 100.0
    assert rep.ql_us >= 0.0 and rep.dr_gbps >= 0.0


# --- pareto ---


def _report(su: float, fr: float, ql: float, dr: float, scenario: str = "m2o-4") -> MetricsReport:
    return MetricsReport(scenario, su, fr, ql, dr, 100_000)


def test_pareto_cases() -> None:
    a = _report(90, 90, 5, 0)
    assert pareto_compare(a, a) is Domination.INCOMPARABLE
    assert pareto_compare(_report(97, 92, 6, 0), a) is Domination.A_DOMINATES_B
    assert pareto_compare(a, _report(97, 92, 6, 0)) is Domination.B_DOMINATES_A
    assert pareto_compare(_report(97, 90, 12, 0), a) is Domination.INCOMPARABLE
    try:
        pareto_compare(a, _report(90, 90, 5, 0, scenario="a2a-4"))
    except ConfigError:
        pass
    else:
        raise AssertionError("cross-scenario comparison accepted")
    assert non_dominated([a, _report(97, 92, 6, 0), _report(50, 50, 50, 1)]) == [False, True, False]


def test_pareto_antisymmetry() -> None:
    rng = random.Random(17)
    for _ in range(500):
        a = _report(rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(0, 30), rng.uniform(0, 10))
        b = _report(rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(0, 30), rng.uniform(0, 10))
        ab, ba = pareto_compare(a, b), pareto_compare(b, a)
        if ab is Domination.A_DOMINATES_B:
            assert ba is Domination.B_DOMINATES_A
        if ab is Domination.INCOMPARABLE:
            assert ba is Domination.INCOMPARABLE
        assert pareto_compare(a, a) is Domination.INCOMPARABLE


# --- benchmark harness ---


def test_benchmark_cardinality_and_determinism() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        ckpt = os.path.join(tmp, "adpg.bin")
        save_checkpoint(ckpt, init_params(rng=np.random.default_rng(18)), {"target": 2.0})
        suite = SuiteConfig.from_dict(
            {
                "scenarios": [
                    {"kind": "ManyToOne", "total_flows": 2, "duration_ns": 200_000},
                    {"kind": "ManyToOne", "total_flows": 4, "duration_ns": 200_000},
                ],
                "algorithms": ["adpg", "swift"],
                "seeds": [1, 2, 3],
                "checkpoints": {"adpg": ckpt},
            }
        )
        csv_path = os.path.join(tmp, "runs.csv")
        records = run_benchmark(suite, csv_path=csv_path)
        assert len(records) == 12
        assert [(r.scenario, r.algo, r.seed) for r in records][:3] == [
            ("m2o-2", "adpg", 1), ("m2o-2", "adpg", 2), ("m2o-2", "adpg", 3)
        ]
        with open(csv_path, encoding="utf-8") as f:
            text = f.read()
        assert text.splitlines()[0] == "scenario,algo,seed,su,fr,ql_us,dr_gbps,recovery_s,failed"
        assert runs_csv(run_benchmark(suite)) == text
        table = summary_table(records)
        assert "warm-up" in table and "*" in table


def test_failed_run_is_recorded() -> None:
    rec = run_single(many_to_one(100, duration_ns=100_000), "swift", 1)
    assert rec.error is not None and rec.failed and rec.report is None
    assert rec.csv_row()[-1] == 1
    table = summary_table([rec])
    assert "m2o-100" in table


def test_each_baseline_completes() -> None:
    for algo in ("dcqcn", "hpcc", "swift"):
        rec = run_single(many_to_one(2, duration_ns=300_000), algo, 4)
        assert rec.error is None and rec.report is not None, algo
        assert 0.0 <= rec.report.su_percent <= 100.0


# --- training and CLI ---


def _tiny_train_config(**kw) -> TrainConfig:
    base = dict(
        iterations=2,
        rollout_len=8,
        train_flows=(2,),
        episode_iterations=2,
        max_iteration_ns=200_000,
        slice_ns=20_000,
        checkpoint_every=1,
    )
    base.update(kw)
    return TrainConfig(**base)


def test_parse_target() -> None:
    assert parse_target("strict") == 1.0
    assert parse_target("Standard") == 2.0
    assert parse_target("20") == 20.0
    assert parse_target(0.5) == 0.5
    try:
        parse_target("lenient")
    except ConfigError:
        pass
    else:
        raise AssertionError("unknown target accepted")


def test_train_is_deterministic() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "p.bin")
        curve = os.path.join(tmp, "curve.csv")
        a = train(_tiny_train_config(), out=out, curve_path=curve)
        b = train(_tiny_train_config())
        assert [r.row() for r in a.curve] == [r.row() for r in b.curve]
        assert all(np.array_equal(x, getattr(b.params, n)) for n, x in a.params.items())
        assert len(a.curve) == 2 and a.decision_steps >= 2 * 2 * 8
        loaded = load_checkpoint(out)
        assert all(np.array_equal(x, getattr(loaded, n)) for n, x in a.params.items())
        with open(curve, encoding="utf-8") as f:
            assert f.readline().strip() == "iteration,mean_reward,mean_abs_coeff,su,fr"


def test_train_defaults_fit_budget() -> None:
    cfg = TrainConfig()
    assert cfg.policy.optimizer == "adam" and cfg.lr == cfg.policy.lr == 3e-3
    assert cfg.rollout_len == cfg.policy.bptt_window and cfg.policy.init_range is None
    assert cfg.max_decision_steps == 50_000 and cfg.iterations >= 100
    # recorded steps alone leave room for at least 100 updates
    assert cfg.max_decision_steps // (cfg.rollout_len * sum(cfg.train_flows)) >= 100
    loaded = TrainConfig.from_dict({"policy": {"bptt_window": 8}})
    assert loaded.policy.optimizer == "adam" and loaded.policy.bptt_window == 8 and loaded.lr == 3e-3


def test_train_stops_at_step_budget() -> None:
    result = train(_tiny_train_config(iterations=50, max_decision_steps=1))
    assert len(result.curve) == 1 and result.decision_steps >= 2 * 8
    full = train(_tiny_train_config(iterations=3))
    assert len(full.curve) == 3


def test_cli_commands() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        cfg = os.path.join(tmp, "train.json")
        save_document(cfg, _tiny_train_config(iterations=1).to_dict())
        ckpt = os.path.join(tmp, "p.bin")
        assert cli_main(["train", "--config", cfg, "--out", ckpt, "--target", "loose", "-q"]) == 0
        assert cli_main(["policy", "inspect", ckpt, "-q"]) == 0
        qckpt = os.path.join(tmp, "p.q")
        assert cli_main(["quantize", "--ckpt", ckpt, "--out", qckpt, "-q"]) == 0
        assert is_quantized(qckpt)

        scen = os.path.join(tmp, "m2o.json")
        save_document(scen, many_to_one(2).to_dict())
        report = os.path.join(tmp, "eval.csv")
        assert cli_main(["eval", "--ckpt", qckpt, "--scenario", scen, "--report", report, "--duration-ms", "0.2", "-q"]) == 0
        assert os.path.exists(report)
        assert cli_main(["eval", "--algo", "hpcc", "--scenario", scen, "--report", report, "--flows", "3", "--duration-ms", "0.2", "-q"]) == 0
        assert cli_main(["eval", "--scenario", os.path.join(tmp, "missing.json"), "--report", report, "--algo", "swift", "-q"]) == 2
        assert cli_main(["eval", "--scenario", scen, "--report", report, "-q"]) == 2
        assert cli_main(["eval", "--algo", "adpg", "--scenario", scen, "--report", report, "-q"]) == 2
        assert cli_main(["eval", "--algo", "hpcc", "--ckpt", ckpt, "--scenario", scen, "--report", report, "-q"]) == 2

        trace = os.path.join(tmp, "trace", "m2o.txt")
        args = ["eval", "--algo", "adpg", "--ckpt", ckpt, "--scenario", scen, "--report", report]
        assert cli_main(args + ["--trace", trace, "--duration-ms", "0.2", "-q"]) == 0
        with open(report, encoding="utf-8") as f:
            rows = [line.split(",") for line in f.read().splitlines() if line.startswith("m2o-2,")]
        assert rows and all(r[1] == "adpg" for r in rows)
        with open(trace, encoding="utf-8") as f:
            lines = f.read().splitlines()
        assert lines[0].startswith("# m2o-2 adpg seed=") and len(lines) > 10
        assert all(len(line.split()) == 5 for line in lines[1:])


# --- slow reproductions (python -m ccgym.tests --slow) ---


def _eval(spec: ScenarioSpec, factory) -> MetricsReport:
    sim = build_scenario(spec)
    sim.attach(factory)
    sim.run()
    return compute_metrics(sim.recorder, scenario=spec.label, long_short=spec.kind.value == "LongShort")


def slow_gradient_suite() -> None:
    for seed in range(20):
        _gradient_check(100 + seed)
    rng = np.random.default_rng(99)
    env = ToyEnv()
    agree = sum(
        toy_direction_agrees(init_params(rng=rng, init_range=0.5, dtype=np.float64), env, float(rng.uniform(0.1, 0.9)))
        for _ in range(200)
    )
    assert agree >= 190


def slow_simulator_suite() -> None:
    rng = random.Random(1000)
    for case in range(1000):
        flows = rng.randint(2, 8)
        algo = rng.choice(["dcqcn", "hpcc", "swift", "fixed"])
        seed = rng.randint(0, 1 << 30)
        spec = many_to_one(flows, duration_ns=50_000, seed=seed)
        sim = build_many_to_one(spec, trace=True)
        sim.attach(rule_controller_factory(algo))
        sim.run_until(25_000)
        assert sim.conservation_holds(), case
        sim.run()
        assert sim.conservation_holds(), case
        assert all(a < b for a, b in zip(sim.trace_order, sim.trace_order[1:])), case
        if case % 50 == 0:
            twin = build_many_to_one(spec, trace=True)
            twin.attach(rule_controller_factory(algo))
            twin.run()
            assert twin.trace_digest() == sim.trace_digest(), case


def slow_training_reproduction() -> PolicyParams:
    cfg = TrainConfig()
    result = train(cfg)
    assert result.decision_steps <= 50_000 and len(result.curve) >= 100, (result.decision_steps, len(result.curve))
    first, last = result.curve[0].mean_abs_coeff, result.curve[-1].mean_abs_coeff
    assert last <= 0.5 * first, (first, last)
    agent = AdpgAgent(result.params, cfg.policy, cfg.target, record=False)
    rep = _eval(many_to_one(4, duration_ns=5_000_000), agent.controller_factory(None))
    assert rep.fr >= 80 and rep.dr_gbps == 0 and rep.su_percent >= 85, rep
    return result.params


def slow_generalization(params: PolicyParams) -> None:
    agent = AdpgAgent(params, PolicyConfig(), 2.0, record=False)
    m2o = _eval(many_to_one(128, duration_ns=5_000_000), agent.controller_factory(None))
    assert m2o.dr_gbps == 0 and m2o.su_percent >= 85, m2o
    a2a = _eval(all_to_all(4, duration_ns=5_000_000), agent.controller_factory(None))
    assert a2a.dr_gbps == 0, a2a
    ls = _eval(long_short(2, duration_ns=5_000_000), agent.controller_factory(None))
    assert ls.dr_gbps == 0 and ls.recovery_time_s is not None and math.isfinite(ls.recovery_time_s), ls


def slow_operation_points() -> None:
    qls, sus = [], []
    for target in (1.0, 2.0, 20.0):
        cfg = TrainConfig(target=target)
        result = train(cfg)
        agent = AdpgAgent(result.params, cfg.policy, target, record=False)
        rep = _eval(many_to_one(8, duration_ns=5_000_000), agent.controller_factory(None))
        qls.append(rep.ql_us)
        sus.append(rep.su_percent)
    assert qls == sorted(qls) and sus == sorted(sus), (qls, sus)


def slow_quantization(params: PolicyParams) -> None:
    float_agent = AdpgAgent(params, PolicyConfig(), 2.0, record=False)
    q_agent = AdpgAgent(params, PolicyConfig(), 2.0, quantized=quantize(params), record=False)
    a = _eval(many_to_one(4, duration_ns=5_000_000), float_agent.controller_factory(None))
    b = _eval(many_to_one(4, duration_ns=5_000_000), q_agent.controller_factory(None))
    assert abs(a.su_percent - b.su_percent) <= 5 and abs(a.fr - b.fr) <= 5 and b.dr_gbps == 0


def slow_inflation_trend() -> None:
    medians = []
    ns = (2, 4, 8, 16)
    for n in ns:
        spec = many_to_one(n, duration_ns=2_000_000, net=NetConfig(initial_rate_fraction=1.0 / n))
        sim = build_many_to_one(spec)
        sim.attach(rule_controller_factory("fixed"))
        sim.run()
        warm = spec.duration_ns // 5
        infl = [
            s.rtt_ns / sim.flows[fid].base_rtt_ns
            for fid, samples in sim.recorder.samples.items()
            for s in samples
            if s.t >= warm
        ]
        medians.append(float(np.median(infl)))
    ranks = np.argsort(np.argsort(medians)).astype(float)
    ref = np.argsort(np.argsort([math.sqrt(n) for n in ns])).astype(float)
    rho = float(np.corrcoef(ranks, ref)[0, 1])
    assert rho > 0.9, medians


def slow_baselines() -> None:
    for algo in ("dcqcn", "hpcc", "swift"):
        for flows in (2, 8):
            rep = _eval(many_to_one(flows, duration_ns=5_000_000), rule_controller_factory(algo))
            assert rep.dr_gbps == 0 and rep.su_percent >= 70, (algo, flows, rep)


def run() -> None:
    test_event_queue_order()
    test_event_queue_rejects_past()
    test_schedule_burst_credit()
    test_schedule_burst_cap_and_inactive()
    test_short_flow_stops_after_size()
    test_switch_drop_and_floor()
    test_switch_marking_frequency()
    test_switch_fifo_and_serialization()
    test_deliver_cnp_and_probe()
    test_base_rtt()
    test_idle_probe_rtt_matches_base()
    test_simulator_properties_randomized()
    test_drops_raise_nacks()
    test_golden_trace_determinism()
    test_mapping_table()
    test_many_to_one_build()
    test_all_to_all_build()
    test_all_to_all_two_hosts_is_fair()
    test_long_short_build()
    test_scenario_document()
    test_swift_increase_below_target()
    test_swift_decrease_once_per_window()
    test_dcqcn_cnp_cut()
    test_dcqcn_recovers_to_line_rate()
    test_hpcc_overutilized_cut()
    test_hpcc_equilibrium_and_first_sample()
    test_cc_clamp_and_replay()
    test_cc_monotone_response()
    test_cc_flow_mismatch_and_registry()
    test_policy_forward_basics()
    test_action_map()
    test_backward_zero_and_linearity()
    test_backward_finite_differences()
    test_apply_update_rules()
    test_update_moves_action_with_coefficient()
    test_recurrence_isolation()
    test_default_init_scales()
    test_quantize_error_bound()
    test_quantized_bias_path_exact()
    test_quantized_action_deviation()
    test_checkpoint_files()
    test_reward_known_values()
    test_reward_nonpositive_grid()
    test_on_probe_return()
    test_adpg_gradient_cases()
    test_replay_key_separation()
    test_fixed_point_cases()
    test_toy_gradient_direction()
    test_ascent_step_moves_actions_along_coefficient()
    test_reset_tape_starts_fresh_window()
    test_metrics_known_values()
    test_metrics_drop_failure()
    test_recovery_time_cases()
    test_recovery_time_simulated()
    test_su_accounting_identity()
    test_pareto_cases()
    test_pareto_antisymmetry()
    test_benchmark_cardinality_and_determinism()
    test_failed_run_is_recorded()
    test_each_baseline_completes()
    test_parse_target()
    test_train_is_deterministic()
    test_train_defaults_fit_budget()
    test_train_stops_at_step_budget()
    test_cli_commands()
    print("Sanity checks passed.")


def run_slow() -> None:
    slow_gradient_suite()
    slow_simulator_suite()
    params = slow_training_reproduction()
    slow_generalization(params)
    slow_quantization(params)
    slow_operation_points()
    slow_inflation_trend()
    slow_baselines()
    print("Reproduction checks passed.")


if __name__ == "__main__":
    run()
    if "--slow" in sys.argv[1:]:
        run_slow()
