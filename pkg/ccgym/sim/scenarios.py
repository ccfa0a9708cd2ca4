from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Any, TextIO

from ccgym.config import NetConfig, SEED
from ccgym.core.errors import ConfigError
from ccgym.sim.host import FlowState
from ccgym.sim.network import Simulation, Topology


logger = logging.getLogger(__name__)


SHORT_FLOW_BYTES = 1_048_576  # 1 MB
# Gap between consecutive many-to-one flow starts, on average.
START_STAGGER_NS = 10_000
START_WINDOW_SHARE = 0.10


class ScenarioKind(str, Enum):
    MANY_TO_ONE = "ManyToOne"
    ALL_TO_ALL = "AllToAll"
    LONG_SHORT = "LongShort"


# (total_flows, hosts, flows_per_host) for the many-to-one family.
MAPPING_TABLE: tuple[tuple[int, int, int], ...] = (
    (2, 2, 1),
    (4, 4, 1),
    (16, 16, 1),
    (32, 32, 1),
    (64, 64, 1),
    (128, 64, 2),
    (256, 32, 8),
    (512, 64, 8),
    (1024, 32, 32),
    (2048, 64, 32),
    (4096, 64, 64),
    (8192, 64, 128),
)

MAX_HOSTS = 64


def many_to_one_layout(total_flows: int) -> tuple[int, int]:
    """(hosts, flows_per_host) for a many-to-one run of `total_flows` flows."""
    for total, hosts, per_host in MAPPING_TABLE:
        if total == total_flows:
            return hosts, per_host
    if total_flows < 1:
        raise ConfigError(f"scenario: total_flows must be positive, got {total_flows}")
    if total_flows <= MAX_HOSTS:
        return total_flows, 1
    if total_flows % MAX_HOSTS == 0:
        return MAX_HOSTS, total_flows // MAX_HOSTS
    raise ConfigError(f"scenario: no host layout for {total_flows} flows; set hosts and flows_per_host")


@dataclass
class ScenarioSpec:
    kind: ScenarioKind = ScenarioKind.MANY_TO_ONE
    total_flows: int = 2
    hosts: int = 0  # 0 = derive from the mapping table
    flows_per_host: int = 0
    duration_ns: int = 5_000_000
    seed: int = SEED
    name: str = ""
    # many-to-one / all-to-all: flow starts spread over this window (-1 = derived)
    start_window_ns: int = -1
    # all-to-all
    flows_per_pair: int = 1
    # long-short
    short_flow_count: int = 0
    short_bytes: int = SHORT_FLOW_BYTES
    start_time_ns: int = -1
    window_ns: int = -1
    net: NetConfig = field(default_factory=NetConfig)

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind is ScenarioKind.MANY_TO_ONE:
            return f"m2o-{self.total_flows}"
        if self.kind is ScenarioKind.ALL_TO_ALL:
            return f"a2a-{self.hosts}"
        return f"ls-{self.total_flows}"

    def resolved(self) -> "ScenarioSpec":
        """Copy with derived fields filled in; raises ConfigError when inconsistent."""
        s = replace(self)
        if s.duration_ns <= 0:
            raise ConfigError(f"scenario {s.label}: duration_ns must be positive")
        if s.kind is ScenarioKind.MANY_TO_ONE:
            if s.hosts <= 0 and s.flows_per_host <= 0:
                s.hosts, s.flows_per_host = many_to_one_layout(s.total_flows)
            if s.hosts * s.flows_per_host != s.total_flows:
                raise ConfigError(
                    f"scenario {s.label}: hosts x flows_per_host = {s.hosts} x {s.flows_per_host} "
                    f"!= total_flows {s.total_flows}"
                )
        elif s.kind is ScenarioKind.ALL_TO_ALL:
            if s.hosts < 2:
                raise ConfigError(f"scenario {s.label}: all-to-all needs at least 2 hosts, got {s.hosts}")
            if s.flows_per_pair < 1:
                raise ConfigError(f"scenario {s.label}: flows_per_pair must be >= 1")
            s.total_flows = s.hosts * (s.hosts - 1) * s.flows_per_pair
            s.flows_per_host = (s.hosts - 1) * s.flows_per_pair
        else:
            if s.short_flow_count <= 0:
                s.short_flow_count = s.total_flows - 1
            if s.short_flow_count < 1:
                raise ConfigError(f"scenario {s.label}: long-short needs at least one short flow")
            if s.short_bytes <= 0:
                raise ConfigError(f"scenario {s.label}: short_bytes must be positive")
            s.total_flows = s.short_flow_count + 1
            s.hosts = s.total_flows
            s.flows_per_host = 1
            if s.start_time_ns < 0:
                s.start_time_ns = s.duration_ns // 10
            if s.window_ns < 0:
                s.window_ns = s.duration_ns // 4 - s.start_time_ns
            if s.start_time_ns <= 0 or s.window_ns < 0:
                raise ConfigError(f"scenario {s.label}: interrupts must start after t=0 inside the run")
        if s.start_window_ns < 0:
            s.start_window_ns = min(START_STAGGER_NS * (s.total_flows - 1), int(s.duration_ns * START_WINDOW_SHARE))
        s.net.validate()
        return s

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "kind": self.kind.value,
            "total_flows": int(self.total_flows),
            "hosts": int(self.hosts),
            "flows_per_host": int(self.flows_per_host),
            "duration_ns": int(self.duration_ns),
            "seed": int(self.seed),
            "name": str(self.name),
            "start_window_ns": int(self.start_window_ns),
        }
        if self.kind is ScenarioKind.ALL_TO_ALL:
            d["flows_per_pair"] = int(self.flows_per_pair)
        if self.kind is ScenarioKind.LONG_SHORT:
            d["short_flow_count"] = int(self.short_flow_count)
            d["short_bytes"] = int(self.short_bytes)
            d["start_time_ns"] = int(self.start_time_ns)
            d["window_ns"] = int(self.window_ns)
        d["net"] = self.net.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "ScenarioSpec":
        if not data:
            return cls()
        names = {f.name for f in fields(cls)} - {"kind", "net"}
        raw = {k: v for k, v in data.items() if k in names}
        if "duration_ms" in data and "duration_ns" not in data:
            raw["duration_ns"] = int(round(float(data["duration_ms"]) * 1_000_000))
        try:
            kind = ScenarioKind(str(data.get("kind", ScenarioKind.MANY_TO_ONE.value)))
        except ValueError as e:
            raise ConfigError(f"scenario: unknown kind {data.get('kind')!r}") from e
        return cls(kind=kind, net=NetConfig.from_dict(data.get("net")), **raw)


def _initial_rate(net: NetConfig) -> int:
    return max(net.min_rate_bps + 1, int(net.link_rate_bps * net.initial_rate_fraction))


def _stagger(rng: random.Random, count: int, window_ns: int) -> list[int]:
    """Start times: the first flow at 0, the rest uniform in [0, window]."""
    if count <= 0:
        return []
    starts = [0]
    for _ in range(count - 1):
        starts.append(rng.randint(0, max(0, window_ns)))
    return starts


def build_many_to_one(
    spec: ScenarioSpec, *, trace: bool = False, trace_sink: TextIO | None = None
) -> Simulation:
    if spec.kind is not ScenarioKind.MANY_TO_ONE:
        raise ConfigError(f"build_many_to_one: scenario kind is {spec.kind.value}")
    s = spec.resolved()
    net = s.net
    receiver = s.hosts
    rng = random.Random(s.seed)
    starts = _stagger(rng, s.total_flows, s.start_window_ns)
    rate = _initial_rate(net)
    flows: list[FlowState] = []
    fid = 0
    for h in range(s.hosts):
        for _ in range(s.flows_per_host):
            flows.append(FlowState(fid, h, receiver, rate, start_ns=starts[fid]))
            fid += 1
    topo = Topology(net, s.hosts + 1, (receiver,))
    logger.debug("many-to-one %s: %d hosts x %d flows", s.label, s.hosts, s.flows_per_host)
    return Simulation(
        net, topo, flows, seed=s.seed, duration_ns=s.duration_ns, name=s.label,
        bottleneck_ports=[receiver], trace=trace, trace_sink=trace_sink,
    )


def build_all_to_all(
    hosts: int | ScenarioSpec,
    *,
    duration_ns: int | None = None,
    seed: int | None = None,
    net: NetConfig | None = None,
    trace: bool = False,
    trace_sink: TextIO | None = None,
) -> Simulation:
    if isinstance(hosts, ScenarioSpec):
        spec = hosts
    else:
        spec = ScenarioSpec(kind=ScenarioKind.ALL_TO_ALL, hosts=int(hosts))
    if spec.kind is not ScenarioKind.ALL_TO_ALL:
        raise ConfigError(f"build_all_to_all: scenario kind is {spec.kind.value}")
    overrides: dict[str, Any] = {}
    if duration_ns is not None:
        overrides["duration_ns"] = int(duration_ns)
    if seed is not None:
        overrides["seed"] = int(seed)
    if net is not None:
        overrides["net"] = net
    s = replace(spec, **overrides).resolved()
    rng = random.Random(s.seed)
    starts = _stagger(rng, s.total_flows, s.start_window_ns)
    rate = _initial_rate(s.net)
    flows: list[FlowState] = []
    fid = 0
    for src in range(s.hosts):
        for dst in range(s.hosts):
            if src == dst:
                continue
            for _ in range(s.flows_per_pair):
                flows.append(FlowState(fid, src, dst, rate, start_ns=starts[fid]))
                fid += 1
    ports = tuple(range(s.hosts))
    topo = Topology(s.net, s.hosts, ports)
    return Simulation(
        s.net, topo, flows, seed=s.seed, duration_ns=s.duration_ns, name=s.label,
        bottleneck_ports=list(ports), trace=trace, trace_sink=trace_sink,
    )


def interrupt_schedule(spec: ScenarioSpec) -> list[int]:
    """Seeded short-flow start times, sorted, inside [start_time_ns, start_time_ns + window_ns]."""
    s = spec.resolved()
    rng = random.Random(s.seed)
    return sorted(s.start_time_ns + rng.randint(0, s.window_ns) for _ in range(s.short_flow_count))


def build_long_short(
    spec: ScenarioSpec, *, trace: bool = False, trace_sink: TextIO | None = None
) -> Simulation:
    if spec.kind is not ScenarioKind.LONG_SHORT:
        raise ConfigError(f"build_long_short: scenario kind is {spec.kind.value}")
    s = spec.resolved()
    net = s.net
    receiver = s.hosts
    rate = _initial_rate(net)
    flows = [FlowState(0, 0, receiver, rate, start_ns=0)]
    for i, start in enumerate(interrupt_schedule(s), start=1):
        flows.append(
            FlowState(i, i, receiver, rate, start_ns=start, size_bytes=s.short_bytes, long_lived=False)
        )
    topo = Topology(net, s.hosts + 1, (receiver,))
    return Simulation(
        net, topo, flows, seed=s.seed, duration_ns=s.duration_ns, name=s.label,
        bottleneck_ports=[receiver], trace=trace, trace_sink=trace_sink,
    )


def build_scenario(spec: ScenarioSpec, *, trace: bool = False, trace_sink: TextIO | None = None) -> Simulation:
    if spec.kind is ScenarioKind.MANY_TO_ONE:
        return build_many_to_one(spec, trace=trace, trace_sink=trace_sink)
    if spec.kind is ScenarioKind.ALL_TO_ALL:
        return build_all_to_all(spec, trace=trace, trace_sink=trace_sink)
    return build_long_short(spec, trace=trace, trace_sink=trace_sink)


def many_to_one(total_flows: int, *, duration_ns: int = 5_000_000, seed: int = SEED, **kw: Any) -> ScenarioSpec:
    return ScenarioSpec(kind=ScenarioKind.MANY_TO_ONE, total_flows=int(total_flows), duration_ns=duration_ns, seed=seed, **kw)


def long_short(total_flows: int, *, duration_ns: int = 5_000_000, seed: int = SEED, **kw: Any) -> ScenarioSpec:
    return ScenarioSpec(kind=ScenarioKind.LONG_SHORT, total_flows=int(total_flows), duration_ns=duration_ns, seed=seed, **kw)


def all_to_all(hosts: int, *, duration_ns: int = 5_000_000, seed: int = SEED, **kw: Any) -> ScenarioSpec:
    return ScenarioSpec(kind=ScenarioKind.ALL_TO_ALL, hosts=int(hosts), duration_ns=duration_ns, seed=seed, **kw)
