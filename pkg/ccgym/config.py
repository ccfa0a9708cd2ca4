from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Any

from ccgym.core.errors import ConfigError


PROJECT_NAME = "ccgym"

# --- Fabric defaults ---
# Line rate is 100 Gbit/s (12.5 GB/s) everywhere; host uplinks and switch ports match.
LINK_RATE_BPS = 100_000_000_000
MTU_BYTES = 1024
PROBE_BYTES = 64
CONTROL_BYTES = 64  # CNP / NACK
MAX_BURST_BYTES = 16 * 1024
PROP_DELAY_NS = 1_000  # per hop, each way
SWITCH_BUFFER_BYTES = 5_000_000

# A flow is rescheduled after a full burst of credit, or after this interval if a whole packet is ready.
SCHED_INTERVAL_NS = 4_000

# Rates are floored at LINK_RATE_BPS / MIN_RATE_DIVISOR.
MIN_RATE_DIVISOR = 10_000

# RED-style ECN marking.
ECN_KMIN_BYTES = 100_000
ECN_KMAX_BYTES = 1_000_000
ECN_PMAX = 0.8

# Receiver-side CNP pacing per flow.
CNP_INTERVAL_NS = 50_000

# Metric recording bins.
METRICS_BIN_NS = 10_000
WARMUP_FRACTION = 0.20
# A run is flagged failed if drops occur in more than this share of measurement bins.
DROP_BIN_FAIL_SHARE = 0.10

# Long-short recovery: smoothed long-flow rate must reach this share of line rate ...
RECOVERY_RATE_SHARE = 0.95
# ... and hold for this many consecutive probe samples.
RECOVERY_HOLD_SAMPLES = 10
RECOVERY_EWMA = 0.25

# Pareto similarity band (same units as each metric).
PARETO_BAND = 5.0

SEED = 1337

# --- Policy / training defaults ---
POLICY_HIDDEN_1 = 32
POLICY_HIDDEN_2 = 16
POLICY_LSTM = 16
# Hidden layers draw U(+-1/sqrt(fan_in)); the output layer starts near zero so actions start near 1.
POLICY_INIT_RANGE: float | None = None
OUTPUT_INIT_RANGE = 3e-3
BPTT_WINDOW = 16
ACTION_MIN = 0.8
ACTION_MAX = 1.2

TARGET_STRICT = 1.0
TARGET_STANDARD = 2.0
TARGET_LOOSE = 20.0
OPERATION_POINTS: dict[str, float] = {
    "strict": TARGET_STRICT,
    "standard": TARGET_STANDARD,
    "loose": TARGET_LOOSE,
}

# Steps per flow per iteration; equals the BPTT window.
ROLLOUT_LEN = 16
LEARNING_RATE = 1e-3
TRAIN_LEARNING_RATE = 3e-3
TRAIN_OPTIMIZER = "adam"
# Training stops before an iteration that would start past this many decision steps.
MAX_DECISION_STEPS = 50_000
TRAIN_FLOWS: tuple[int, ...] = (2, 4, 8)


def _known(cls: type, data: dict[str, Any]) -> dict[str, Any]:
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in data.items() if k in names}


@dataclass
class EcnConfig:
    kmin_bytes: int = ECN_KMIN_BYTES
    kmax_bytes: int = ECN_KMAX_BYTES
    pmax: float = ECN_PMAX

    def validate(self) -> None:
        if self.kmin_bytes < 0 or self.kmax_bytes <= self.kmin_bytes:
            raise ConfigError(f"ecn: need 0 <= kmin < kmax, got {self.kmin_bytes}, {self.kmax_bytes}")
        if not 0.0 <= self.pmax <= 1.0:
            raise ConfigError(f"ecn: pmax must be in [0,1], got {self.pmax}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "EcnConfig":
        if not data:
            return cls()
        return cls(**_known(cls, data))


@dataclass
class NetConfig:
    """Topology and device parameters shared by every scenario family."""

    link_rate_bps: int = LINK_RATE_BPS
    mtu_bytes: int = MTU_BYTES
    probe_bytes: int = PROBE_BYTES
    control_bytes: int = CONTROL_BYTES
    max_burst_bytes: int = MAX_BURST_BYTES
    prop_delay_ns: int = PROP_DELAY_NS
    buffer_bytes: int = SWITCH_BUFFER_BYTES
    sched_interval_ns: int = SCHED_INTERVAL_NS
    cnp_interval_ns: int = CNP_INTERVAL_NS
    telemetry: bool = True
    initial_rate_fraction: float = 1.0
    metrics_bin_ns: int = METRICS_BIN_NS
    ecn: EcnConfig = field(default_factory=EcnConfig)

    @property
    def min_rate_bps(self) -> int:
        return max(1, self.link_rate_bps // MIN_RATE_DIVISOR)

    def validate(self) -> None:
        for name in ("link_rate_bps", "mtu_bytes", "probe_bytes", "control_bytes", "max_burst_bytes", "buffer_bytes"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"net: {name} must be positive")
        if self.prop_delay_ns < 0:
            raise ConfigError("net: prop_delay_ns must be >= 0")
        if self.max_burst_bytes < self.mtu_bytes:
            raise ConfigError("net: max_burst_bytes must hold at least one MTU")
        if not 0.0 < self.initial_rate_fraction <= 1.0:
            raise ConfigError("net: initial_rate_fraction must be in (0,1]")
        if self.metrics_bin_ns <= 0:
            raise ConfigError("net: metrics_bin_ns must be positive")
        self.ecn.validate()

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["ecn"] = self.ecn.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "NetConfig":
        if not data:
            return cls()
        raw = _known(cls, data)
        raw["ecn"] = EcnConfig.from_dict(data.get("ecn"))
        return cls(**raw)
