from __future__ import annotations

import math
from dataclasses import dataclass

from ccgym.config import (
    DROP_BIN_FAIL_SHARE,
    RECOVERY_EWMA,
    RECOVERY_HOLD_SAMPLES,
    RECOVERY_RATE_SHARE,
    WARMUP_FRACTION,
)
from ccgym.core.errors import ConfigError
from ccgym.sim.analytics import MetricsRecorder


@dataclass(frozen=True)
class MetricsReport:
    scenario: str
    su_percent: float
    fr: float
    ql_us: float
    dr_gbps: float
    window_ns: int
    drop_bin_share: float = 0.0
    failed: bool = False
    recovery_time_s: float | None = None
    long_bw_percent: float | None = None


def fairness(rates: list[float]) -> float:
    """100 * min / max; a single flow is perfectly fair."""
    if not rates:
        return 100.0
    hi = max(rates)
    if hi <= 0:
        return 0.0
    return 100.0 * min(rates) / hi


def measurement_window(recorder: MetricsRecorder, warmup_fraction: float = WARMUP_FRACTION) -> tuple[int, int]:
    end = recorder.duration_ns
    return int(end * warmup_fraction), end


def compute_metrics(
    recorder: MetricsRecorder,
    window: tuple[int, int] | None = None,
    *,
    scenario: str = "",
    long_short: bool = False,
    warmup_fraction: float = WARMUP_FRACTION,
) -> MetricsReport:
    """SU/FR/QL/DR over whole bins inside `window` (default: the run minus warm-up)."""
    start, end = window if window is not None else measurement_window(recorder, warmup_fraction)
    bins = recorder.bin_range(start, end)
    if end <= start or len(bins) == 0:
        raise ConfigError(f"metrics: empty measurement window [{start}, {end})")
    window_ns = len(bins) * recorder.bin_ns
    window_s = window_ns / 1e9
    rate = float(recorder.port_rate_bps)
    ports = recorder.bottleneck_ports

    port_bytes = {p: 0 for p in ports}
    flow_bytes: dict[int, int] = {}
    dropped = 0
    drop_bins = 0
    wait_total = 0
    wait_count = 0
    for b in bins:
        m = recorder.bins.get(b)
        if m is None:
            continue
        for p in ports:
            port_bytes[p] += m.delivered_by_port.get(p, 0)
        for fid, n in m.delivered_by_flow.items():
            flow_bytes[fid] = flow_bytes.get(fid, 0) + n
        dropped += m.dropped_bytes
        if m.drops:
            drop_bins += 1
        wait_total += m.wait_ns_total
        wait_count += m.wait_count

    delivered_bits = 8.0 * sum(port_bytes.values())
    su = 100.0 * delivered_bits / (rate * window_s * max(1, len(ports)))
    su = min(100.0, max(0.0, su))

    window_start = bins.start * recorder.bin_ns
    per_port: list[float] = []
    for p in ports:
        members = [
            fid
            for fid, port in recorder.flow_port.items()
            if port == p and fid in recorder.long_flows and recorder.flow_start_ns.get(fid, 0) <= window_start
        ]
        if members:
            per_port.append(fairness([flow_bytes.get(fid, 0) * 8.0 / window_s for fid in members]))
    fr = sum(per_port) / len(per_port) if per_port else 100.0

    ql_us = (wait_total / wait_count) / 1000.0 if wait_count else 0.0
    dr = dropped * 8.0 / window_s / 1e9
    share = drop_bins / len(bins)

    recovery: float | None = None
    long_bw: float | None = None
    if long_short:
        long_ids = sorted(recorder.long_flows)
        if long_ids:
            recovery = recovery_time(recorder, long_ids[0])
            long_bits = 8.0 * flow_bytes.get(long_ids[0], 0)
            long_bw = min(100.0, 100.0 * long_bits / (rate * window_s))
    failed = share > DROP_BIN_FAIL_SHARE or (recovery is not None and math.isinf(recovery))
    return MetricsReport(
        scenario=scenario,
        su_percent=su,
        fr=fr,
        ql_us=ql_us,
        dr_gbps=dr,
        window_ns=window_ns,
        drop_bin_share=share,
        failed=failed,
        recovery_time_s=recovery,
        long_bw_percent=long_bw,
    )


def recovery_time(
    recorder: MetricsRecorder,
    long_flow_id: int,
    *,
    rate_share: float = RECOVERY_RATE_SHARE,
    hold: int = RECOVERY_HOLD_SAMPLES,
    ewma: float = RECOVERY_EWMA,
) -> float:
    """Seconds from the first short-flow start until the long flow is back at line rate.

    Recovery closes at the end of the first run of `hold` consecutive smoothed
    rate samples at or above `rate_share` of line rate, taken after the last
    short flow finished. Returns inf when that never happens inside the run.
    """
    shorts = [fid for fid in recorder.flow_start_ns if fid not in recorder.long_flows]
    if not shorts:
        return 0.0
    first_start = min(recorder.flow_start_ns[fid] for fid in shorts)
    if any(fid not in recorder.flow_finish_ns for fid in shorts):
        return math.inf
    last_finish = max(recorder.flow_finish_ns[fid] for fid in shorts)
    threshold = rate_share * recorder.port_rate_bps
    smoothed: float | None = None
    run = 0
    for s in recorder.samples.get(long_flow_id, []):
        smoothed = float(s.rate_bps) if smoothed is None else ewma * s.rate_bps + (1.0 - ewma) * smoothed
        if s.t < last_finish:
            continue
        run = run + 1 if smoothed >= threshold else 0
        if run >= hold:
            return (s.t - first_start) / 1e9
    return math.inf
