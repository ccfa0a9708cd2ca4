from __future__ import annotations

from enum import Enum

from ccgym.bench.metrics import MetricsReport
from ccgym.config import PARETO_BAND
from ccgym.core.errors import ConfigError


class Domination(str, Enum):
    A_DOMINATES_B = "ADominatesB"
    B_DOMINATES_A = "BDominatesA"
    INCOMPARABLE = "Incomparable"


def _goodness(r: MetricsReport) -> tuple[float, float, float, float]:
    # Oriented so that larger is better on every axis.
    return (r.su_percent, r.fr, -r.ql_us, -r.dr_gbps)


def _dominates(a: tuple[float, ...], b: tuple[float, ...], band: float) -> bool:
    return all(x >= y - band for x, y in zip(a, b)) and any(x > y + band for x, y in zip(a, b))


def pareto_compare(a: MetricsReport, b: MetricsReport, *, band: float = PARETO_BAND) -> Domination:
    if a.scenario != b.scenario:
        raise ConfigError(f"pareto: cannot compare runs of {a.scenario!r} and {b.scenario!r}")
    ga, gb = _goodness(a), _goodness(b)
    if _dominates(ga, gb, band):
        return Domination.A_DOMINATES_B
    if _dominates(gb, ga, band):
        return Domination.B_DOMINATES_A
    return Domination.INCOMPARABLE


def non_dominated(reports: list[MetricsReport], *, band: float = PARETO_BAND) -> list[bool]:
    """Flags the reports that no other report (same scenario) dominates."""
    flags: list[bool] = []
    for i, r in enumerate(reports):
        beaten = any(
            j != i and o.scenario == r.scenario and pareto_compare(o, r, band=band) is Domination.A_DOMINATES_B
            for j, o in enumerate(reports)
        )
        flags.append(not beaten)
    return flags
