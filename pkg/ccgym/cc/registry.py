from __future__ import annotations

from typing import Any

from ccgym.cc.base import FIXED, CcAlgorithm, ControllerFactory, FlowContext, RuleController
from ccgym.cc.dcqcn import DCQCN
from ccgym.cc.hpcc import HPCC
from ccgym.cc.swift import SWIFT
from ccgym.core.errors import ConfigError


RULE_ALGORITHMS: dict[str, CcAlgorithm] = {a.name: a for a in (DCQCN, HPCC, SWIFT, FIXED)}


def get_algorithm(name: str) -> CcAlgorithm:
    algo = RULE_ALGORITHMS.get(str(name).lower())
    if algo is None:
        known = ", ".join(sorted(RULE_ALGORITHMS))
        raise ConfigError(f"unknown algorithm {name!r} (rule-based: {known})")
    return algo


def rule_controller_factory(name: str, params: dict[str, Any] | None = None) -> ControllerFactory:
    algo = get_algorithm(name)
    p = algo.params_from_dict(params)

    def make(ctx: FlowContext) -> RuleController:
        return RuleController(algo, p, ctx)

    return make
