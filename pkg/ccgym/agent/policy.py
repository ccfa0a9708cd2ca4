"""Recurrent rate policy: FC(in->32) ReLU, FC(32->16) ReLU, LSTM(16), FC(16->1).

Everything is plain numpy with a hand-written backward pass over a truncated
window of recorded steps.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Iterator

import numpy as np

from ccgym.config import (
    ACTION_MAX,
    ACTION_MIN,
    BPTT_WINDOW,
    LEARNING_RATE,
    POLICY_HIDDEN_1,
    POLICY_HIDDEN_2,
    OUTPUT_INIT_RANGE,
    POLICY_INIT_RANGE,
    POLICY_LSTM,
)
from ccgym.core.errors import ConfigError, ContractError


FEATURES: tuple[str, ...] = ("rate_norm", "rtt_inflation", "cnp", "nack")
TENSOR_NAMES: tuple[str, ...] = ("w1", "b1", "w2", "b2", "wx", "wh", "bl", "w3", "b3")
WEIGHT_NAMES: tuple[str, ...] = ("w1", "w2", "wx", "wh", "w3")

_ACTION_MID = (ACTION_MAX + ACTION_MIN) / 2.0
_ACTION_HALF = (ACTION_MAX - ACTION_MIN) / 2.0


def tensor_shapes(feature_count: int) -> dict[str, tuple[int, ...]]:
    h1, h2, n = POLICY_HIDDEN_1, POLICY_HIDDEN_2, POLICY_LSTM
    return {
        "w1": (h1, feature_count),
        "b1": (h1,),
        "w2": (h2, h1),
        "b2": (h2,),
        # LSTM gates stacked as [input, forget, candidate, output]
        "wx": (4 * n, h2),
        "wh": (4 * n, n),
        "bl": (4 * n,),
        "w3": (1, n),
        "b3": (1,),
    }


@dataclass
class PolicyConfig:
    features: tuple[str, ...] = FEATURES
    bptt_window: int = BPTT_WINDOW
    init_range: float | None = POLICY_INIT_RANGE
    lr: float = LEARNING_RATE
    optimizer: str = "sgd"  # sgd | momentum | adam
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        unknown = [f for f in self.features if f not in FEATURES]
        if unknown or not self.features:
            raise ConfigError(f"policy: unknown or empty features {unknown or list(self.features)}")
        if self.bptt_window < 1:
            raise ConfigError("policy: bptt_window must be >= 1")
        if self.init_range is not None and not self.init_range > 0:
            raise ConfigError(f"policy: init_range must be positive or null, got {self.init_range}")
        if self.lr < 0:
            raise ConfigError("policy: lr must be >= 0")
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise ConfigError(f"policy: unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["features"] = list(self.features)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "PolicyConfig":
        if not data:
            return cls()
        names = {f.name for f in fields(cls)}
        raw = {k: v for k, v in data.items() if k in names}
        if "features" in raw:
            raw["features"] = tuple(str(f) for f in raw["features"])
        cfg = cls(**raw)
        cfg.validate()
        return cfg


@dataclass
class PolicyParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    wx: np.ndarray
    wh: np.ndarray
    bl: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @property
    def feature_count(self) -> int:
        return int(self.w1.shape[1])

    @property
    def dtype(self) -> np.dtype:
        return self.w1.dtype

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in TENSOR_NAMES:
            yield name, getattr(self, name)

    def map(self, fn: Any) -> "PolicyParams":
        return PolicyParams(**{name: fn(arr) for name, arr in self.items()})

    def copy(self) -> "PolicyParams":
        return self.map(np.copy)

    def zeros_like(self) -> "PolicyParams":
        return self.map(np.zeros_like)

    def all_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(a))) for _n, a in self.items())

    def check_shapes(self) -> None:
        expected = tensor_shapes(self.feature_count)
        for name, arr in self.items():
            if arr.shape != expected[name]:
                raise ContractError(f"policy tensor {name}: shape {arr.shape}, expected {expected[name]}")

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _n, a in self.items()])


def zero_params(feature_count: int = len(FEATURES), dtype: Any = np.float32) -> PolicyParams:
    return PolicyParams(**{n: np.zeros(s, dtype=dtype) for n, s in tensor_shapes(feature_count).items()})


def _fan_in(feature_count: int) -> dict[str, int]:
    h1, n = POLICY_HIDDEN_1, POLICY_LSTM
    return {"w1": feature_count, "b1": feature_count, "w2": h1, "b2": h1, "wx": n, "wh": n, "bl": n}


def init_params(
    feature_count: int = len(FEATURES),
    rng: np.random.Generator | None = None,
    *,
    init_range: float | None = POLICY_INIT_RANGE,
    dtype: Any = np.float32,
) -> PolicyParams:
    """Random initial parameters.

    With ``init_range`` every tensor is drawn from U(-init_range, init_range).
    Without it hidden tensors use U(-1/sqrt(fan_in), 1/sqrt(fan_in)) and the
    output layer U(-OUTPUT_INIT_RANGE, OUTPUT_INIT_RANGE), so the first actions
    sit near 1 while the hidden features are not vanishingly small.
    """
    g = rng if rng is not None else np.random.default_rng(0)
    fan_in = _fan_in(feature_count)
    out: dict[str, np.ndarray] = {}
    for n, s in tensor_shapes(feature_count).items():
        if init_range is not None:
            bound = init_range
        elif n in fan_in:
            bound = 1.0 / math.sqrt(fan_in[n])
        else:
            bound = OUTPUT_INIT_RANGE
        out[n] = g.uniform(-bound, bound, size=s).astype(dtype)
    return PolicyParams(**out)


# --- observations ---


@dataclass(frozen=True)
class Observation:
    features: np.ndarray

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.features)):
            raise ContractError(f"observation has non-finite features: {self.features.tolist()}")


def squash_count(n: int) -> float:
    return float(n) / (1.0 + float(n))


def make_observation(
    rate_norm: float,
    rtt_inflation: float,
    cnp_count: int = 0,
    nack_count: int = 0,
    features: tuple[str, ...] = FEATURES,
) -> Observation:
    if rtt_inflation < 0:
        raise ContractError(f"rtt_inflation must be >= 0, got {rtt_inflation}")
    values = {
        "rate_norm": float(rate_norm),
        "rtt_inflation": float(rtt_inflation),
        "cnp": squash_count(cnp_count),
        "nack": squash_count(nack_count),
    }
    return Observation(np.array([values[f] for f in features], dtype=np.float64))


# --- forward / backward ---


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


@dataclass(frozen=True)
class StepCache:
    x: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray
    raw: float


@dataclass(frozen=True)
class PolicyState:
    """Per-flow recurrent state; `history` holds the last steps for truncated BPTT."""

    lstm_hidden: np.ndarray
    lstm_cell: np.ndarray
    history: tuple[StepCache, ...] = ()


def initial_state(dtype: Any = np.float32) -> PolicyState:
    return PolicyState(np.zeros(POLICY_LSTM, dtype=dtype), np.zeros(POLICY_LSTM, dtype=dtype))


@dataclass(frozen=True)
class Tape:
    """Recorded steps ending at the step whose output is differentiated."""

    steps: tuple[StepCache, ...]
    feature_count: int


def forward(
    params: PolicyParams,
    state: PolicyState,
    obs: Observation | np.ndarray,
    *,
    window: int = BPTT_WINDOW,
) -> tuple[float, PolicyState, Tape]:
    """One decision step. Returns the pre-squash output, the next state and the tape.

    With window=0 nothing is recorded (inference only).
    """
    x = obs.features if isinstance(obs, Observation) else np.asarray(obs)
    if not np.all(np.isfinite(x)):
        raise ContractError("forward: non-finite observation")
    if x.shape != (params.feature_count,):
        raise ContractError(f"forward: observation has {x.shape} features, policy expects {params.feature_count}")
    x = x.astype(params.dtype)
    n = POLICY_LSTM
    z1 = params.w1 @ x + params.b1
    a1 = np.maximum(z1, 0)
    z2 = params.w2 @ a1 + params.b2
    a2 = np.maximum(z2, 0)
    h_prev, c_prev = state.lstm_hidden, state.lstm_cell
    gates = params.wx @ a2 + params.wh @ h_prev + params.bl
    i = sigmoid(gates[:n])
    f = sigmoid(gates[n : 2 * n])
    g = np.tanh(gates[2 * n : 3 * n])
    o = sigmoid(gates[3 * n :])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    raw = float((params.w3 @ h + params.b3)[0])
    if window <= 0:
        return raw, PolicyState(h, c), Tape((), params.feature_count)
    step = StepCache(x, z1, a1, z2, a2, h_prev, c_prev, i, f, g, o, c, tanh_c, h, raw)
    history = (state.history + (step,))[-window:]
    return raw, PolicyState(h, c, history), Tape(history, params.feature_count)


def action_map(raw: float) -> float:
    """Multiplicative rate action in (0.8, 1.2); 1.0 at raw = 0."""
    return _ACTION_MID + _ACTION_HALF * math.tanh(raw)


def action_grad(raw: float) -> float:
    t = math.tanh(raw)
    return _ACTION_HALF * (1.0 - t * t)


def backward(params: PolicyParams, tape: Tape, upstream: float) -> PolicyParams:
    """d(upstream * action_map(raw_last)) / d(params), through every step on the tape."""
    if not tape.steps:
        raise ContractError("backward: empty tape")
    if tape.feature_count != params.feature_count or tape.steps[-1].x.shape != (params.feature_count,):
        raise ContractError("backward: tape was recorded for a different policy")
    grads = params.zeros_like()
    if upstream == 0.0:
        return grads
    n = POLICY_LSTM
    last = tape.steps[-1]
    d_raw = float(upstream) * action_grad(last.raw)
    grads.w3 += d_raw * last.h[None, :]
    grads.b3 += d_raw
    dh = d_raw * params.w3[0]
    dc = np.zeros_like(last.c)
    dgates = np.empty(4 * n, dtype=grads.bl.dtype)
    for s in reversed(tape.steps):
        dc = dc + dh * s.o * (1.0 - s.tanh_c * s.tanh_c)
        dgates[:n] = dc * s.g * s.i * (1.0 - s.i)
        dgates[n : 2 * n] = dc * s.c_prev * s.f * (1.0 - s.f)
        dgates[2 * n : 3 * n] = dc * s.i * (1.0 - s.g * s.g)
        dgates[3 * n :] = dh * s.tanh_c * s.o * (1.0 - s.o)
        grads.wx += np.outer(dgates, s.a2)
        grads.wh += np.outer(dgates, s.h_prev)
        grads.bl += dgates
        dz2 = (params.wx.T @ dgates) * (s.z2 > 0)
        grads.w2 += np.outer(dz2, s.a1)
        grads.b2 += dz2
        dz1 = (params.w2.T @ dz2) * (s.z1 > 0)
        grads.w1 += np.outer(dz1, s.x)
        grads.b1 += dz1
        dh = params.wh.T @ dgates
        dc = dc * s.f
    return grads


# --- updates ---


def apply_update(params: PolicyParams, grads: PolicyParams, lr: float) -> PolicyParams:
    """Gradient ascent step. Non-finite gradients are rejected and params stay as they were."""
    if lr < 0:
        raise ContractError(f"apply_update: lr must be >= 0, got {lr}")
    if not grads.all_finite():
        raise ContractError("apply_update: non-finite gradients, update skipped")
    out = PolicyParams(**{n: (a + lr * getattr(grads, n)).astype(a.dtype) for n, a in params.items()})
    if not out.all_finite():
        raise ContractError("apply_update: update produced non-finite parameters, skipped")
    return out


def scale_grads(grads: PolicyParams, k: float) -> PolicyParams:
    return grads.map(lambda a: a * k)


def add_grads(a: PolicyParams, b: PolicyParams) -> PolicyParams:
    return PolicyParams(**{n: x + getattr(b, n) for n, x in a.items()})


@dataclass
class Optimizer:
    """SGD ascent by default; momentum and Adam keep their own state here."""

    kind: str = "sgd"
    lr: float = LEARNING_RATE
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 0
    _m: PolicyParams | None = field(default=None, repr=False)
    _v: PolicyParams | None = field(default=None, repr=False)

    @classmethod
    def from_config(cls, cfg: PolicyConfig) -> "Optimizer":
        return cls(cfg.optimizer, cfg.lr, cfg.momentum, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    def step(self, params: PolicyParams, grads: PolicyParams) -> PolicyParams:
        if not grads.all_finite():
            raise ContractError("optimizer: non-finite gradients, update skipped")
        if self.kind == "sgd":
            out = apply_update(params, grads, self.lr)
            self.steps += 1
            return out
        if self.kind == "momentum":
            m = grads.copy() if self._m is None else add_grads(scale_grads(self._m, self.momentum), grads)
            out = apply_update(params, m, self.lr)
            self._m = m
            self.steps += 1
            return out
        # adam
        t = self.steps + 1
        m0 = self._m if self._m is not None else grads.zeros_like()
        v0 = self._v if self._v is not None else grads.zeros_like()
        m = PolicyParams(**{n: self.beta1 * a + (1 - self.beta1) * getattr(grads, n) for n, a in m0.items()})
        v = PolicyParams(**{n: self.beta2 * a + (1 - self.beta2) * getattr(grads, n) ** 2 for n, a in v0.items()})
        c1 = 1 - self.beta1**t
        c2 = 1 - self.beta2**t
        direction = PolicyParams(
            **{n: (a / c1) / (np.sqrt(getattr(v, n) / c2) + self.eps) for n, a in m.items()}
        )
        out = apply_update(params, direction, self.lr)
        self._m, self._v = m, v
        self.steps = t
        return out
