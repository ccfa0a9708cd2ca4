from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ccgym.agent.policy import (
    Observation,
    PolicyParams,
    PolicyState,
    WEIGHT_NAMES,
    sigmoid,
)
from ccgym.config import POLICY_LSTM
from ccgym.core.errors import ContractError


QMAX = 127


@dataclass(frozen=True)
class QTensor:
    q: np.ndarray  # int8
    scale: float

    def dequantize(self) -> np.ndarray:
        return self.q.astype(np.float32) * np.float32(self.scale)


def tensor_scale(w: np.ndarray) -> float:
    """Symmetric per-tensor scale; an all-zero tensor gets scale 1."""
    m = float(np.max(np.abs(w))) if w.size else 0.0
    return m / QMAX if m > 0 else 1.0


def quantize_tensor(w: np.ndarray, scale: float | None = None) -> QTensor:
    s = tensor_scale(w) if scale is None else float(scale)
    q = np.clip(np.rint(np.asarray(w, dtype=np.float64) / s), -QMAX, QMAX).astype(np.int8)
    return QTensor(q, s)


@dataclass(frozen=True)
class QuantizedPolicy:
    """int8 weights with per-tensor scales; biases stay float32."""

    w1: QTensor
    w2: QTensor
    wx: QTensor
    wh: QTensor
    w3: QTensor
    b1: np.ndarray
    b2: np.ndarray
    bl: np.ndarray
    b3: np.ndarray

    @property
    def feature_count(self) -> int:
        return int(self.w1.q.shape[1])

    def weights(self) -> list[tuple[str, QTensor]]:
        return [(n, getattr(self, n)) for n in WEIGHT_NAMES]

    def dequantize(self) -> PolicyParams:
        return PolicyParams(
            w1=self.w1.dequantize(), b1=self.b1.copy(),
            w2=self.w2.dequantize(), b2=self.b2.copy(),
            wx=self.wx.dequantize(), wh=self.wh.dequantize(), bl=self.bl.copy(),
            w3=self.w3.dequantize(), b3=self.b3.copy(),
        )


def quantize(params: PolicyParams) -> QuantizedPolicy:
    if not params.all_finite():
        raise ContractError("quantize: parameters are not finite")
    return QuantizedPolicy(
        w1=quantize_tensor(params.w1),
        w2=quantize_tensor(params.w2),
        wx=quantize_tensor(params.wx),
        wh=quantize_tensor(params.wh),
        w3=quantize_tensor(params.w3),
        b1=params.b1.astype(np.float32),
        b2=params.b2.astype(np.float32),
        bl=params.bl.astype(np.float32),
        b3=params.b3.astype(np.float32),
    )


def qlinear(w: QTensor, x: np.ndarray) -> np.ndarray:
    """int8 x int8 -> int32 accumulate, then dequantize with both scales."""
    xq = quantize_tensor(x)
    acc = w.q.astype(np.int32) @ xq.q.astype(np.int32)
    return acc.astype(np.float32) * np.float32(w.scale * xq.scale)


def qforward(qp: QuantizedPolicy, state: PolicyState, obs: Observation | np.ndarray) -> tuple[float, PolicyState]:
    """Inference with int8 matmuls; activations are requantized per layer, gates run in float."""
    x = obs.features if isinstance(obs, Observation) else np.asarray(obs)
    if not np.all(np.isfinite(x)) or x.shape != (qp.feature_count,):
        raise ContractError("qforward: bad observation")
    n = POLICY_LSTM
    x = x.astype(np.float32)
    a1 = np.maximum(qlinear(qp.w1, x) + qp.b1, 0)
    a2 = np.maximum(qlinear(qp.w2, a1) + qp.b2, 0)
    h_prev = state.lstm_hidden.astype(np.float32)
    c_prev = state.lstm_cell.astype(np.float32)
    gates = qlinear(qp.wx, a2) + qlinear(qp.wh, h_prev) + qp.bl
    i = sigmoid(gates[:n])
    f = sigmoid(gates[n : 2 * n])
    g = np.tanh(gates[2 * n : 3 * n])
    o = sigmoid(gates[3 * n :])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    raw = float((qlinear(qp.w3, h) + qp.b3)[0])
    return raw, PolicyState(h, c)
