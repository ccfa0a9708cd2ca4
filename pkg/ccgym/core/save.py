from __future__ import annotations

import csv
import io
import json
import os
import struct
from dataclasses import dataclass
from typing import Any, Iterable, Sequence, TextIO

import numpy as np

from ccgym.agent.policy import TENSOR_NAMES, WEIGHT_NAMES, PolicyParams, tensor_shapes
from ccgym.agent.quantize import QTensor, QuantizedPolicy
from ccgym.core.errors import CheckpointError, ConfigError


FLOAT_MAGIC = b"CCGP"
QUANT_MAGIC = b"CCGQ"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sII")
BIAS_NAMES: tuple[str, ...] = ("b1", "b2", "bl", "b3")


@dataclass
class CheckpointInfo:
    path: str
    quantized: bool
    version: int
    feature_count: int
    tensors: list[tuple[str, tuple[int, ...], float, float | None]]  # name, shape, L2 norm, scale


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _write_atomic(path: str, data: bytes) -> None:
    _ensure_parent(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


# --- JSON documents ---


def load_document(path: str) -> dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object at top level")
    return data


def save_document(path: str, data: dict[str, Any]) -> None:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)
        f.write("\n")


def sidecar_path(ckpt_path: str) -> str:
    return ckpt_path + ".json"


# --- float checkpoints ---


def checkpoint_bytes(params: PolicyParams) -> bytes:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(FLOAT_MAGIC, CHECKPOINT_VERSION, params.feature_count))
    for _name, arr in params.items():
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(path: str, params: PolicyParams, meta: dict[str, Any] | None = None) -> None:
    params.check_shapes()
    _write_atomic(path, checkpoint_bytes(params))
    if meta is not None:
        save_document(sidecar_path(path), meta)


def _read_header(data: bytes, path: str) -> tuple[bytes, int, int]:
    if len(data) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, feature_count = _HEADER.unpack_from(data, 0)
    if magic not in (FLOAT_MAGIC, QUANT_MAGIC):
        raise CheckpointError(f"{path}: not a policy checkpoint (magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if feature_count < 1:
        raise CheckpointError(f"{path}: bad feature count {feature_count}")
    return magic, version, feature_count


def _read(path: str) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except FileNotFoundError as e:
        raise CheckpointError(f"checkpoint not found: {path}") from e


class _Cursor:
    def __init__(self, data: bytes, offset: int, path: str) -> None:
        self.data = data
        self.offset = offset
        self.path = path

    def take(self, dtype: str, shape: tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape))
        size = np.dtype(dtype).itemsize * count
        if self.offset + size > len(self.data):
            raise CheckpointError(f"{self.path}: truncated tensor data")
        arr = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.offset).reshape(shape)
        self.offset += size
        return arr.copy()

    def done(self) -> None:
        if self.offset != len(self.data):
            raise CheckpointError(f"{self.path}: {len(self.data) - self.offset} trailing bytes")


def load_checkpoint(path: str, dtype: Any = np.float32) -> PolicyParams:
    data = _read(path)
    magic, _v, feature_count = _read_header(data, path)
    if magic != FLOAT_MAGIC:
        raise CheckpointError(f"{path}: quantized checkpoint, use load_quantized")
    shapes = tensor_shapes(feature_count)
    cur = _Cursor(data, _HEADER.size, path)
    tensors = {name: cur.take("<f4", shapes[name]).astype(dtype) for name in TENSOR_NAMES}
    cur.done()
    params = PolicyParams(**tensors)
    if not params.all_finite():
        raise CheckpointError(f"{path}: checkpoint holds non-finite values")
    return params


# --- quantized checkpoints ---


def save_quantized(path: str, qp: QuantizedPolicy, meta: dict[str, Any] | None = None) -> None:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(QUANT_MAGIC, CHECKPOINT_VERSION, qp.feature_count))
    weights = qp.weights()
    buf.write(struct.pack(f"<I{len(weights)}f", len(weights), *[w.scale for _n, w in weights]))
    for _name, w in weights:
        buf.write(np.ascontiguousarray(w.q, dtype=np.int8).tobytes())
    for name in BIAS_NAMES:
        buf.write(np.ascontiguousarray(getattr(qp, name), dtype="<f4").tobytes())
    _write_atomic(path, buf.getvalue())
    if meta is not None:
        save_document(sidecar_path(path), meta)


def load_quantized(path: str) -> QuantizedPolicy:
    data = _read(path)
    magic, _v, feature_count = _read_header(data, path)
    if magic != QUANT_MAGIC:
        raise CheckpointError(f"{path}: float checkpoint, use load_checkpoint")
    off = _HEADER.size
    (n,) = struct.unpack_from("<I", data, off)
    if n != len(WEIGHT_NAMES):
        raise CheckpointError(f"{path}: scale table has {n} entries, expected {len(WEIGHT_NAMES)}")
    scales = struct.unpack_from(f"<{n}f", data, off + 4)
    shapes = tensor_shapes(feature_count)
    cur = _Cursor(data, off + 4 + 4 * n, path)
    q = {name: QTensor(cur.take("i1", shapes[name]), float(s)) for name, s in zip(WEIGHT_NAMES, scales)}
    b = {name: cur.take("<f4", shapes[name]).astype(np.float32) for name in BIAS_NAMES}
    cur.done()
    return QuantizedPolicy(**q, **b)


def is_quantized(path: str) -> bool:
    data = _read(path)
    magic, _v, _f = _read_header(data[: _HEADER.size], path)
    return magic == QUANT_MAGIC


def inspect_checkpoint(path: str) -> CheckpointInfo:
    data = _read(path)
    magic, version, feature_count = _read_header(data, path)
    rows: list[tuple[str, tuple[int, ...], float, float | None]] = []
    if magic == FLOAT_MAGIC:
        params = load_checkpoint(path)
        for name, arr in params.items():
            rows.append((name, tuple(arr.shape), float(np.linalg.norm(arr)), None))
    else:
        qp = load_quantized(path)
        for name, w in qp.weights():
            rows.append((name, tuple(w.q.shape), float(np.linalg.norm(w.dequantize())), w.scale))
        for name in BIAS_NAMES:
            arr = getattr(qp, name)
            rows.append((name, tuple(arr.shape), float(np.linalg.norm(arr)), None))
    return CheckpointInfo(path, magic == QUANT_MAGIC, version, feature_count, rows)


# --- CSV ---


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(csv_text(header, rows))


def open_text(path: str) -> TextIO:
    """Text sink for streamed output such as event traces."""
    _ensure_parent(path)
    return open(path, "w", encoding="utf-8", newline="\n")
