"""Binary feature-stream files ("MDLF")."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .features import FEATURE_DIM, FRAME_RATE

MAGIC = b"MDLF"
VERSION = 1
_HEADER = struct.Struct("<4sIIId")


def features_to_bytes(values: np.ndarray, frame_rate: float = FRAME_RATE) -> bytes:
    values = np.asarray(values)
    if values.ndim != 2 or values.shape[1] != FEATURE_DIM:
        raise ValueError(f"expected (T, {FEATURE_DIM}) features, got {values.shape}")
    header = _HEADER.pack(MAGIC, VERSION, values.shape[0], values.shape[1], frame_rate)
    return header + np.ascontiguousarray(values, dtype="<f4").tobytes()


def features_from_bytes(data: bytes) -> tuple[np.ndarray, float]:
    if len(data) < _HEADER.size:
        raise ValueError("feature file shorter than its header")
    magic, version, count, dim, rate = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ValueError(f"unsupported feature file version {version}")
    expected = _HEADER.size + 4 * count * dim
    if len(data) != expected:
        raise ValueError(f"feature file is {len(data)} bytes, header implies {expected}")
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(count, dim)
    return body.astype(np.float32), rate


def write_features(path, values: np.ndarray, frame_rate: float = FRAME_RATE) -> None:
    Path(path).write_bytes(features_to_bytes(values, frame_rate))


def read_features(path) -> np.ndarray:
    values, _ = features_from_bytes(Path(path).read_bytes())
    return values
