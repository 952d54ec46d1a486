from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOW, HIGH = 0.1, 0.9
_MAGIC = b"MDLN"


@dataclass
class Normalizer:
    """Per-dimension min/max statistics mapping features into [0.1, 0.9]."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=np.float64)
        self.maxs = np.asarray(self.maxs, dtype=np.float64)
        if self.mins.shape != self.maxs.shape or self.mins.ndim != 1:
            raise ValueError("mins and maxs must be 1-D arrays of equal length")
        if np.any(self.mins > self.maxs):
            raise ValueError("normalizer has min > max in some dimension")

    @property
    def dim(self) -> int:
        return len(self.mins)

    def merge(self, other: "Normalizer") -> "Normalizer":
        return Normalizer(np.minimum(self.mins, other.mins), np.maximum(self.maxs, other.maxs))

    def __call__(self, frames: np.ndarray) -> np.ndarray:
        return normalize(frames, self)

    def to_bytes(self) -> bytes:
        return (_MAGIC + struct.pack("<I", self.dim)
                + self.mins.astype("<f8").tobytes() + self.maxs.astype("<f8").tobytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "Normalizer":
        if data[:4] != _MAGIC:
            raise ValueError("not a normalizer blob (bad magic)")
        (dim,) = struct.unpack_from("<I", data, 4)
        need = 8 + 16 * dim
        if len(data) < need:
            raise ValueError(f"normalizer blob truncated: {len(data)} < {need} bytes")
        mins = np.frombuffer(data, dtype="<f8", count=dim, offset=8)
        maxs = np.frombuffer(data, dtype="<f8", count=dim, offset=8 + 8 * dim)
        return cls(mins.copy(), maxs.copy())

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Normalizer":
        return cls.from_bytes(Path(path).read_bytes())


def fit_normalizer(frames) -> Normalizer:
    """Fit min/max over training frames.

    ``frames`` is a ``(T, D)`` array or an iterable of such arrays (one per song).
    """
    if isinstance(frames, np.ndarray):
        frames = [frames]
    mins = maxs = None
    for block in frames:
        block = np.asarray(block, dtype=np.float64)
        if block.size == 0:
            continue
        block = block.reshape(-1, block.shape[-1])
        lo, hi = block.min(axis=0), block.max(axis=0)
        mins = lo if mins is None else np.minimum(mins, lo)
        maxs = hi if maxs is None else np.maximum(maxs, hi)
    if mins is None:
        raise ValueError("cannot fit a normalizer on zero frames")
    return Normalizer(mins, maxs)


def normalize(frames: np.ndarray, n: Normalizer) -> np.ndarray:
    x = np.asarray(frames, dtype=np.float64)
    if x.shape[-1] != n.dim:
        raise ValueError(f"frame dimension {x.shape[-1]} != normalizer dimension {n.dim}")
    span = n.maxs - n.mins
    flat = span == 0
    scaled = np.divide(x - n.mins, span, out=np.zeros_like(x), where=~flat)
    out = np.clip(LOW + (HIGH - LOW) * scaled, LOW, HIGH)
    out[..., flat] = 0.5
    return out
