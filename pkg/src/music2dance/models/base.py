from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Linear, Module
from ..autodiff import ops as T

POSE_DIM = 4


@dataclass
class WindowBatch:
    """A batch of right-padded windows, all arrays with leading batch axis.

    ``shifted_poses`` starts with a zero start pose; ``audio_positions`` and
    ``pose_positions`` are absolute song indices (0 is reserved for the start
    token and for padding).
    """

    audio: np.ndarray           # (B, K, 438)
    shifted_poses: np.ndarray   # (B, K, 4)
    valid_len: np.ndarray       # (B,)
    audio_positions: np.ndarray  # (B, K)
    pose_positions: np.ndarray   # (B, K)
    target_poses: np.ndarray | None = None  # (B, K, 4)

    @property
    def size(self) -> int:
        return self.audio.shape[0]

    @property
    def window(self) -> int:
        return self.audio.shape[1]


class PoseHead(Module):
    """Project embeddings to joint angles squashed into [-pi, pi]."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.proj = Linear(dim, POSE_DIM, rng)

    def forward(self, x):
        return T.tanh(self.proj(x)) * np.pi


class SequenceModel(Module):
    variant: str = ""

    @property
    def window(self) -> int:
        return self.config.window

    def architecture(self) -> dict:
        raise NotImplementedError

    def forward(self, batch: WindowBatch):
        raise NotImplementedError

    def predict(self, batch: WindowBatch) -> np.ndarray:
        was_training = self.training
        self.eval()
        try:
            with T.no_grad():
                return self.forward(batch).data
        finally:
            self.train(was_training)
