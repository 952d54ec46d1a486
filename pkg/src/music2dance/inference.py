"""Autoregressive translation of a feature stream into a choreography."""

from __future__ import annotations

import numpy as np

from .audio.features import FEATURE_DIM
from .models import POSE_DIM, SequenceModel
from .windows import build_window, stack_windows


def translate_many(model: SequenceModel, songs: list[np.ndarray]) -> list[np.ndarray]:
    """Translate several normalised feature streams in lock-step.

    At step ``t`` every song still running contributes the window ending at
    ``t`` built from its own previously generated poses; the pose at the last
    valid slot is appended. Dropout is off throughout.
    """
    songs = [np.asarray(f, dtype=np.float32) for f in songs]
    for f in songs:
        if f.ndim != 2 or f.shape[1] != FEATURE_DIM:
            raise ValueError(f"features must be (T, {FEATURE_DIM}), got {f.shape}")
    generated = [np.zeros((len(f), POSE_DIM), dtype=np.float32) for f in songs]
    K = model.window
    longest = max((len(f) for f in songs), default=0)
    for t in range(longest):
        active = [i for i, f in enumerate(songs) if t < len(f)]
        windows = [build_window(songs[i], generated[i], t, K) for i in active]
        out = model.predict(stack_windows(windows))
        for row, i in enumerate(active):
            generated[i][t] = out[row, windows[row].valid_len - 1]
    return generated


def translate(model: SequenceModel, features: np.ndarray) -> np.ndarray:
    """``(T, 438)`` normalised features -> ``(T, 4)`` joint angles."""
    return translate_many(model, [features])[0]
