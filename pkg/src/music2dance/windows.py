"""Right-padded K-frame windows with a right-shifted pose stream."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import WindowBatch


@dataclass
class TrainingWindow:
    audio: np.ndarray          # (K, D)
    shifted_poses: np.ndarray  # (K, 4)
    target_poses: np.ndarray   # (K, 4)
    valid_len: int
    t: int                     # song index of the last real frame
    audio_positions: np.ndarray
    pose_positions: np.ndarray


def build_window(features: np.ndarray, poses: np.ndarray, t: int, window: int) -> TrainingWindow:
    """Window of frames ``max(0, t-K+1) .. t``, right-padded to ``window`` slots.

    ``poses`` needs entries up to ``t - 1`` for the decoder input (shifted right
    behind a zero start pose); targets are filled only when ``poses[t]`` exists.
    Positions are 1-based frame indices, with 0 for the start token and padding.
    """
    start = max(0, t - window + 1)
    valid = t - start + 1
    audio = np.zeros((window, features.shape[1]), dtype=np.float32)
    audio[:valid] = features[start:t + 1]
    shifted = np.zeros((window, 4), dtype=np.float32)
    shifted[1:valid] = poses[start:t]
    target = np.zeros((window, 4), dtype=np.float32)
    if len(poses) > t:
        target[:valid] = poses[start:t + 1]
    audio_pos = np.zeros(window, dtype=np.int64)
    audio_pos[:valid] = np.arange(start, t + 1) + 1
    pose_pos = np.zeros(window, dtype=np.int64)
    pose_pos[1:valid] = np.arange(start, t) + 1
    return TrainingWindow(audio, shifted, target, valid, t, audio_pos, pose_pos)


def stack_windows(windows: list[TrainingWindow]) -> WindowBatch:
    return WindowBatch(
        audio=np.stack([w.audio for w in windows]),
        shifted_poses=np.stack([w.shifted_poses for w in windows]),
        valid_len=np.array([w.valid_len for w in windows]),
        audio_positions=np.stack([w.audio_positions for w in windows]),
        pose_positions=np.stack([w.pose_positions for w in windows]),
        target_poses=np.stack([w.target_poses for w in windows]),
    )
