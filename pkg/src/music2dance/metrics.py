"""Average joint error, Fréchet distance between Gaussian fits, and split evaluation."""

from __future__ import annotations

import math

import numpy as np

from .inference import translate


def aje(generated, ground_truth) -> float:
    """Mean absolute joint-angle difference (radians), no angular wrap-around."""
    g = np.asarray(generated, dtype=np.float64)
    t = np.asarray(ground_truth, dtype=np.float64)
    if g.shape != t.shape:
        raise ValueError(f"sequence shapes differ: {g.shape} vs {t.shape}")
    if g.size == 0:
        raise ValueError("cannot score empty sequences")
    # Shifted, compensated mean: exact when every difference is equal
    diffs = np.abs(g - t).ravel()
    ref = float(diffs[0])
    return ref + math.fsum(diffs - ref) / diffs.size


def sqrtm_psd(sigma: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, negative eigenvalues clamped to 0."""
    sym = 0.5 * (sigma + sigma.T)
    w, v = np.linalg.eigh(sym)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def gaussian_summary(samples) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("samples must be an (n, d) array")
    n, d = x.shape
    if n < d + 1:
        raise ValueError(f"need at least d+1 = {d + 1} samples, got {n}")
    return x.mean(axis=0), np.cov(x, rowvar=False, ddof=1).reshape(d, d)


def frechet_from_moments(mu1, sigma1, mu2, sigma2) -> float:
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}).

    The cross term uses Tr((S1^{1/2} S2 S1^{1/2})^{1/2}), which keeps the
    matrix symmetric so a plain eigendecomposition applies.
    """
    mu1, mu2 = np.asarray(mu1, dtype=np.float64), np.asarray(mu2, dtype=np.float64)
    s1, s2 = np.asarray(sigma1, dtype=np.float64), np.asarray(sigma2, dtype=np.float64)
    root1 = sqrtm_psd(s1)
    middle = root1 @ s2 @ root1
    eig = np.linalg.eigvalsh(0.5 * (middle + middle.T))
    cross = np.sum(np.sqrt(np.clip(eig, 0.0, None)))
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * cross)
    return max(value, 0.0)


def frechet_distance(generated, ground_truth) -> float:
    mu1, s1 = gaussian_summary(generated)
    mu2, s2 = gaussian_summary(ground_truth)
    return frechet_from_moments(mu1, s1, mu2, s2)


def pose_motion_vectors(poses) -> np.ndarray:
    """Per-frame ``[angles, angle velocity]`` (8-dim); the first frame has zero velocity."""
    p = np.asarray(poses, dtype=np.float64)
    velocity = np.diff(p, axis=0, prepend=p[:1])
    return np.concatenate([p, velocity], axis=1)


def evaluate_split(model, songs, generated: dict | None = None) -> dict:
    """Translate every song (already normalised) and score it against its poses.

    Returns ``{song_id: {"aje", "frames"}, ..., "aggregate": {"aje_mean", "aje_std", "fid"}}``.
    Songs are scored in id order so the report does not depend on input order.
    FID pools the angle+velocity vectors of every song; it is NaN when there
    are too few frames to fit a covariance.
    """
    songs = sorted(songs, key=lambda s: s.song_id)
    if not songs:
        raise ValueError("no songs to evaluate")
    if generated is None:
        generated = {s.song_id: translate(model, s.features) for s in songs}
    report, ajes, gen_vecs, gt_vecs = {}, [], [], []
    for s in songs:
        poses = generated[s.song_id]
        score = aje(poses, s.poses)
        report[s.song_id] = {"aje": score, "frames": len(s)}
        ajes.append(score)
        gen_vecs.append(pose_motion_vectors(poses))
        gt_vecs.append(pose_motion_vectors(s.poses))
    try:
        fid = frechet_distance(np.concatenate(gen_vecs), np.concatenate(gt_vecs))
    except ValueError:
        fid = float("nan")
    report["aggregate"] = {"aje_mean": float(np.mean(ajes)), "aje_std": float(np.std(ajes)),
                           "fid": fid}
    return report
