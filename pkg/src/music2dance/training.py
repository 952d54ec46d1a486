"""Window sampling, the masked L2 objective and the training loop."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .audio.normalize import Normalizer, fit_normalizer
from .autodiff import Adam, backward
from .autodiff import ops as T
from .dataset import PairSequence
from .metrics import evaluate_split
from .models import ModelCheckpoint, SequenceModel, WindowBatch, load_checkpoint, save_checkpoint
from .models.checkpoint import checkpoint_from_bytes, checkpoint_to_bytes
from .windows import TrainingWindow, build_window, stack_windows  # noqa: F401

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    updates: int = 250_000
    batch: int = 16
    lr: float = 1e-4
    validate_every: int = 1000
    window: int = 20
    seed: int = 0
    pose_noise: float = 0.0  # std (radians) of noise added to the decoder's pose inputs

    def __post_init__(self):
        if self.pose_noise < 0:
            raise ValueError(f"pose_noise must be >= 0, got {self.pose_noise}")
        for f in fields(self):
            if f.name not in ("seed", "pose_noise") and not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive, got {getattr(self, f.name)}")

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in names})


class TrainingDiverged(RuntimeError):
    pass


def sample_window(corpus: list[PairSequence], window: int, rng: np.random.Generator):
    """Uniform song, then uniform end index ``t``. Returns ``(song, TrainingWindow)``."""
    if not corpus:
        raise ValueError("cannot sample from an empty corpus")
    song = corpus[int(rng.integers(len(corpus)))]
    t = int(rng.integers(len(song)))
    return song, build_window(song.features, song.poses, t, window)


def sample_batch(corpus, window: int, batch: int, rng) -> tuple[WindowBatch, list[str]]:
    drawn = [sample_window(corpus, window, rng) for _ in range(batch)]
    return stack_windows([w for _, w in drawn]), [s.song_id for s, _ in drawn]


def corrupt_poses(batch: WindowBatch, std: float, rng: np.random.Generator) -> None:
    """Add Gaussian noise to the real previous-pose inputs (not the start token or padding).

    Teacher forcing otherwise lets the model lean on copying the previous
    pose, which drifts once it has to feed on its own outputs.
    """
    K = batch.window
    slots = np.arange(K)
    real = (slots >= 1) & (slots < batch.valid_len[:, None])
    noise = rng.normal(0.0, std, size=batch.shifted_poses.shape) * real[..., None]
    batch.shifted_poses = (batch.shifted_poses + noise).astype(np.float32)


def l2_loss(predicted, target: np.ndarray, valid_len) -> T.Tensor:
    """Mean squared joint-angle error over the real (unpadded) slots only."""
    valid_len = np.atleast_1d(np.asarray(valid_len))
    if np.any(valid_len < 1):
        raise ValueError("valid_len must be >= 1")
    predicted = T.as_tensor(predicted)
    window = predicted.shape[-2]
    mask = (np.arange(window) < valid_len[:, None]).astype(np.float64)[..., None]
    target = np.where(mask > 0, target, 0.0)
    diff = T.astype(predicted, np.float64) - target
    count = mask.sum() * predicted.shape[-1]
    return T.tsum(T.square(diff) * mask) * (1.0 / count)


def normalized_corpus(corpus: list[PairSequence], normalizer: Normalizer) -> list[PairSequence]:
    return [PairSequence(s.song_id, s.genre, normalizer(s.features).astype(np.float32),
                         np.asarray(s.poses, dtype=np.float32)) for s in corpus]


@dataclass
class TrainResult:
    history: list[dict]
    latest: ModelCheckpoint
    best: ModelCheckpoint | None
    best_aje: float


def _save_trainer_state(path: Path, opt: Adam, rng: np.random.Generator, model, step: int,
                        best_aje: float) -> None:
    state = opt.state_dict()
    dropout_rngs = [m.rng.bit_generator.state for m in model.modules() if hasattr(m, "rng")]
    meta = {"rng": rng.bit_generator.state, "dropout_rngs": dropout_rngs,
            "step": step, "best_aje": best_aje}
    np.savez(path, meta=np.array(json.dumps(meta)), **state)


def _load_trainer_state(path: Path, opt: Adam, rng: np.random.Generator, model):
    with np.load(path) as data:
        meta = json.loads(str(data["meta"]))
        opt.load_state_dict({k: data[k] for k in data.files if k != "meta"})
    rng.bit_generator.state = meta["rng"]
    for m, st in zip([m for m in model.modules() if hasattr(m, "rng")], meta["dropout_rngs"]):
        m.rng.bit_generator.state = st
    return meta["step"], meta["best_aje"]


def train(model: SequenceModel, train_songs: list[PairSequence], val_songs: list[PairSequence],
          cfg: TrainConfig, normalizer: Normalizer | None = None, out_dir=None,
          resume: bool = False, meta: dict | None = None) -> TrainResult:
    """Adam on the masked L2 loss with periodic autoregressive validation.

    Songs are given un-normalised; ``normalizer`` defaults to one fitted on
    ``train_songs``. With ``out_dir`` the latest and best (lowest validation
    AJE) checkpoints plus ``metrics.csv`` are written there.
    """
    if cfg.window != model.window:
        raise ValueError(f"config window {cfg.window} != model window {model.window}")
    overlap = {s.song_id for s in train_songs} & {s.song_id for s in val_songs}
    if overlap:
        raise ValueError(f"validation songs also used for training: {sorted(overlap)}")
    if normalizer is None:
        normalizer = fit_normalizer([s.features for s in train_songs])
    train_data = normalized_corpus(train_songs, normalizer)
    val_data = normalized_corpus(val_songs, normalizer)
    meta = dict(meta or {})

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr)
    out = Path(out_dir) if out_dir is not None else None
    start_step, best_aje = 0, float("inf")
    history: list[dict] = []
    best = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if resume and (out / "latest.mdlc").exists():
            loaded = load_checkpoint(out / "latest.mdlc")
            model.load_state_dict(loaded.model.state_dict())
            start_step, best_aje = _load_trainer_state(out / "trainer_state.npz", opt, rng, model)
            if (out / "best.mdlc").exists():
                best = load_checkpoint(out / "best.mdlc")
            log.info("resumed from step %d", start_step)
        metrics_path = out / "metrics.csv"
        if start_step == 0 or not metrics_path.exists():
            with open(metrics_path, "w", newline="") as fh:
                csv.writer(fh).writerow(["step", "train_loss", "val_AJE", "val_FID"])

    model.train()
    running, seen = 0.0, 0
    t0 = time.perf_counter()
    for step in range(start_step + 1, cfg.updates + 1):
        batch, ids = sample_batch(train_data, cfg.window, cfg.batch, rng)
        if cfg.pose_noise > 0:
            corrupt_poses(batch, cfg.pose_noise, rng)
        loss = l2_loss(model(batch), batch.target_poses, batch.valid_len)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(f"non-finite loss {value} at step {step}; batch songs {ids}")
        opt.zero_grad()
        backward(loss)
        opt.step()
        running += value
        seen += 1

        if step % cfg.validate_every == 0 or step == cfg.updates:
            row = {"step": step, "train_loss": running / seen, "val_AJE": float("nan"),
                   "val_FID": float("nan")}
            running, seen = 0.0, 0
            if val_data:
                report = evaluate_split(model, val_data)
                row["val_AJE"] = report["aggregate"]["aje_mean"]
                row["val_FID"] = report["aggregate"]["fid"]
                model.train()
            history.append(row)
            log.info("step %d loss %.5f val AJE %.4f FID %.4f (%.1fs)", step, row["train_loss"],
                     row["val_AJE"], row["val_FID"], time.perf_counter() - t0)
            ckpt = ModelCheckpoint(model, normalizer, {**meta, "step": step, **_finite(row)})
            improved = np.isfinite(row["val_AJE"]) and row["val_AJE"] < best_aje
            if improved:
                best_aje = row["val_AJE"]
            if out is not None:
                with open(out / "metrics.csv", "a", newline="") as fh:
                    csv.writer(fh).writerow([step, repr(row["train_loss"]), repr(row["val_AJE"]),
                                             repr(row["val_FID"])])
                save_checkpoint(out / "latest.mdlc", ckpt)
                if improved:
                    save_checkpoint(out / "best.mdlc", ckpt)
                    best = load_checkpoint(out / "best.mdlc")
                _save_trainer_state(out / "trainer_state.npz", opt, rng, model, step, best_aje)
            elif improved:
                best = _snapshot(ckpt)

    model.eval()
    return TrainResult(history, ModelCheckpoint(model, normalizer, meta), best, best_aje)


def _finite(row: dict) -> dict:
    return {k: (v if not isinstance(v, float) or np.isfinite(v) else None) for k, v in row.items()}


def _snapshot(ckpt: ModelCheckpoint) -> ModelCheckpoint:
    return checkpoint_from_bytes(checkpoint_to_bytes(ckpt))
