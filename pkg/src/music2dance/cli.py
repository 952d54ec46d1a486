"""Command-line entry point: ``music2dance <subcommand> ...``.

Exit codes: 0 success, 1 internal error, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .audio import extract_features, fit_normalizer, load_wav, read_features, write_features, write_wav
from .audio.normalize import Normalizer
from .dataset import (
    SYNTH_GENRES,
    PairSequence,
    SplitSpec,
    cross_validation_splits,
    load_corpus,
    load_manifest,
    pair_sequences,
    read_pair,
    synth_pair,
    write_manifest,
    write_pair,
)
from .inference import translate
from .metrics import evaluate_split
from .models import build_model, load_checkpoint
from .pose import keypoints_to_pose, read_keypoints_jsonl, read_poses, write_poses
from .training import TrainConfig, normalized_corpus, train

log = logging.getLogger("music2dance")

# Built-in defaults for `train`; a config file overrides them and flags override both.
TRAIN_DEFAULTS = {
    "variant": "transformer",
    "model": {},
    "split_mode": "all-genre",
    "fold": 0,
}


class UsageError(Exception):
    """Bad flags or inputs: reported with exit code 2."""


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"no such file: {path}")
    return path


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- subcommands -------------------------------------------------------------

def cmd_extract_features(args) -> None:
    feats = extract_features(load_wav(_require(args.audio)))
    if args.normalizer:
        feats = Normalizer.load(_require(args.normalizer))(feats)
    write_features(args.out, feats)
    log.info("wrote %d frames to %s", len(feats), args.out)


def cmd_extract_poses(args) -> None:
    frames = read_keypoints_jsonl(_require(args.keypoints))
    if not frames:
        raise UsageError(f"{args.keypoints} holds no keypoint frames")
    poses = [keypoints_to_pose(k) for k in frames]
    write_poses(args.out, np.array([p.timestamp for p in poses]),
                np.array([p.angles for p in poses], dtype=np.float32))
    log.info("wrote %d poses to %s", len(poses), args.out)


def cmd_sync(args) -> None:
    feats = read_features(_require(args.features))
    times, angles = read_poses(_require(args.poses))
    song_id = args.song_id or Path(args.features).stem
    write_pair(args.out, pair_sequences(feats, times, angles, song_id, args.genre))


def cmd_synth(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(args.songs):
        genre = SYNTH_GENRES[i % len(SYNTH_GENRES)]
        song_id = f"synth{i:03d}"
        w, times, angles = synth_pair(args.seed * 1000 + i, args.duration, args.difficulty, genre)
        write_wav(out / f"{song_id}.wav", w)
        write_poses(out / f"{song_id}.mdlp", times, angles)
        entries.append({"id": song_id, "genre": genre, "audio": f"{song_id}.wav",
                        "poses": f"{song_id}.mdlp"})
    write_manifest(out / "manifest.json", entries)
    songs = [(e["id"], e["genre"]) for e in entries]
    if args.songs >= 2 * len(SYNTH_GENRES):
        cross_validation_splits(songs, "all-genre")[-1].save(out / "split.json")
    log.info("wrote %d songs to %s", args.songs, out)


def _load_train_config(args) -> dict:
    cfg = {**TRAIN_DEFAULTS, **TrainConfig().__dict__}
    base = Path.cwd()
    if args.config:
        path = _require(args.config)
        try:
            from_file = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from exc
        base = path.parent
        cfg.update(from_file)
    for key in ("manifest", "split"):
        if cfg.get(key):
            cfg[key] = str(base / cfg[key])
    for key in ("updates", "batch", "lr", "validate_every", "window", "seed", "manifest",
                "split", "pose_noise"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if not cfg.get("manifest"):
        raise UsageError("train needs a manifest (config key 'manifest' or --manifest)")
    return cfg


def _select_split(cfg: dict, songs: list[PairSequence]) -> SplitSpec:
    if cfg.get("split"):
        return SplitSpec.load(_require(cfg["split"]))
    splits = cross_validation_splits([(s.song_id, s.genre) for s in songs], cfg["split_mode"])
    if not 0 <= cfg["fold"] < len(splits):
        raise UsageError(f"fold {cfg['fold']} out of range: {len(splits)} folds")
    return splits[cfg["fold"]]


def _pick(songs: list[PairSequence], ids) -> list[PairSequence]:
    by_id = {s.song_id: s for s in songs}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise UsageError(f"split names songs missing from the manifest: {missing}")
    return [by_id[i] for i in ids]


def cmd_train(args) -> None:
    cfg = _load_train_config(args)
    songs = load_corpus(load_manifest(_require(cfg["manifest"])), jobs=args.jobs)
    split = _select_split(cfg, songs)
    train_songs, val_songs = _pick(songs, split.train_ids), _pick(songs, split.validation_ids)

    arch = {"variant": cfg["variant"], **cfg["model"], "window": cfg["window"]}
    if arch["variant"] == "transformer" and "position_vocab" not in arch:
        arch["position_vocab"] = max(len(s) for s in songs) + 1
    try:
        model = build_model(arch, seed=cfg["seed"])
        train_cfg = TrainConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad training config: {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    split.save(out / "split.json")
    result = train(model, train_songs, val_songs, train_cfg, out_dir=out, resume=args.resume,
                   meta={"seed": cfg["seed"]})
    log.info("finished %d updates; best validation AJE %.4f", train_cfg.updates, result.best_aje)


def _checkpoint(path):
    ckpt = load_checkpoint(_require(path))
    if ckpt.normalizer is None:
        raise UsageError(f"{path} has no embedded normalizer")
    return ckpt


def cmd_translate(args) -> None:
    ckpt = _checkpoint(args.checkpoint)
    if args.audio:
        feats = extract_features(load_wav(_require(args.audio)))
    elif args.features:
        feats = read_features(_require(args.features))
    else:
        raise UsageError("translate needs --audio or --features")
    poses = translate(ckpt.model, ckpt.normalizer(feats))
    times = np.arange(len(poses)) / 60.0
    write_poses(args.out, times, poses)
    log.info("wrote %d generated poses to %s", len(poses), args.out)


def cmd_evaluate(args) -> None:
    ckpt = _checkpoint(args.checkpoint)
    expected = args.window
    if args.config:
        path = _require(args.config)
        expected = json.loads(path.read_text()).get("window", expected)
    if expected is not None and expected != ckpt.model.window:
        raise UsageError(f"checkpoint window K={ckpt.model.window} does not match the "
                         f"requested K={expected}")
    songs = load_corpus(load_manifest(_require(args.manifest)), jobs=args.jobs)
    split = SplitSpec.load(_require(args.split))
    chosen = _pick(songs, split.validation_ids if args.subset == "validation" else split.train_ids)
    report = evaluate_split(ckpt.model, normalized_corpus(chosen, ckpt.normalizer))
    report["aggregate"] = {k: (v if math.isfinite(v) else None)
                           for k, v in report["aggregate"].items()}
    _write_json(args.out, report)
    agg = report["aggregate"]
    print(f"AJE {agg['aje_mean']:.4f} +/- {agg['aje_std']:.4f} rad, FID {agg['fid']}")


def cmd_fit_normalizer(args) -> None:
    frames = [read_features(_require(p)) for p in args.features]
    fit_normalizer(frames).save(args.out)


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="music2dance",
        description="Translate music into 4-joint dance poses with sequence models.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("extract-features", help="WAV -> 60 Hz 438-dim feature file (MDLF)")
    p.add_argument("--audio", required=True, help="input PCM WAV file")
    p.add_argument("--out", required=True, help="output feature file")
    p.add_argument("--normalizer", help="MDLN normalizer to apply (default: raw features)")
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("fit-normalizer", help="fit a min/max normalizer on feature files")
    p.add_argument("--features", required=True, nargs="+", help="MDLF files (training songs only)")
    p.add_argument("--out", required=True, help="output normalizer file (MDLN)")
    p.set_defaults(func=cmd_fit_normalizer)

    p = sub.add_parser("extract-poses", help="keypoint JSONL -> joint-angle file (MDLP)")
    p.add_argument("--keypoints", required=True, help="input keypoints, one JSON object per line")
    p.add_argument("--out", required=True, help="output pose file")
    p.set_defaults(func=cmd_extract_poses)

    p = sub.add_parser("sync", help="pair each feature frame with its nearest pose (MDLS)")
    p.add_argument("--features", required=True, help="MDLF feature file")
    p.add_argument("--poses", required=True, help="MDLP pose file")
    p.add_argument("--out", required=True, help="output pair file")
    p.add_argument("--song-id", help="song id stored in the pair (default: feature file stem)")
    p.add_argument("--genre", default="", help="genre tag stored in the pair")
    p.set_defaults(func=cmd_sync)

    p = sub.add_parser("synth", help="write a synthetic corpus: WAVs, poses and a manifest")
    p.add_argument("--seed", type=int, default=0, help="corpus seed (default 0)")
    p.add_argument("--duration", type=float, default=30.0, help="seconds per song (default 30)")
    p.add_argument("--songs", type=int, default=12, help="number of songs (default 12)")
    p.add_argument("--difficulty", type=float, default=0.0,
                   help="0..1, adds voices and noise (default 0)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser(
        "train", help="train a model on a manifest",
        description="Settings come from built-in defaults, then the --config file, then flags "
                    "(a flag beats the config file, which beats the default).")
    p.add_argument("--config", help="JSON: variant, model, manifest, split/split_mode/fold and "
                                    "TrainConfig fields")
    p.add_argument("--out", required=True, help="directory for checkpoints and metrics.csv")
    p.add_argument("--resume", action="store_true", help="continue from OUT/latest.mdlc")
    p.add_argument("--manifest", help="corpus manifest (overrides config)")
    p.add_argument("--split", help="SplitSpec JSON (overrides split_mode/fold)")
    p.add_argument("--updates", type=int, help="number of Adam updates")
    p.add_argument("--batch", type=int, help="windows per update")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--validate-every", type=int, help="updates between validations")
    p.add_argument("--window", type=int, help="window length K")
    p.add_argument("--pose-noise", type=float, help="std of noise on decoder pose inputs")
    p.add_argument("--seed", type=int, help="seed for initialisation and sampling (default 0)")
    p.add_argument("--jobs", type=int, default=1, help="processes for loading songs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="generate a choreography for one song")
    p.add_argument("--checkpoint", required=True, help="trained MDLC checkpoint")
    p.add_argument("--audio", help="input WAV")
    p.add_argument("--features", help="raw MDLF features instead of --audio")
    p.add_argument("--out", required=True, help="output pose file (MDLP)")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="AJE and FID of a checkpoint on a split")
    p.add_argument("--checkpoint", required=True, help="trained MDLC checkpoint")
    p.add_argument("--manifest", required=True, help="corpus manifest")
    p.add_argument("--split", required=True, help="SplitSpec JSON")
    p.add_argument("--subset", choices=("validation", "train"), default="validation",
                   help="which side of the split to score (default validation)")
    p.add_argument("--out", required=True, help="output report JSON")
    p.add_argument("--config", help="training config; its window must match the checkpoint")
    p.add_argument("--window", type=int, help="expected window K; must match the checkpoint")
    p.add_argument("--jobs", type=int, default=1, help="processes for loading songs")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1
    return 0
