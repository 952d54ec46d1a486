"""Feature/pose pairing, cross-validation splits, manifests and the synthetic corpus."""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import Waveform, extract_features, frame_times, load_wav, read_features
from .audio.features import FEATURE_SLICES, SAMPLE_RATE
from .pose import keypoints_to_pose, read_keypoints_jsonl, read_poses

TIE_TOLERANCE = 1e-9


@dataclass
class PairSequence:
    """One song: raw feature frames at 60 Hz, each with its nearest-in-time pose."""

    song_id: str
    genre: str
    features: np.ndarray  # (T, 438)
    poses: np.ndarray     # (T, 4)

    def __post_init__(self):
        if len(self.features) == 0:
            raise ValueError(f"song {self.song_id!r} has no frames")
        if len(self.features) != len(self.poses):
            raise ValueError(f"song {self.song_id!r}: {len(self.features)} feature frames "
                             f"but {len(self.poses)} poses")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def timestamps(self) -> np.ndarray:
        return frame_times(len(self.features))


@dataclass
class SplitSpec:
    train_ids: tuple[str, ...]
    validation_ids: tuple[str, ...]

    def __post_init__(self):
        self.train_ids = tuple(self.train_ids)
        self.validation_ids = tuple(self.validation_ids)
        overlap = set(self.train_ids) & set(self.validation_ids)
        if overlap:
            raise ValueError(f"songs in both train and validation: {sorted(overlap)}")

    def to_json(self) -> dict:
        return {"train_ids": list(self.train_ids), "validation_ids": list(self.validation_ids)}

    @classmethod
    def from_json(cls, obj: dict) -> "SplitSpec":
        return cls(obj["train_ids"], obj["validation_ids"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "SplitSpec":
        return cls.from_json(json.loads(Path(path).read_text()))


def nearest_pose_indices(feature_times: np.ndarray, pose_times: np.ndarray) -> np.ndarray:
    """Index of the closest pose for each feature timestamp; ties go to the earlier pose."""
    pose_times = np.asarray(pose_times, dtype=np.float64)
    feature_times = np.asarray(feature_times, dtype=np.float64)
    if len(pose_times) == 0:
        raise ValueError("cannot pair against an empty pose stream")
    if np.any(np.diff(pose_times) < 0):
        raise ValueError("pose timestamps must be sorted")
    right = np.clip(np.searchsorted(pose_times, feature_times), 0, len(pose_times) - 1)
    left = np.clip(right - 1, 0, len(pose_times) - 1)
    d_left = np.abs(feature_times - pose_times[left])
    d_right = np.abs(pose_times[right] - feature_times)
    return np.where(d_left <= d_right + TIE_TOLERANCE, left, right)


def pair_sequences(features: np.ndarray, pose_times, pose_angles, song_id: str = "",
                   genre: str = "") -> PairSequence:
    features = np.asarray(features)
    idx = nearest_pose_indices(frame_times(len(features)), pose_times)
    return PairSequence(song_id, genre, features, np.asarray(pose_angles)[idx])


def cross_validation_splits(songs, mode: str, k: int = 10, genre: str | None = None) -> list[SplitSpec]:
    """Train/validation splits over ``songs``, a sequence of ``(song_id, genre)``.

    ``per-genre``: leave-one-out inside each genre (or only ``genre``).
    ``all-genre``: fold ``i`` holds out the ``i``-th song of every genre.
    ``k-fold``: ``k`` contiguous folds of the corpus in order.
    """
    songs = [(str(s), str(g)) for s, g in songs]
    by_genre: OrderedDict[str, list[str]] = OrderedDict()
    for song_id, g in songs:
        by_genre.setdefault(g, []).append(song_id)

    if mode == "per-genre":
        genres = [genre] if genre is not None else list(by_genre)
        splits = []
        for g in genres:
            members = by_genre.get(g, [])
            if len(members) < 2:
                raise ValueError(f"genre {g!r} needs at least 2 songs for per-genre splits, "
                                 f"has {len(members)}")
            for held in members:
                splits.append(SplitSpec([s for s in members if s != held], [held]))
        return splits

    if mode == "all-genre":
        short = {g: len(m) for g, m in by_genre.items() if len(m) < 2}
        if short or not by_genre:
            raise ValueError(f"all-genre splits need >= 2 songs per genre; short genres: {short}")
        folds = min(len(m) for m in by_genre.values())
        splits = []
        for i in range(folds):
            held = [m[i] for m in by_genre.values()]
            splits.append(SplitSpec([s for s, _ in songs if s not in held], held))
        return splits

    if mode == "k-fold":
        if len(songs) < k or k < 2:
            raise ValueError(f"k-fold needs 2 <= k <= number of songs ({len(songs)}), got k={k}")
        ids = [s for s, _ in songs]
        splits = []
        for fold in np.array_split(np.arange(len(ids)), k):
            held = {ids[i] for i in fold}
            splits.append(SplitSpec([s for s in ids if s not in held], [ids[i] for i in fold]))
        return splits

    raise ValueError(f"unknown split mode {mode!r}; use per-genre, all-genre or k-fold")


# -- paired-sequence files ("MDLS") -----------------------------------------
# magic, u32 version, u32 frames, u32 feature dim, u16-prefixed utf-8 song id
# and genre, then frames x dim f32 features and frames x 4 f32 poses.

PAIR_MAGIC = b"MDLS"
PAIR_VERSION = 1


def pair_to_bytes(seq: PairSequence) -> bytes:
    feats = np.ascontiguousarray(seq.features, dtype="<f4")
    poses = np.ascontiguousarray(seq.poses, dtype="<f4")
    parts = [PAIR_MAGIC, struct.pack("<III", PAIR_VERSION, feats.shape[0], feats.shape[1])]
    for text in (seq.song_id, seq.genre):
        raw = text.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
    return b"".join(parts + [feats.tobytes(), poses.tobytes()])


def pair_from_bytes(data: bytes) -> PairSequence:
    if data[:4] != PAIR_MAGIC:
        raise ValueError(f"bad pair-file magic {data[:4]!r}")
    version, frames, dim = struct.unpack_from("<III", data, 4)
    if version != PAIR_VERSION:
        raise ValueError(f"unsupported pair-file version {version}")
    pos, texts = 16, []
    for _ in range(2):
        (n,) = struct.unpack_from("<H", data, pos)
        texts.append(data[pos + 2:pos + 2 + n].decode())
        pos += 2 + n
    expected = pos + 4 * frames * (dim + 4)
    if len(data) != expected:
        raise ValueError(f"pair file holds {len(data)} bytes, header implies {expected}")
    feats = np.frombuffer(data, "<f4", frames * dim, pos).reshape(frames, dim).astype(np.float32)
    poses = np.frombuffer(data, "<f4", frames * 4, pos + 4 * frames * dim).reshape(frames, 4)
    return PairSequence(texts[0], texts[1], feats, poses.astype(np.float32))


def write_pair(path, seq: PairSequence) -> None:
    Path(path).write_bytes(pair_to_bytes(seq))


def read_pair(path) -> PairSequence:
    return pair_from_bytes(Path(path).read_bytes())


# -- synthetic corpus --------------------------------------------------------

SYNTH_GENRES = ("synth-a", "synth-b")
_GENRE_STYLE = {
    # beats per minute, scale (semitones above the tonic)
    "synth-a": (120.0, (0, 2, 4, 7, 9)),
    "synth-b": (100.0, (0, 3, 5, 7, 10)),
}
_POSE_SMOOTHING = 10
_POSE_MAP_SEED = 20240611


def synth_pose_map() -> tuple[np.ndarray, np.ndarray]:
    """Fixed weights shared by every synthetic song (chroma -> 4 joint pre-activations)."""
    rng = np.random.default_rng(_POSE_MAP_SEED)
    return rng.normal(0.0, 0.8, size=(12, 4)), rng.normal(0.0, 0.2, size=4)


def synth_poses_from_features(features: np.ndarray) -> np.ndarray:
    """Ground-truth poses: pi * tanh of a linear map of the trailing-mean chroma."""
    chroma = np.asarray(features, dtype=np.float64)[:, FEATURE_SLICES["chroma"]]
    csum = np.cumsum(np.vstack([np.zeros((1, 12)), chroma]), axis=0)
    idx = np.arange(1, len(chroma) + 1)
    start = np.maximum(idx - _POSE_SMOOTHING, 0)
    smoothed = (csum[idx] - csum[start]) / (idx - start)[:, None]
    weights, bias = synth_pose_map()
    return np.pi * np.tanh(smoothed @ weights + bias)


def synth_audio(seed: int, duration_s: float, genre: str = SYNTH_GENRES[0],
                difficulty: float = 0.0) -> Waveform:
    """Beat-synchronous harmonic tones with percussive noise bursts on every beat."""
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    rng = np.random.default_rng(seed)
    bpm, scale = _GENRE_STYLE[genre]
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    out = np.zeros(n)
    beat = 60.0 / bpm
    tonic = 57 + int(rng.integers(0, 12))
    n_beats = int(np.ceil(duration_s / beat))
    voices = 1 + int(difficulty >= 0.5)
    for b in range(n_beats):
        lo = int(round(b * beat * SAMPLE_RATE))
        hi = min(n, int(round((b + 1) * beat * SAMPLE_RATE)))
        if lo >= n:
            break
        seg = t[lo:hi] - t[lo]
        env = np.minimum(seg / 0.01, 1.0) * np.exp(-seg * 1.5)
        for _ in range(voices):
            midi = tonic + scale[int(rng.integers(0, len(scale)))] + 12 * int(rng.integers(-1, 1))
            f0 = 440.0 * 2.0 ** ((midi - 69) / 12.0)
            tone = sum(np.sin(2 * np.pi * f0 * h * seg) / h for h in (1, 2, 3))
            out[lo:hi] += 0.25 * env * tone
        burst = min(hi - lo, int(0.03 * SAMPLE_RATE))
        out[lo:lo + burst] += (0.2 + 0.2 * difficulty) * rng.standard_normal(burst) * \
            np.exp(-np.arange(burst) / (0.008 * SAMPLE_RATE))
    out += 0.002 * (1.0 + 4.0 * difficulty) * rng.standard_normal(n)
    peak = np.max(np.abs(out))
    if peak > 0.95:
        out *= 0.95 / peak
    return Waveform(out, SAMPLE_RATE)


def synth_pair(seed: int, duration_s: float, difficulty: float = 0.0,
               genre: str = SYNTH_GENRES[0]):
    """Synthetic song: ``(waveform, pose_times, pose_angles)`` with a learnable audio->pose map.

    Poses are computed from the features of the (16-bit quantised) waveform
    itself, so they are exactly what the pipeline will see after a WAV round trip.
    """
    w = synth_audio(seed, duration_s, genre, difficulty)
    w = Waveform(np.clip(np.round(w.samples * 32768.0), -32768, 32767) / 32768.0, w.sample_rate)
    feats = extract_features(w).astype(np.float32)
    angles = synth_poses_from_features(feats).astype(np.float32)
    return w, frame_times(len(angles)), angles


# -- manifests ---------------------------------------------------------------

@dataclass
class SongEntry:
    id: str
    genre: str = ""
    audio: Path | None = None
    keypoints: Path | None = None
    poses: Path | None = None
    features: Path | None = None
    pair: Path | None = None
    extra: dict = field(default_factory=dict)


def load_manifest(path) -> list[SongEntry]:
    path = Path(path)
    obj = json.loads(path.read_text())
    base = path.parent
    entries, seen = [], set()
    for raw in obj.get("songs", []):
        raw = dict(raw)
        song_id = str(raw.pop("id"))
        if song_id in seen:
            raise ValueError(f"duplicate song id {song_id!r} in {path} (one choreography per song)")
        seen.add(song_id)
        kwargs = {}
        for key in ("audio", "keypoints", "poses", "features", "pair"):
            value = raw.pop(key, None)
            kwargs[key] = (base / value) if value else None
        genre = str(raw.pop("genre", ""))
        entry = SongEntry(song_id, genre, extra=raw, **kwargs)
        if entry.pair is None:
            if entry.audio is None and entry.features is None:
                raise ValueError(f"song {song_id!r} has neither audio nor features")
            if entry.keypoints is None and entry.poses is None:
                raise ValueError(f"song {song_id!r} has neither keypoints nor poses")
        entries.append(entry)
    return entries


def write_manifest(path, entries: list[dict]) -> None:
    Path(path).write_text(json.dumps({"songs": entries}, indent=2) + "\n")


def load_song(entry: SongEntry) -> PairSequence:
    if entry.pair is not None:
        seq = read_pair(entry.pair)
        return PairSequence(entry.id, entry.genre or seq.genre, seq.features, seq.poses)
    if entry.features is not None:
        feats = read_features(entry.features)
    else:
        feats = extract_features(load_wav(entry.audio)).astype(np.float32)
    if entry.poses is not None:
        times, angles = read_poses(entry.poses)
    else:
        frames = read_keypoints_jsonl(entry.keypoints)
        poses = [keypoints_to_pose(k) for k in frames]
        times = np.array([p.timestamp for p in poses])
        angles = np.array([p.angles for p in poses], dtype=np.float32)
    return pair_sequences(feats, times, angles, entry.id, entry.genre)


def load_corpus(entries: list[SongEntry], jobs: int = 1) -> list[PairSequence]:
    if jobs > 1 and len(entries) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(load_song, entries))
    return [load_song(e) for e in entries]
