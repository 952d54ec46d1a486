"""Human keypoints to 4-DOF robot-arm joint angles.

Coordinate frame: +y is vertical (up), +z points outward from the chest, and
the right-to-left shoulder direction ends up along +x once the pose is
aligned.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

VERTICAL = np.array([0.0, 1.0, 0.0])
OUTWARD = np.array([0.0, 0.0, 1.0])
LATERAL = np.array([1.0, 0.0, 0.0])

POINT_NAMES = ("left_shoulder", "right_shoulder", "elbow", "wrist", "index_tip", "pelvis")
_JSON_KEYS = {"ls": "left_shoulder", "rs": "right_shoulder", "el": "elbow",
              "wr": "wrist", "ix": "index_tip", "pv": "pelvis"}

POSE_MAGIC = b"MDLP"
POSE_VERSION = 1


class PoseGeometryError(ValueError):
    """A keypoint set violates a geometric invariant (coincident points, non-finite values)."""


@dataclass
class Keypoints:
    left_shoulder: np.ndarray
    right_shoulder: np.ndarray
    elbow: np.ndarray
    wrist: np.ndarray
    index_tip: np.ndarray
    pelvis: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        for name in POINT_NAMES:
            p = np.asarray(getattr(self, name), dtype=np.float64)
            if p.shape != (3,):
                raise PoseGeometryError(f"{name} must be a 3-vector, got shape {p.shape}")
            if not np.all(np.isfinite(p)):
                raise PoseGeometryError(f"{name} has non-finite coordinates")
            setattr(self, name, p)

    def as_array(self) -> np.ndarray:
        return np.stack([getattr(self, n) for n in POINT_NAMES])

    @classmethod
    def from_array(cls, pts: np.ndarray, timestamp: float = 0.0) -> "Keypoints":
        return cls(*np.asarray(pts, dtype=np.float64), timestamp=timestamp)

    def transformed(self, rotation: np.ndarray, pivot: np.ndarray) -> "Keypoints":
        pts = (self.as_array() - pivot) @ rotation.T + pivot
        return Keypoints.from_array(pts, self.timestamp)


@dataclass
class JointPose:
    angles: np.ndarray = field(default_factory=lambda: np.zeros(4))
    timestamp: float = 0.0

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=np.float64)
        if self.angles.shape != (4,):
            raise ValueError(f"a joint pose has exactly 4 angles, got {self.angles.shape}")
        if np.any(np.abs(self.angles) > np.pi):
            raise ValueError("joint angles must lie in [-pi, pi]")


def _unit(v: np.ndarray, what: str) -> np.ndarray:
    norm = np.linalg.norm(v)
    if not norm > 0:
        raise PoseGeometryError(f"{what} has zero length")
    return v / norm


def rotation_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Smallest rotation taking unit vector ``a`` onto unit vector ``b``.

    For antipodal inputs the half-turn axis is ``a`` crossed with the basis
    vector along which ``a`` has the smallest absolute component.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    for v, name in ((a, "a"), (b, "b")):
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError(f"{name} must be a unit vector")
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(np.dot(a, b))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        basis = np.eye(3)[np.argmin(np.abs(a))]
        k = np.cross(a, basis)
        k /= np.linalg.norm(k)
        # half turn: R = 2kk^T - I
        return 2.0 * np.outer(k, k) - np.eye(3)
    k = axis / s
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    # Rodrigues with sin = s, cos = c
    return np.eye(3) + s * kx + (1.0 - c) * (kx @ kx)


def align_shoulders(k: Keypoints) -> Keypoints:
    """Rotate about the pelvis so the right-to-left shoulder direction is horizontal."""
    s = _unit(k.left_shoulder - k.right_shoulder, "shoulder vector")
    if abs(s[1]) == 0.0:
        return replace(k)
    flat = s - s[1] * VERTICAL
    norm = np.linalg.norm(flat)
    # a perfectly vertical shoulder line has no horizontal heading; fall back to +x
    target = flat / norm if norm > 1e-12 else LATERAL
    return k.transformed(rotation_between(s, target), k.pelvis)


def align_spine(k: Keypoints) -> Keypoints:
    """Rotate about the shoulder midpoint so the midpoint-to-pelvis direction points straight down."""
    mid = 0.5 * (k.left_shoulder + k.right_shoulder)
    spine = _unit(k.pelvis - mid, "spine vector (pelvis coincides with shoulder midpoint)")
    down = -VERTICAL
    if np.array_equal(spine, down):
        return replace(k)
    return k.transformed(rotation_between(spine, down), mid)


def align_pose(k: Keypoints) -> Keypoints:
    """Shoulders level, spine vertical, then one more levelling pass for any residual tilt."""
    return align_shoulders(align_spine(align_shoulders(k)))


def vector_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Unsigned angle in [0, pi], stable near 0 and pi."""
    return float(np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b)))


def joint_angles(k: Keypoints) -> JointPose:
    """Four joint angles of the right arm from already-aligned keypoints."""
    u1 = _unit(k.elbow - k.right_shoulder, "shoulder-elbow segment")
    u2 = _unit(k.wrist - k.elbow, "elbow-wrist segment")
    u3 = _unit(k.index_tip - k.wrist, "wrist-index segment")
    q = [
        vector_angle(u1, VERTICAL),
        vector_angle(u1, OUTWARD),
        vector_angle(u1, u2),
        vector_angle(u2, u3),
    ]
    return JointPose(np.array(q), k.timestamp)


def keypoints_to_pose(k: Keypoints) -> JointPose:
    return joint_angles(align_pose(k))


def read_keypoints_jsonl(path) -> list[Keypoints]:
    frames = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pts = {_JSON_KEYS[key]: value for key, value in obj["pts"].items()
                       if key in _JSON_KEYS}
                missing = set(POINT_NAMES) - set(pts)
                if missing:
                    raise KeyError(", ".join(sorted(missing)))
                frames.append(Keypoints(**pts, timestamp=float(obj["t"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad keypoint record ({exc})") from exc
    return frames


def write_keypoints_jsonl(path, frames: list[Keypoints]) -> None:
    inverse = {v: k for k, v in _JSON_KEYS.items()}
    with open(path, "w", encoding="utf-8") as fh:
        for k in frames:
            pts = {inverse[n]: getattr(k, n).tolist() for n in POINT_NAMES}
            fh.write(json.dumps({"t": k.timestamp, "pts": pts}) + "\n")


def poses_to_bytes(times: np.ndarray, angles: np.ndarray) -> bytes:
    times = np.asarray(times, dtype=np.float64)
    angles = np.asarray(angles)
    if angles.ndim != 2 or angles.shape[1] != 4 or len(times) != len(angles):
        raise ValueError("pose stream must be (T,) times and (T, 4) angles")
    record = np.dtype([("t", "<f8"), ("q", "<f4", (4,))])
    body = np.empty(len(times), dtype=record)
    body["t"] = times
    body["q"] = angles
    return POSE_MAGIC + struct.pack("<II", POSE_VERSION, len(times)) + body.tobytes()


def poses_from_bytes(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    if data[:4] != POSE_MAGIC:
        raise ValueError(f"bad magic {data[:4]!r}, expected {POSE_MAGIC!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != POSE_VERSION:
        raise ValueError(f"unsupported pose file version {version}")
    record = np.dtype([("t", "<f8"), ("q", "<f4", (4,))])
    if len(data) != 12 + count * record.itemsize:
        raise ValueError("pose file length does not match its record count")
    body = np.frombuffer(data, dtype=record, offset=12)
    return body["t"].astype(np.float64), body["q"].astype(np.float32)


def write_poses(path, times, angles) -> None:
    Path(path).write_bytes(poses_to_bytes(times, angles))


def read_poses(path) -> tuple[np.ndarray, np.ndarray]:
    return poses_from_bytes(Path(path).read_bytes())
