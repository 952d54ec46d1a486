import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from music2dance.pose import (
    OUTWARD,
    VERTICAL,
    JointPose,
    Keypoints,
    PoseGeometryError,
    align_pose,
    align_shoulders,
    align_spine,
    joint_angles,
    keypoints_to_pose,
    poses_from_bytes,
    poses_to_bytes,
    read_keypoints_jsonl,
    read_poses,
    rotation_between,
    write_keypoints_jsonl,
    write_poses,
)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_keypoints(rng):
    return Keypoints.from_array(rng.normal(size=(6, 3)))


def body_keypoints(rng):
    """Upright torso (shoulder line perpendicular to the spine) under a random rigid motion."""
    width = rng.uniform(0.3, 0.5)
    torso = rng.uniform(0.4, 0.6)
    pts = np.array([
        [width / 2, 0.0, 0.0],
        [-width / 2, 0.0, 0.0],
        [-width / 2, 0.0, 0.0] + rng.normal(size=3) * 0.3,
        [0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0],
        [0.0, -torso, 0.0],
    ])
    pts[3] = pts[2] + rng.normal(size=3) * 0.25
    pts[4] = pts[3] + rng.normal(size=3) * 0.08
    return Keypoints.from_array(pts @ random_rotation(rng).T + rng.normal(size=3))


def pairwise(k):
    a = k.as_array()
    return np.linalg.norm(a[:, None] - a[None], axis=-1)


# -- rotation_between ---------------------------------------------------------

def test_rotation_same_vector_is_identity():
    np.testing.assert_array_equal(rotation_between(OUTWARD, OUTWARD), np.eye(3))


def test_rotation_quarter_turn():
    R = rotation_between(np.array([1.0, 0, 0]), np.array([0, 1.0, 0]))
    np.testing.assert_array_equal(R @ np.array([1.0, 0, 0]), [0, 1.0, 0])
    expected = np.array([[0, -1.0, 0], [1.0, 0, 0], [0, 0, 1.0]])
    np.testing.assert_array_equal(R, expected)


@pytest.mark.parametrize("a", [np.array([1.0, 0, 0]), np.array([0, 0.6, 0.8]),
                               np.array([1.0, 1.0, 1.0]) / np.sqrt(3)])
def test_rotation_antipodal(a):
    R = rotation_between(a, -a)
    np.testing.assert_allclose(R @ a, -a, atol=1e-12)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_rotation_properties(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 3))
    a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
    R = rotation_between(a, b)
    np.testing.assert_allclose(R @ a, b, atol=1e-9)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(R) - 1.0) < 1e-9


def test_rotation_rejects_non_unit():
    with pytest.raises(ValueError):
        rotation_between(np.array([2.0, 0, 0]), OUTWARD)


# -- alignment ----------------------------------------------------------------

def test_level_shoulders_unchanged():
    k = Keypoints([1, 0, 0], [-1, 0, 0], [-1, -1, 0], [-1, -2, 0], [-1, -2.2, 0], [0, -2, 0])
    out = align_shoulders(k)
    np.testing.assert_allclose(out.as_array(), k.as_array(), atol=1e-12)


def test_vertical_shoulders_are_levelled():
    k = Keypoints([0, 1, 0], [0, 0, 0], [0.5, 0, 0.2], [1, 0, 0.3], [1.1, 0, 0.3], [0, -1, 0.5])
    out = align_shoulders(k)
    s = out.left_shoulder - out.right_shoulder
    assert abs(s[1]) < 1e-12


def test_spine_already_vertical_unchanged():
    k = Keypoints([1, 0, 0], [-1, 0, 0], [-1, -1, 0], [-1, -2, 0], [-1, -2.2, 0], [0, -2, 0])
    np.testing.assert_allclose(align_spine(k).as_array(), k.as_array(), atol=1e-12)


def test_forward_lean_is_straightened():
    c = np.cos(np.pi / 4)
    k = Keypoints([1, 0, 0], [-1, 0, 0], [-1, -1, 0], [-1, -2, 0], [-1, -2.2, 0], [0, -c, c])
    out = align_spine(k)
    mid = 0.5 * (out.left_shoulder + out.right_shoulder)
    spine = (out.pelvis - mid) / np.linalg.norm(out.pelvis - mid)
    np.testing.assert_allclose(spine, [0, -1, 0], atol=1e-12)


def test_degenerate_inputs_raise():
    with pytest.raises(PoseGeometryError):
        align_shoulders(Keypoints([0, 0, 0], [0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0], [0, -1, 0]))
    with pytest.raises(PoseGeometryError):
        align_spine(Keypoints([1, 0, 0], [-1, 0, 0], [1, 1, 0], [2, 0, 0], [3, 0, 0], [0, 0, 0]))
    with pytest.raises(PoseGeometryError):
        joint_angles(Keypoints([1, 0, 0], [-1, 0, 0], [-1, 0, 0], [2, 0, 0], [3, 0, 0], [0, -1, 0]))
    with pytest.raises(PoseGeometryError):
        Keypoints([np.nan, 0, 0], [-1, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0], [0, -1, 0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_alignment_is_rigid_and_idempotent(seed):
    k = random_keypoints(np.random.default_rng(seed))
    once = align_shoulders(k)
    np.testing.assert_allclose(pairwise(once), pairwise(k), atol=1e-9)
    np.testing.assert_allclose(align_shoulders(once).as_array(), once.as_array(), atol=1e-9)
    spine = align_spine(once)
    np.testing.assert_allclose(pairwise(spine), pairwise(k), atol=1e-9)
    np.testing.assert_allclose(align_spine(spine).as_array(), spine.as_array(), atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_spine_alignment_keeps_shoulders_level(seed):
    k = align_spine(align_shoulders(body_keypoints(np.random.default_rng(seed))))
    s = k.left_shoulder - k.right_shoulder
    assert abs(s[1]) / np.linalg.norm(s) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_full_alignment_postconditions(seed):
    k = align_pose(random_keypoints(np.random.default_rng(seed)))
    s = k.left_shoulder - k.right_shoulder
    assert abs(s[1]) / np.linalg.norm(s) < 1e-9


# -- joint angles -------------------------------------------------------------

def test_hanging_straight_arm():
    k = Keypoints([1, 0, 0], [-1, 0, 0], [-1, -1, 0], [-1, -2, 0], [-1, -2.5, 0], [0, -2, 0])
    q = joint_angles(k).angles
    assert q[0] == np.pi
    assert q[2] == 0.0
    assert q[3] == 0.0


def test_outward_axis_angles():
    base = dict(left_shoulder=[1, 0, 0], right_shoulder=[-1, 0, 0], pelvis=[0, -2, 0])
    k = Keypoints(elbow=[-1, 0, 1], wrist=[-1, 0, 2], index_tip=[-1, 0, 3], **base)
    assert joint_angles(k).angles[1] == 0.0
    k = Keypoints(elbow=[-1, -1, 0], wrist=[-1, -2, 0], index_tip=[-1, -3, 0], **base)
    assert joint_angles(k).angles[1] == np.pi / 2


def test_translation_invariance_exact_on_dyadic_grid():
    rng = np.random.default_rng(0)
    for _ in range(200):
        pts = rng.integers(-64, 64, size=(6, 3)) / 8.0
        shift = rng.integers(-64, 64, size=3) / 4.0
        try:
            a = joint_angles(Keypoints.from_array(pts)).angles
        except PoseGeometryError:
            continue
        b = joint_angles(Keypoints.from_array(pts + shift)).angles
        np.testing.assert_array_equal(a, b)


def test_invariants_on_random_poses():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        k = random_keypoints(rng)
        q = keypoints_to_pose(k).angles
        assert np.all((q >= 0) & (q <= np.pi))
        shifted = Keypoints.from_array(k.as_array() + rng.normal(size=3) * 10)
        np.testing.assert_allclose(joint_angles(shifted).angles, joint_angles(k).angles,
                                   atol=1e-12)
        centre = rng.normal(size=3)
        scaled = Keypoints.from_array((k.as_array() - centre) * rng.uniform(0.1, 10) + centre)
        np.testing.assert_allclose(keypoints_to_pose(scaled).angles, q, atol=1e-9)


def test_joint_pose_range_is_checked():
    with pytest.raises(ValueError):
        JointPose(np.array([0, 0, 0, 4.0]))
    with pytest.raises(ValueError):
        JointPose(np.zeros(3))


# -- files --------------------------------------------------------------------

def test_keypoint_jsonl_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    frames = [Keypoints.from_array(rng.normal(size=(6, 3)), timestamp=i / 30) for i in range(5)]
    write_keypoints_jsonl(tmp_path / "k.jsonl", frames)
    back = read_keypoints_jsonl(tmp_path / "k.jsonl")
    assert len(back) == 5
    np.testing.assert_array_equal(back[3].as_array(), frames[3].as_array())
    assert back[3].timestamp == frames[3].timestamp


def test_bad_keypoint_record(tmp_path):
    (tmp_path / "k.jsonl").write_text('{"t": 0, "pts": {"ls": [0, 0, 0]}}\n')
    with pytest.raises(ValueError, match="k.jsonl:1"):
        read_keypoints_jsonl(tmp_path / "k.jsonl")


def test_pose_file_round_trip(tmp_path):
    times = np.arange(4) / 60.0
    angles = np.linspace(-np.pi, np.pi, 16).reshape(4, 4).astype(np.float32)
    write_poses(tmp_path / "p.mdlp", times, angles)
    t, q = read_poses(tmp_path / "p.mdlp")
    np.testing.assert_array_equal(t, times)
    np.testing.assert_array_equal(q, angles)
    data = poses_to_bytes(times, angles)
    assert data[:4] == b"MDLP" and len(data) == 12 + 4 * 24
    with pytest.raises(ValueError):
        poses_from_bytes(data[:-1])


def test_vertical_axis_convention():
    np.testing.assert_array_equal(VERTICAL, [0, 1, 0])
    np.testing.assert_array_equal(OUTWARD, [0, 0, 1])
