import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pseudoimu.errors import IncompleteFrame, NonMonotoneTimestamps, NonUniformSampling
from pseudoimu.pose import (
    JOINT_KEYS,
    NUM_JOINTS,
    JointId,
    PoseFrame,
    PoseSequence,
    check_uniform,
    frame_from_record,
    frame_to_record,
    interpolate_gaps,
    relative_to_left_hip,
    validate_frame,
)

from conftest import make_frames

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
positions_st = arrays(np.float64, (NUM_JOINTS, 3), elements=finite)


def test_joint_order_is_canonical():
    assert JOINT_KEYS == (
        "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
        "left_hip", "right_hip", "left_knee", "right_knee", "left_ankle", "right_ankle",
    )
    assert NUM_JOINTS == 12
    assert all(j.mirror.mirror is j for j in JointId)
    assert JointId.LEFT_HIP.mirror is JointId.RIGHT_HIP


def test_validate_complete():
    assert validate_frame(PoseFrame(0.0, np.zeros((12, 3)))).complete


def test_validate_missing_joint():
    joints = {k: (0.0, 0.0, 0.0) for k in JOINT_KEYS if k != "right_ankle"}
    res = validate_frame(PoseFrame.from_joints(0.0, joints))
    assert res.missing == (JointId.RIGHT_ANKLE,)
    assert res.nonfinite == ()
    assert not res.complete


def test_validate_nonfinite_joint():
    pos = np.zeros((12, 3))
    pos[JointId.LEFT_WRIST, 1] = np.inf
    res = validate_frame(PoseFrame(0.0, pos))
    assert res.nonfinite == (JointId.LEFT_WRIST,)
    assert res.missing == ()


def test_relative_common_offset_cancels():
    out = relative_to_left_hip(PoseFrame(0.0, np.tile([1.0, 2.0, 3.0], (12, 1))))
    assert np.array_equal(out.positions, np.zeros((12, 3)))


def test_relative_hips():
    pos = np.zeros((12, 3))
    pos[JointId.LEFT_HIP] = (1, 0, 0)
    pos[JointId.RIGHT_HIP] = (3, 0, 0)
    out = relative_to_left_hip(PoseFrame(0.0, pos))
    assert np.array_equal(out.positions[JointId.LEFT_HIP], [0, 0, 0])
    assert np.array_equal(out.positions[JointId.RIGHT_HIP], [2, 0, 0])


def test_relative_requires_complete():
    with pytest.raises(IncompleteFrame):
        relative_to_left_hip(PoseFrame.from_joints(0.0, {"left_hip": (0, 0, 0)}))


@given(positions_st, arrays(np.float64, 3, elements=finite))
def test_relative_translation_invariant(pos, c):
    a = relative_to_left_hip(PoseFrame(0.0, pos)).positions
    b = relative_to_left_hip(PoseFrame(0.0, pos + c)).positions
    assert np.allclose(a, b, rtol=0, atol=1e-12 * (1 + np.abs(pos).max() + np.abs(c).max()))


def _gappy_sequence(gap: int, n: int = 8) -> PoseSequence:
    pos = np.zeros((n, 12, 3))
    pos[:, :, 0] = np.arange(n)[:, None]
    frames = list(make_frames(pos, dt=1.0))
    for k in range(2, 2 + gap):
        present = np.ones(12, dtype=bool)
        present[JointId.LEFT_KNEE] = False
        frames[k] = PoseFrame(frames[k].t, frames[k].positions, present)
    return PoseSequence(tuple(frames), 1.0)


def test_interpolate_midpoint():
    frames = [PoseFrame(float(i), np.full((12, 3), v)) for i, v in enumerate([0.0, np.nan, 2.0])]
    frames[1] = PoseFrame(1.0, np.zeros((12, 3)), np.zeros(12, dtype=bool))
    filled = interpolate_gaps(PoseSequence(tuple(frames), 1.0), max_gap=2)
    assert filled[1].is_complete
    assert np.array_equal(filled[1].positions, np.ones((12, 3)))


def test_interpolate_fills_only_missing_joints():
    seq = _gappy_sequence(2)
    filled = interpolate_gaps(seq, max_gap=2)
    assert filled.complete_mask().all()
    # the ramp x = frame index is linear, so interpolation recovers it exactly
    assert np.allclose(filled.positions()[:, :, 0], np.arange(8)[:, None])


def test_interpolate_leaves_long_gaps():
    seq = _gappy_sequence(3)
    filled = interpolate_gaps(seq, max_gap=2)
    assert list(filled.complete_mask()) == list(seq.complete_mask())


def test_interpolate_identity_without_gaps():
    seq = PoseSequence(make_frames(np.random.default_rng(0).normal(size=(5, 12, 3))), 0.1)
    assert interpolate_gaps(seq) == seq


def test_interpolate_edge_gap_untouched():
    frames = list(make_frames(np.zeros((4, 12, 3)), dt=1.0))
    frames[0] = PoseFrame(0.0, np.zeros((12, 3)), np.zeros(12, dtype=bool))
    filled = interpolate_gaps(PoseSequence(tuple(frames), 1.0))
    assert not filled[0].is_complete


@given(st.integers(0, 4), st.integers(0, 3), st.integers(0, 2 ** 31))
def test_interpolate_idempotent(gap, max_gap, seed):
    rng = np.random.default_rng(seed)
    frames = list(make_frames(rng.normal(size=(10, 12, 3)), dt=0.1))
    for k in range(3, 3 + gap):
        present = rng.random(12) > 0.3
        present[0] = False
        frames[k] = PoseFrame(frames[k].t, frames[k].positions, present)
    seq = PoseSequence(tuple(frames), 0.1)
    once = interpolate_gaps(seq, max_gap)
    assert interpolate_gaps(once, max_gap) == once


def test_check_uniform():
    assert check_uniform(np.arange(5) * 0.1) == pytest.approx(0.1)
    with pytest.raises(NonUniformSampling):
        check_uniform(np.array([0.0, 0.1, 0.25]))
    with pytest.raises(NonMonotoneTimestamps):
        check_uniform(np.array([0.0, 0.1, 0.1]))
    # 10% jitter is tolerated
    check_uniform(np.array([0.0, 0.1, 0.21, 0.3]), nominal_dt=0.1)


def test_sequence_rejects_nonuniform():
    with pytest.raises(NonUniformSampling):
        PoseSequence(make_frames(np.zeros((3, 12, 3)), dt=0.1) + (PoseFrame(1.0, np.zeros((12, 3))),), 0.1)


@given(positions_st, st.lists(st.booleans(), min_size=12, max_size=12), finite)
def test_record_round_trip(pos, present, t):
    frame = PoseFrame(t, pos, np.array(present))
    record = json.loads(json.dumps(frame_to_record(frame)))
    assert list(record["joints"]) == [k for k, p in zip(JOINT_KEYS, present) if p]
    assert frame_from_record(record) == frame


@pytest.mark.parametrize(
    "record",
    [
        {"t": 0.0},
        {"t": "x", "joints": {}},
        {"t": 0.0, "joints": {"nose": [0, 0, 0]}},
        {"t": 0.0, "joints": {"left_hip": [0, 0]}},
        {"t": float("nan"), "joints": {}},
    ],
)
def test_bad_records(record):
    with pytest.raises(ValueError):
        frame_from_record(record)
