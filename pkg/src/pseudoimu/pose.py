"""Pose data types: the 12 tracked joints, frames, sequences, and gap handling.

Keypoints come from monocular 2D-to-3D lifting and are only known up to an
unknown global scale. Nothing in this package rescales them to metres, so
every derived quantity is in "keypoint units". Train and run a classifier on
data that shares one unit convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import IncompleteFrame, NonMonotoneTimestamps, NonUniformSampling

# Relative tolerance on frame spacing; the second-difference stencil assumes a uniform grid.
JITTER_TOLERANCE = 0.1
DEFAULT_MAX_GAP = 2


class JointId(IntEnum):
    LEFT_SHOULDER = 0
    RIGHT_SHOULDER = 1
    LEFT_ELBOW = 2
    RIGHT_ELBOW = 3
    LEFT_WRIST = 4
    RIGHT_WRIST = 5
    LEFT_HIP = 6
    RIGHT_HIP = 7
    LEFT_KNEE = 8
    RIGHT_KNEE = 9
    LEFT_ANKLE = 10
    RIGHT_ANKLE = 11

    @property
    def key(self) -> str:
        """snake_case name used on the wire."""
        return self.name.lower()

    @classmethod
    def from_key(cls, key: str) -> "JointId":
        try:
            return cls[key.upper()]
        except KeyError:
            raise ValueError(f"unknown joint name {key!r}") from None

    @property
    def mirror(self) -> "JointId":
        name = self.name
        if name.startswith("LEFT_"):
            return JointId["RIGHT_" + name[5:]]
        return JointId["LEFT_" + name[6:]]


NUM_JOINTS = len(JointId)
JOINT_KEYS: tuple[str, ...] = tuple(j.key for j in JointId)
TORSO_JOINTS = (
    JointId.LEFT_SHOULDER,
    JointId.RIGHT_SHOULDER,
    JointId.LEFT_HIP,
    JointId.RIGHT_HIP,
)
# permutation that swaps every left joint with its right counterpart
MIRROR_PERMUTATION = np.array([j.mirror for j in JointId], dtype=np.intp)


@dataclass(frozen=True)
class ValidationResult:
    missing: tuple[JointId, ...] = ()
    nonfinite: tuple[JointId, ...] = ()

    @property
    def complete(self) -> bool:
        return not self.missing and not self.nonfinite

    def __bool__(self) -> bool:
        return self.complete


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PoseFrame:
    """One timestamped set of joint positions in camera coordinates.

    ``positions`` is a (12, 3) array in canonical ``JointId`` order; rows of
    joints that were not detected are NaN and have ``present`` set to False.
    """

    t: float
    positions: np.ndarray
    present: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64).reshape(NUM_JOINTS, 3)
        if self.present is None:
            present = np.ones(NUM_JOINTS, dtype=bool)
        else:
            present = np.array(self.present, dtype=bool).reshape(NUM_JOINTS)
        pos[~present] = np.nan
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "positions", _readonly(pos))
        object.__setattr__(self, "present", _readonly(present))

    @classmethod
    def from_joints(cls, t: float, joints: Mapping[JointId | str, Sequence[float]]) -> "PoseFrame":
        pos = np.full((NUM_JOINTS, 3), np.nan)
        present = np.zeros(NUM_JOINTS, dtype=bool)
        for key, xyz in joints.items():
            j = key if isinstance(key, JointId) else JointId.from_key(key)
            pos[j] = xyz
            present[j] = True
        return cls(t, pos, present)

    def joint(self, j: JointId) -> np.ndarray:
        return self.positions[j]

    def joints(self) -> dict[JointId, np.ndarray]:
        return {j: self.positions[j] for j in JointId if self.present[j]}

    @property
    def is_complete(self) -> bool:
        return bool(self.present.all() and np.isfinite(self.positions).all())

    def with_positions(self, positions: np.ndarray, t: float | None = None) -> "PoseFrame":
        return PoseFrame(self.t if t is None else t, positions, self.present)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PoseFrame):
            return NotImplemented
        return (
            self.t == other.t
            and np.array_equal(self.present, other.present)
            and np.array_equal(self.positions, other.positions, equal_nan=True)
        )

    __hash__ = None  # type: ignore[assignment]


def validate_frame(frame: PoseFrame) -> ValidationResult:
    missing = tuple(JointId(i) for i in np.flatnonzero(~frame.present))
    bad = frame.present & ~np.isfinite(frame.positions).all(axis=1)
    nonfinite = tuple(JointId(i) for i in np.flatnonzero(bad))
    return ValidationResult(missing, nonfinite)


def relative_to_left_hip(frame: PoseFrame) -> PoseFrame:
    """Express every joint relative to the left hip (left hip becomes the origin)."""
    result = validate_frame(frame)
    if not result.complete:
        raise IncompleteFrame(f"frame at t={frame.t}: {result}")
    pos = frame.positions - frame.positions[JointId.LEFT_HIP]
    return frame.with_positions(pos)


def check_uniform(times: np.ndarray, nominal_dt: float | None = None, tol: float = JITTER_TOLERANCE) -> float:
    """Return the mean step of ``times``; raise if any step strays more than ``tol`` from it.

    When ``nominal_dt`` is given each step is checked against it instead of the mean.
    """
    times = np.asarray(times, dtype=np.float64)
    if times.size < 2:
        raise NonUniformSampling("need at least two timestamps")
    steps = np.diff(times)
    if np.any(steps <= 0):
        raise NonMonotoneTimestamps("timestamps must be strictly increasing")
    mean_dt = (times[-1] - times[0]) / (times.size - 1)
    ref = mean_dt if nominal_dt is None else nominal_dt
    worst = np.max(np.abs(steps - ref))
    if worst > tol * ref * (1 + 1e-9):
        raise NonUniformSampling(f"frame spacing deviates by {worst:.4g}s from dt={ref:.4g}s (tolerance {tol:.0%})")
    return float(mean_dt)


@dataclass(frozen=True, eq=False)
class PoseSequence:
    frames: tuple[PoseFrame, ...]
    nominal_dt: float

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        if not self.nominal_dt > 0:
            raise ValueError("nominal_dt must be positive")
        if len(frames) >= 2:
            check_uniform(self.times, self.nominal_dt)

    @classmethod
    def from_frames(cls, frames: Iterable[PoseFrame], nominal_dt: float | None = None) -> "PoseSequence":
        frames = tuple(frames)
        if nominal_dt is None:
            times = np.array([f.t for f in frames])
            if times.size < 2:
                raise ValueError("cannot infer nominal_dt from fewer than two frames")
            if np.any(np.diff(times) <= 0):
                raise NonMonotoneTimestamps("timestamps must be strictly increasing")
            nominal_dt = float(np.median(np.diff(times)))
        return cls(frames, nominal_dt)

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    def __iter__(self):
        return iter(self.frames)

    @property
    def times(self) -> np.ndarray:
        return np.array([f.t for f in self.frames], dtype=np.float64)

    def positions(self) -> np.ndarray:
        """(T, 12, 3) stack of joint positions."""
        return np.stack([f.positions for f in self.frames]) if self.frames else np.empty((0, NUM_JOINTS, 3))

    def complete_mask(self) -> np.ndarray:
        return np.array([f.is_complete for f in self.frames], dtype=bool)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PoseSequence):
            return NotImplemented
        return self.nominal_dt == other.nominal_dt and self.frames == other.frames

    __hash__ = None  # type: ignore[assignment]


def interpolate_gaps(seq: PoseSequence, max_gap: int = DEFAULT_MAX_GAP) -> PoseSequence:
    """Fill short runs of incomplete frames by per-joint linear interpolation in time.

    Only runs of at most ``max_gap`` incomplete frames with a complete frame on
    both sides are filled; joints that were observed inside the run are kept.
    Longer runs, and runs touching either end of the sequence, stay incomplete.
    """
    if max_gap < 0:
        raise ValueError("max_gap must be >= 0")
    frames = list(seq.frames)
    ok = [f.is_complete for f in frames]
    i = 0
    n = len(frames)
    while i < n:
        if ok[i]:
            i += 1
            continue
        start = i
        while i < n and not ok[i]:
            i += 1
        end = i  # first complete frame after the run, or n
        if start == 0 or end == n or end - start > max_gap:
            continue
        before, after = frames[start - 1], frames[end]
        span = after.t - before.t
        for k in range(start, end):
            f = frames[k]
            w = (f.t - before.t) / span
            interp = (1.0 - w) * before.positions + w * after.positions
            good = f.present & np.isfinite(f.positions).all(axis=1)
            pos = np.where(good[:, None], f.positions, interp)
            frames[k] = PoseFrame(f.t, pos, np.ones(NUM_JOINTS, dtype=bool))
    return PoseSequence(tuple(frames), seq.nominal_dt)


def frame_to_record(frame: PoseFrame) -> dict:
    joints = {}
    for j in JointId:
        if frame.present[j]:
            joints[j.key] = [float(v) for v in frame.positions[j]]
    return {"t": frame.t, "joints": joints}


def frame_from_record(record: Mapping) -> PoseFrame:
    """Inverse of :func:`frame_to_record`; raises ValueError on malformed input."""
    if not isinstance(record, Mapping) or "t" not in record or "joints" not in record:
        raise ValueError("record needs 't' and 'joints' keys")
    t = record["t"]
    if isinstance(t, bool) or not isinstance(t, (int, float)) or not math.isfinite(t):
        raise ValueError(f"bad timestamp {t!r}")
    joints = record["joints"]
    if not isinstance(joints, Mapping):
        raise ValueError("'joints' must be an object")
    parsed = {}
    for key, xyz in joints.items():
        j = JointId.from_key(key)
        if not isinstance(xyz, (list, tuple)) or len(xyz) != 3:
            raise ValueError(f"joint {key!r} needs 3 coordinates")
        if any(v is None or isinstance(v, bool) or not isinstance(v, (int, float)) for v in xyz):
            raise ValueError(f"joint {key!r} has non-numeric coordinates")
        parsed[j] = [float(v) for v in xyz]
    return PoseFrame.from_joints(float(t), parsed)
