"""Pseudo-IMU features: second differences of hip-relative joints and body-frame angles."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .body_frame import body_axes, euler_from_matrices
from .errors import IncompleteFrame, NonPositiveDt, TooShort, WindowRejected
from .pose import JOINT_KEYS, JointId, PoseFrame, check_uniform

WINDOW_STEPS = 50
WINDOW_FRAMES = WINDOW_STEPS + 2
MAX_GIMBAL_FRACTION = 0.1

_NON_REFERENCE = np.array([j for j in JointId if j != JointId.LEFT_HIP], dtype=np.intp)
ANGLE_COLUMNS = ("theta_dd", "phi_dd", "psi_dd")


class FeatureMode(str, Enum):
    TRANSLATIONAL = "trans"
    ROTATIONAL = "rot"
    COMBINED = "combined"

    @property
    def has_translation(self) -> bool:
        return self is not FeatureMode.ROTATIONAL

    @property
    def has_rotation(self) -> bool:
        return self is not FeatureMode.TRANSLATIONAL


def feature_dims(mode: FeatureMode) -> int:
    mode = FeatureMode(mode)
    return {FeatureMode.TRANSLATIONAL: 33, FeatureMode.ROTATIONAL: 3, FeatureMode.COMBINED: 36}[mode]


def column_names(mode: FeatureMode) -> tuple[str, ...]:
    mode = FeatureMode(mode)
    cols: list[str] = []
    if mode.has_translation:
        for j in _NON_REFERENCE:
            key = JOINT_KEYS[j]
            cols += [f"{key}.ax", f"{key}.ay", f"{key}.az"]
    if mode.has_rotation:
        cols += ANGLE_COLUMNS
    return tuple(cols)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """N x D window of accelerations (keypoint-units/s^2 and rad/s^2)."""

    values: np.ndarray
    mode: FeatureMode
    dt: float = float("nan")

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        mode = FeatureMode(self.mode)
        if values.ndim != 2 or values.shape[1] != feature_dims(mode):
            raise ValueError(f"expected (N, {feature_dims(mode)}) values for mode {mode.value}, got {values.shape}")
        if values.shape[0] < 1:
            raise ValueError("feature matrix needs at least one row")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mode", mode)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def columns(self) -> tuple[str, ...]:
        return column_names(self.mode)

    @property
    def translational(self) -> np.ndarray:
        n = 33 if self.mode.has_translation else 0
        return self.values[:, :n]

    @property
    def rotational(self) -> np.ndarray:
        return self.values[:, -3:] if self.mode.has_rotation else self.values[:, :0]


def central_second_difference(series, dt: float) -> np.ndarray:
    """(s[k+2] - 2 s[k+1] + s[k]) / dt**2 along the first axis."""
    s = np.asarray(series, dtype=np.float64)
    if not dt > 0:
        raise NonPositiveDt(f"dt must be positive, got {dt}")
    if s.shape[0] < 3:
        raise TooShort(f"need at least 3 samples, got {s.shape[0]}")
    return (s[2:] - 2.0 * s[1:-1] + s[:-2]) / (dt * dt)


def unwrap_angles(series) -> np.ndarray:
    return np.unwrap(np.asarray(series, dtype=np.float64), axis=0)


def rotation_angles(positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame (theta, phi, psi) of the body frame relative to the first frame.

    Using the first frame as reference cancels any fixed camera orientation and
    keeps the decomposition far from gimbal lock unless the diver turns by about
    90 degrees within the window.
    """
    _, R = body_axes(positions)
    rel = np.einsum("ji,tjk->tik", R[0], R)
    return euler_from_matrices(rel)


def features_from_positions(
    positions: np.ndarray,
    times: np.ndarray,
    mode: FeatureMode,
    max_gimbal_fraction: float = MAX_GIMBAL_FRACTION,
) -> FeatureMatrix:
    """Array-level feature extraction for a (T, 12, 3) window of complete frames."""
    mode = FeatureMode(mode)
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape[0] < 3:
        raise TooShort(f"need at least 3 frames, got {positions.shape[0]}")
    if not np.isfinite(positions).all():
        raise IncompleteFrame("window contains missing or non-finite joints")
    dt = check_uniform(times)

    blocks = []
    if mode.has_translation:
        rel = positions[:, _NON_REFERENCE, :] - positions[:, [JointId.LEFT_HIP], :]
        acc = central_second_difference(rel, dt)
        blocks.append(acc.reshape(acc.shape[0], -1))
    if mode.has_rotation:
        angles, gimbal = rotation_angles(positions)
        if gimbal.mean() > max_gimbal_fraction:
            raise WindowRejected(f"{int(gimbal.sum())} of {gimbal.size} frames near gimbal lock")
        blocks.append(central_second_difference(unwrap_angles(angles), dt))
    return FeatureMatrix(np.hstack(blocks), mode, dt)


def extract_features(poses: Sequence[PoseFrame], mode: FeatureMode, **kwargs) -> FeatureMatrix:
    """Feature window from N+2 complete pose frames; yields N rows."""
    if len(poses) < 3:
        raise TooShort(f"need at least 3 frames, got {len(poses)}")
    for f in poses:
        if not f.is_complete:
            raise IncompleteFrame(f"frame at t={f.t} is incomplete")
    positions = np.stack([f.positions for f in poses])
    times = np.array([f.t for f in poses])
    return features_from_positions(positions, times, mode, **kwargs)


def write_feature_csv(matrix: FeatureMatrix, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(matrix.columns)
        for row in matrix.values:
            writer.writerow([repr(float(v)) for v in row])


def read_feature_csv(path: str | Path, mode: FeatureMode) -> FeatureMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != column_names(mode):
        raise ValueError(f"{path}: header does not match mode {FeatureMode(mode).value}")
    return FeatureMatrix(np.array(rows[1:], dtype=np.float64), mode)
