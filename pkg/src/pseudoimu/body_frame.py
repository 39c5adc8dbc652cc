"""Torso-affixed body frame and its Euler-angle decomposition.

The frame is built from the four torso joints:

* origin: centroid of both shoulders and both hips
* z axis: normalised mean of two torso-plane cross products (facing direction)
* y axis: from the centroid toward the hip midpoint, projected orthogonal to z
* x axis: y cross z

Euler angles use R = Rz(psi) @ Ry(phi) @ Rx(theta) with R = [x | y | z].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CoincidentMidpoint, DegenerateTorso, IncompleteTorso, NonOrthonormalFrame
from .pose import JointId, PoseFrame

EPS_DEGENERATE = 1e-8
GIMBAL_COS = 1e-6
ORTHONORMAL_TOL = 1e-6

_LS, _RS, _LH, _RH = (
    JointId.LEFT_SHOULDER,
    JointId.RIGHT_SHOULDER,
    JointId.LEFT_HIP,
    JointId.RIGHT_HIP,
)


@dataclass(frozen=True, eq=False)
class BodyFrame:
    origin: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        """Rotation matrix with the body axes as columns."""
        return np.column_stack([self.x, self.y, self.z])

    @classmethod
    def from_matrix(cls, R: np.ndarray, origin=(0.0, 0.0, 0.0)) -> "BodyFrame":
        R = np.asarray(R, dtype=np.float64)
        return cls(np.asarray(origin, dtype=np.float64), R[:, 0].copy(), R[:, 1].copy(), R[:, 2].copy())

    def relative_to(self, reference: "BodyFrame") -> "BodyFrame":
        """This frame expressed in the coordinates of ``reference``."""
        Rt = reference.matrix.T
        return BodyFrame.from_matrix(Rt @ self.matrix, Rt @ (self.origin - reference.origin))


@dataclass(frozen=True)
class EulerAngles:
    theta: float  # about x
    phi: float  # about y
    psi: float  # about z
    gimbal: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.phi, self.psi])


def _torso(positions: np.ndarray):
    return positions[..., _LS, :], positions[..., _RS, :], positions[..., _LH, :], positions[..., _RH, :]


def _check_torso(frame: PoseFrame) -> np.ndarray:
    pos = frame.positions
    idx = [_LS, _RS, _LH, _RH]
    if not (frame.present[idx].all() and np.isfinite(pos[idx]).all()):
        raise IncompleteTorso(f"frame at t={frame.t} lacks a finite torso joint")
    return pos


def _centroid(positions: np.ndarray) -> np.ndarray:
    ls, rs, lh, rh = _torso(positions)
    return (ls + rs + lh + rh) / 4.0


def _facing(positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalised mean cross product and its norm, batched over leading axes."""
    ls, rs, lh, rh = _torso(positions)
    right_cross = np.cross(ls - rh, rs - rh)
    left_cross = np.cross(ls - lh, rs - lh)
    mean = (right_cross + left_cross) / 2.0
    return mean, np.linalg.norm(mean, axis=-1)


def torso_center(frame: PoseFrame) -> np.ndarray:
    return _centroid(_check_torso(frame))


def facing_direction(frame: PoseFrame) -> np.ndarray:
    mean, norm = _facing(_check_torso(frame))
    if norm <= EPS_DEGENERATE:
        raise DegenerateTorso(f"torso joints are collinear at t={frame.t}")
    return mean / norm


def body_axes(positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised frame construction.

    ``positions`` has shape (..., 12, 3). Returns ``(origins, R)`` with shapes
    (..., 3) and (..., 3, 3), where the columns of R are the x, y, z axes.
    Raises DegenerateTorso / CoincidentMidpoint if any frame is degenerate.
    """
    positions = np.asarray(positions, dtype=np.float64)
    origin = _centroid(positions)
    ls, rs, lh, rh = _torso(positions)
    down = (lh + rh) / 2.0 - origin
    # checked first: equal shoulder and hip midpoints also cancel the facing cross products
    if np.any(~(np.linalg.norm(down, axis=-1) > EPS_DEGENERATE)):
        raise CoincidentMidpoint("hip midpoint coincides with torso centroid")
    zc, znorm = _facing(positions)
    if np.any(~(znorm > EPS_DEGENERATE)):
        raise DegenerateTorso("torso joints are (near-)collinear")
    z = zc / znorm[..., None]

    # non-planar torsos leave y slightly off-perpendicular to z; project it out
    down = down - np.sum(down * z, axis=-1, keepdims=True) * z
    ynorm = np.linalg.norm(down, axis=-1)
    if np.any(~(ynorm > EPS_DEGENERATE)):
        raise DegenerateTorso("hip direction is parallel to the facing direction")
    y = down / ynorm[..., None]
    x = np.cross(y, z)
    return origin, np.stack([x, y, z], axis=-1)


def build_body_frame(frame: PoseFrame) -> BodyFrame:
    pos = _check_torso(frame)
    origin, R = body_axes(pos)
    return BodyFrame.from_matrix(R, origin)


def rotation_matrix(theta: float, phi: float, psi: float) -> np.ndarray:
    """Rz(psi) @ Ry(phi) @ Rx(theta)."""
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    cs, ss = np.cos(psi), np.sin(psi)
    Rx = np.array([[1, 0, 0], [0, ct, -st], [0, st, ct]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rz = np.array([[cs, -ss, 0], [ss, cs, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def _wrap_pi(a: np.ndarray) -> np.ndarray:
    # atan2 may return -pi; the canonical range is (-pi, pi]
    return np.where(a <= -np.pi, a + 2 * np.pi, a)


def euler_from_matrices(R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched decomposition; returns (angles[..., 3] as theta/phi/psi, gimbal flags)."""
    R = np.asarray(R, dtype=np.float64)
    cos_phi = np.hypot(R[..., 2, 1], R[..., 2, 2])
    phi = np.arctan2(-R[..., 2, 0], cos_phi)
    gimbal = cos_phi < GIMBAL_COS
    theta = np.where(gimbal, 0.0, np.arctan2(R[..., 2, 1], R[..., 2, 2]))
    psi = np.where(
        gimbal,
        np.arctan2(-R[..., 0, 1], R[..., 1, 1]),
        np.arctan2(R[..., 1, 0], R[..., 0, 0]),
    )
    angles = np.stack([_wrap_pi(theta), phi, _wrap_pi(psi)], axis=-1)
    return angles, gimbal


def euler_angles(bf: BodyFrame) -> EulerAngles:
    R = bf.matrix
    err = np.max(np.abs(R.T @ R - np.eye(3)))
    if not (err <= ORTHONORMAL_TOL) or np.linalg.det(R) < 0:
        raise NonOrthonormalFrame(f"axes deviate from orthonormal by {err:.3g}")
    (theta, phi, psi), gimbal = euler_from_matrices(R)
    return EulerAngles(float(theta), float(phi), float(psi), bool(gimbal))
