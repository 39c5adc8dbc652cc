"""Deterministic synthetic diver sequences for testing and training.

A 12-joint skeleton (shoulder width 0.4, torso height 0.6, limb segments 0.3,
arbitrary units) is posed as one of four diver postures and filmed by a
camera with x right, y down (gravity) and z along the optical axis.

While swimming, ankles and knees flutter-kick along the facing direction in
left/right antiphase, wrists move at half the kick amplitude, and the body
rolls slightly about its long axis in step with the kick. When swimming stops,
all self-motion freezes and the whole body drifts along gravity at
``sink_rate``. Every joint receives independent isotropic Gaussian jitter each
frame to mimic pose-estimator noise.

All randomness comes from numpy's PCG64 generator seeded with integers, so a
given seed produces the same sequence on every platform.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset_io import NOT_SWIMMING, SWIMMING, LabeledSequence
from .features import WINDOW_FRAMES, FeatureMatrix, FeatureMode, features_from_positions
from .pose import NUM_JOINTS, JointId, PoseFrame, PoseSequence

POSE_CLASSES = ("prone_down", "prone_up", "inverted", "upright")

J = JointId
# body coordinates: x toward the right side, y from shoulders toward hips, z facing
SKELETON = np.zeros((NUM_JOINTS, 3))
SKELETON[J.LEFT_SHOULDER] = (-0.2, -0.3, 0.0)
SKELETON[J.RIGHT_SHOULDER] = (0.2, -0.3, 0.0)
SKELETON[J.LEFT_ELBOW] = (-0.25, 0.0, 0.0)
SKELETON[J.RIGHT_ELBOW] = (0.25, 0.0, 0.0)
SKELETON[J.LEFT_WRIST] = (-0.28, 0.3, 0.0)
SKELETON[J.RIGHT_WRIST] = (0.28, 0.3, 0.0)
SKELETON[J.LEFT_HIP] = (-0.15, 0.3, 0.0)
SKELETON[J.RIGHT_HIP] = (0.15, 0.3, 0.0)
SKELETON[J.LEFT_KNEE] = (-0.15, 0.6, 0.0)
SKELETON[J.RIGHT_KNEE] = (0.15, 0.6, 0.0)
SKELETON[J.LEFT_ANKLE] = (-0.15, 0.9, 0.0)
SKELETON[J.RIGHT_ANKLE] = (0.15, 0.9, 0.0)

# facing-direction displacement per unit kick, sign encodes antiphase
KICK_GAIN = np.zeros(NUM_JOINTS)
KICK_GAIN[[J.LEFT_ANKLE, J.LEFT_KNEE]] = 1.0
KICK_GAIN[[J.RIGHT_ANKLE, J.RIGHT_KNEE]] = -1.0
KICK_GAIN[J.LEFT_WRIST] = -0.5
KICK_GAIN[J.RIGHT_WRIST] = 0.5

GRAVITY = np.array([0.0, 1.0, 0.0])


def _orientation(y_axis, z_axis) -> np.ndarray:
    y = np.asarray(y_axis, dtype=np.float64)
    z = np.asarray(z_axis, dtype=np.float64)
    return np.column_stack([np.cross(y, z), y, z])


# body-to-camera rotation per posture before the random heading
POSTURES = {
    "upright": _orientation((0, 1, 0), (0, 0, -1)),
    "inverted": _orientation((0, -1, 0), (0, 0, -1)),
    "prone_down": _orientation((-1, 0, 0), (0, 1, 0)),
    "prone_up": _orientation((-1, 0, 0), (0, -1, 0)),
}


@dataclass(frozen=True)
class SynthParams:
    pose_class: str = "prone_down"
    swim_amp: float = 0.3
    swim_freq: float = 1.0
    jitter_sigma: float = 0.01
    sink_rate: float = 0.05
    fps: float = 10.0
    seed: int = 0
    roll_gain: float = 0.4  # body roll (rad) per unit of kick amplitude

    def __post_init__(self):
        if self.pose_class not in POSTURES:
            raise ValueError(f"pose_class must be one of {POSE_CLASSES}")
        if self.swim_amp < 0 or self.jitter_sigma < 0:
            raise ValueError("swim_amp and jitter_sigma must be >= 0")
        if not (self.swim_freq > 0 and self.fps > 0):
            raise ValueError("swim_freq and fps must be > 0")


def _rot_about_y(angles: np.ndarray) -> np.ndarray:
    c, s = np.cos(angles), np.sin(angles)
    R = np.zeros(angles.shape + (3, 3))
    R[..., 0, 0] = c
    R[..., 0, 2] = s
    R[..., 1, 1] = 1.0
    R[..., 2, 0] = -s
    R[..., 2, 2] = c
    return R


def _rot_about_gravity(angle: float) -> np.ndarray:
    return _rot_about_y(np.asarray(angle))


def simulate_positions(params: SynthParams, swim_secs: float, stop_secs: float) -> tuple[np.ndarray, np.ndarray, int]:
    """Return (positions[T, 12, 3], times[T], transition_index)."""
    if not (swim_secs >= 0 and stop_secs >= 0 and swim_secs + stop_secs > 0):
        raise ValueError("durations must be non-negative with a positive total")
    rng = np.random.default_rng(params.seed)
    heading = rng.uniform(-np.pi, np.pi)
    phase = rng.uniform(0.0, 2 * np.pi)
    center = np.array([0.0, 0.0, 4.0]) + rng.uniform(-0.5, 0.5, 3)

    n = int(round((swim_secs + stop_secs) * params.fps))
    k = int(round(swim_secs * params.fps))
    times = np.arange(n) / params.fps
    t_stop = k / params.fps
    motion_t = np.minimum(times, t_stop)  # self-motion freezes at the transition

    kick = params.swim_amp * np.sin(2 * np.pi * params.swim_freq * motion_t + phase)
    local = np.broadcast_to(SKELETON, (n, NUM_JOINTS, 3)).copy()
    local[..., 2] += kick[:, None] * KICK_GAIN[None, :]
    roll = _rot_about_y(params.roll_gain * kick)
    local = np.einsum("tij,tkj->tki", roll, local)

    R = _rot_about_gravity(heading) @ POSTURES[params.pose_class]
    drift = params.sink_rate * np.maximum(times - t_stop, 0.0)[:, None] * GRAVITY
    cam = local @ R.T + center + drift[:, None, :]
    if params.jitter_sigma > 0:
        cam = cam + rng.normal(0.0, params.jitter_sigma, cam.shape)
    return cam, times, k


def generate_sequence(params: SynthParams, swim_secs: float, stop_secs: float) -> LabeledSequence:
    positions, times, k = simulate_positions(params, swim_secs, stop_secs)
    frames = tuple(PoseFrame(float(t), p) for t, p in zip(times, positions))
    seq = PoseSequence(frames, 1.0 / params.fps)
    return LabeledSequence.from_transition(seq, k)


def inject_camera_motion(seq: LabeledSequence, path: Callable[[float], Sequence[float]]) -> LabeledSequence:
    """Add ``path(t)`` to every joint of the frame at time t."""
    frames = []
    for f in seq.sequence.frames:
        offset = np.asarray(path(f.t), dtype=np.float64)
        frames.append(f.with_positions(f.positions + offset))
    return LabeledSequence(PoseSequence(tuple(frames), seq.sequence.nominal_dt), seq.labels, seq.transition_index)


@dataclass(frozen=True)
class SynthGrid:
    pose_classes: tuple[str, ...] = POSE_CLASSES
    # (frequency Hz, amplitude) pairs; slower kicks sweep further
    kicks: tuple[tuple[float, float], ...] = ((0.5, 0.5), (0.75, 0.35), (1.0, 0.25), (1.25, 0.2), (1.5, 0.15))
    amp_scales: tuple[float, ...] = (1.0, 1.25)
    sink_rates: tuple[float, ...] = (-0.05, 0.0, 0.05)
    jitter_sigma: float = 0.01
    fps: float = 10.0
    roll_gain: float = 0.4

    def combos(self) -> list[tuple]:
        return [
            (pose, amp * scale, freq, sink)
            for pose, (freq, amp), scale, sink in itertools.product(self.pose_classes, self.kicks, self.amp_scales, self.sink_rates)
        ]


@dataclass(frozen=True)
class RawWindow:
    positions: np.ndarray
    times: np.ndarray
    label: int
    params: SynthParams = field(compare=False)


def generate_windows(grid: SynthGrid, windows_per_class: int, seed: int, window_frames: int = WINDOW_FRAMES) -> list[RawWindow]:
    """Balanced raw pose windows, one simulated sequence per window.

    Labels alternate swim/stop; each window is cut at a random offset from the
    matching phase of its sequence, so strict labelling always applies.
    """
    if windows_per_class < 1:
        raise ValueError("windows_per_class must be >= 1")
    combos = grid.combos()
    phase_secs = window_frames / grid.fps + 1.0
    children = np.random.SeedSequence(seed).spawn(2 * windows_per_class)
    out = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        label = SWIMMING if i % 2 == 0 else NOT_SWIMMING
        pose, amp, freq, sink = combos[int(rng.integers(len(combos)))]
        params = SynthParams(
            pose_class=pose,
            swim_amp=amp,
            swim_freq=freq,
            jitter_sigma=grid.jitter_sigma,
            sink_rate=sink,
            fps=grid.fps,
            seed=int(rng.integers(2**63)),
            roll_gain=grid.roll_gain,
        )
        positions, times, k = simulate_positions(params, phase_secs, phase_secs)
        if label == SWIMMING:
            start = int(rng.integers(0, k - window_frames + 1))
        else:
            start = int(rng.integers(k, len(times) - window_frames + 1))
        sl = slice(start, start + window_frames)
        out.append(RawWindow(positions[sl], times[sl], label, params))
    return out


def featurize(windows: Sequence[RawWindow], mode: FeatureMode) -> list[tuple[FeatureMatrix, int]]:
    return [(features_from_positions(w.positions, w.times, mode), w.label) for w in windows]


def generate_dataset(
    grid: SynthGrid = SynthGrid(),
    windows_per_class: int = 200,
    seed: int = 0,
    mode: FeatureMode = FeatureMode.COMBINED,
) -> list[tuple[FeatureMatrix, int]]:
    return featurize(generate_windows(grid, windows_per_class, seed), mode)
