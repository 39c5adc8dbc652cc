"""Frame files, label sidecars, manifests, windowing, augmentation and splits."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence, TypeVar

import numpy as np

from .errors import NonMonotoneTimestamps, ParseError
from .pose import (
    MIRROR_PERMUTATION,
    NUM_JOINTS,
    PoseFrame,
    PoseSequence,
    frame_from_record,
    frame_to_record,
)

T = TypeVar("T")

SWIMMING = 1
NOT_SWIMMING = 0


@dataclass(frozen=True, eq=False)
class LabeledSequence:
    sequence: PoseSequence
    labels: np.ndarray  # per frame, 1 = swimming
    transition_index: int | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int8)
        if labels.shape != (len(self.sequence),):
            raise ValueError("need one label per frame")
        k = self.transition_index
        if k is not None:
            if not 0 <= k <= labels.size:
                raise ValueError("transition index out of range")
            if np.unique(labels[:k]).size > 1 or np.unique(labels[k:]).size > 1:
                raise ValueError("labels must be constant on each side of the transition")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.sequence)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabeledSequence):
            return NotImplemented
        return (
            self.sequence == other.sequence
            and np.array_equal(self.labels, other.labels)
            and self.transition_index == other.transition_index
        )

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def from_transition(cls, sequence: PoseSequence, transition_index: int) -> "LabeledSequence":
        labels = np.zeros(len(sequence), dtype=np.int8)
        labels[:transition_index] = SWIMMING
        return cls(sequence, labels, transition_index)


# ------------------------------------------------------------------ frames


def parse_frame_lines(lines: Iterable[str]) -> Iterator[PoseFrame]:
    """Decode line-delimited frame records lazily, checking that time moves forward."""
    last_t = -math.inf
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            frame = frame_from_record(json.loads(line))
        except (ValueError, TypeError) as exc:
            raise ParseError(str(exc), lineno) from None
        if frame.t <= last_t:
            raise NonMonotoneTimestamps(f"line {lineno}: t={frame.t} does not exceed previous t={last_t}")
        last_t = frame.t
        yield frame


def iter_frames(path: str | Path) -> Iterator[PoseFrame]:
    """Stream frames from a file without holding it in memory."""
    with open(path) as fh:
        yield from parse_frame_lines(fh)


def read_frames(path: str | Path, nominal_dt: float | None = None) -> PoseSequence:
    return PoseSequence.from_frames(iter_frames(path), nominal_dt)


def write_frames(seq: PoseSequence | Sequence[PoseFrame], path: str | Path) -> None:
    # json.dumps emits the shortest repr that round-trips each float
    with open(path, "w") as fh:
        for frame in seq:
            fh.write(json.dumps(frame_to_record(frame)) + "\n")


def write_labels(labeled: LabeledSequence, path: str | Path) -> None:
    if labeled.transition_index is not None:
        record = {"transition_index": labeled.transition_index, "n_frames": len(labeled)}
    else:
        record = {"labels": labeled.labels.tolist()}
    Path(path).write_text(json.dumps(record) + "\n")


def read_labels(path: str | Path, n_frames: int) -> np.ndarray:
    record = json.loads(Path(path).read_text())
    if "labels" in record:
        labels = np.asarray(record["labels"], dtype=np.int8)
    elif "transition_index" in record:
        labels = np.zeros(n_frames, dtype=np.int8)
        k = record["transition_index"]
        if k is not None:
            labels[: int(k)] = SWIMMING
        else:
            labels[:] = SWIMMING
    else:
        raise ParseError(f"{path}: expected 'labels' or 'transition_index'")
    if labels.size != n_frames:
        raise ParseError(f"{path}: {labels.size} labels for {n_frames} frames")
    return labels


def read_labeled(frames_path: str | Path, labels_path: str | Path) -> LabeledSequence:
    seq = read_frames(frames_path)
    labels = read_labels(labels_path, len(seq))
    changes = np.flatnonzero(np.diff(labels))
    k = int(changes[0] + 1) if changes.size == 1 else None
    return LabeledSequence(seq, labels, k)


def write_manifest(path: str | Path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> dict:
    try:
        manifest = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not isinstance(manifest, dict) or "items" not in manifest:
        raise ParseError(f"{path}: manifest needs an 'items' list")
    return manifest


def load_manifest_sequences(path: str | Path) -> list[LabeledSequence]:
    """Every (frames, labels) item of a manifest; paths are relative to the manifest."""
    base = Path(path).parent
    manifest = read_manifest(path)
    return [read_labeled(base / item["frames"], base / item["labels"]) for item in manifest["items"]]


# ---------------------------------------------------------------- windows


class LabelPolicy(str, Enum):
    STRICT = "strict"
    MAJORITY = "majority"


@dataclass(frozen=True)
class WindowSpec:
    length: int = 52
    stride: int = 52
    policy: LabelPolicy = LabelPolicy.STRICT

    def __post_init__(self):
        if self.length < 3:
            raise ValueError("window length must be >= 3")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        object.__setattr__(self, "policy", LabelPolicy(self.policy))


def window_dataset(seq: LabeledSequence, spec: WindowSpec = WindowSpec()) -> list[tuple[tuple[PoseFrame, ...], int]]:
    frames = seq.sequence.frames
    complete = seq.sequence.complete_mask()
    out = []
    for start in range(0, len(frames) - spec.length + 1, spec.stride):
        stop = start + spec.length
        if not complete[start:stop].all():
            continue
        labels = seq.labels[start:stop]
        swim = int(labels.sum())
        if spec.policy is LabelPolicy.STRICT:
            if 0 < swim < spec.length:
                continue
            label = SWIMMING if swim else NOT_SWIMMING
        else:
            # ties count as not swimming
            label = SWIMMING if 2 * swim > spec.length else NOT_SWIMMING
        out.append((tuple(frames[start:stop]), label))
    return out


# ---------------------------------------------------------- augmentation


def flip_positions(positions: np.ndarray) -> np.ndarray:
    """Mirror (..., 12, 3) positions in x and swap left/right joint identities."""
    out = np.array(positions, dtype=np.float64)[..., MIRROR_PERMUTATION, :]
    out[..., 0] *= -1.0
    return out


def augment_flip(window: Sequence[PoseFrame]) -> tuple[PoseFrame, ...]:
    return tuple(
        PoseFrame(f.t, flip_positions(f.positions), f.present[MIRROR_PERMUTATION]) for f in window
    )


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation matrix (normalised Gaussian quaternion)."""
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def augment_rotate(window: Sequence[PoseFrame], seed: int | None = None, rotation: np.ndarray | None = None) -> tuple[PoseFrame, ...]:
    """Apply one rotation about the camera origin to every joint of every frame."""
    R = rotation if rotation is not None else random_rotation(np.random.default_rng(seed))
    R = np.asarray(R, dtype=np.float64)
    return tuple(PoseFrame(f.t, f.positions @ R.T, f.present) for f in window)


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.65
    val: float = 0.16
    test: float = 0.19
    seed: int = 0

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError("split fractions must be positive and sum to 1")


def _largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    exact = [n * f for f in fractions]
    sizes = [int(math.floor(e)) for e in exact]
    order = sorted(range(len(exact)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split(dataset: Sequence[T], spec: SplitSpec = SplitSpec()) -> tuple[list[T], list[T], list[T]]:
    if len(dataset) == 0:
        raise ValueError("cannot split an empty dataset")
    perm = np.random.default_rng(spec.seed).permutation(len(dataset))
    n_train, n_val, _ = _largest_remainder(len(dataset), (spec.train, spec.val, spec.test))
    parts = np.split(perm, [n_train, n_train + n_val])
    return tuple([dataset[i] for i in p] for p in parts)  # type: ignore[return-value]


def positions_of(window: Sequence[PoseFrame]) -> tuple[np.ndarray, np.ndarray]:
    """(T, 12, 3) positions and (T,) timestamps of a window."""
    if not window:
        return np.empty((0, NUM_JOINTS, 3)), np.empty(0)
    return np.stack([f.positions for f in window]), np.array([f.t for f in window])
