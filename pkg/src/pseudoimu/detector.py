"""Online swim-to-stop detection over a stream of window predictions.

The detector keeps the latest G binary predictions. Prediction j (1-based
position in the stream) is a transition point when the mean of the delta
predictions before it reaches ``high_mean`` and the mean of the delta after it
drops to ``low_mean``; j itself is not part of either mean. Every center index
is examined exactly once, as soon as its future neighbours have arrived.

After a swim-to-stop event the detector latches and only re-arms once the
mirrored pattern (stopped, then swimming again) has been observed, so one
physical transition produces one event even though neighbouring centers
usually satisfy the same test.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import IO, Iterable

from .tsf import Prediction

SWIM_TO_STOP = "swim_to_stop"
STOP_TO_SWIM = "stop_to_swim"
_TOL = 1e-12


@dataclass(frozen=True)
class DetectorConfig:
    g: int = 15
    delta: int = 7
    high_mean: float = 1.0
    low_mean: float = 0.0
    detect_recovery: bool = False

    def __post_init__(self):
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if self.g < 2 * self.delta + 1:
            raise ValueError(f"G={self.g} must be at least 2*delta+1={2 * self.delta + 1}")
        if not (0.0 <= self.low_mean < self.high_mean <= 1.0):
            raise ValueError("need 0 <= low_mean < high_mean <= 1")


@dataclass(frozen=True)
class TransitionEvent:
    kind: str
    at_index: int
    t: float | None = None

    def to_record(self) -> dict:
        return {"event": self.kind, "index": self.at_index, "t": self.t}


class TransitionDetector:
    """Single-writer streaming detector; not safe for concurrent ``push`` calls."""

    def __init__(self, config: DetectorConfig | None = None):
        self.config = config or DetectorConfig()
        self.reset()

    def reset(self) -> "TransitionDetector":
        self._labels: deque[int] = deque(maxlen=self.config.g)
        self._times: deque[float | None] = deque(maxlen=self.config.g)
        self.consumed = 0
        self._next_center = self.config.delta + 1
        self._armed = True
        self.last_event: TransitionEvent | None = None
        return self

    def state(self) -> tuple:
        return (
            tuple(self._labels),
            tuple(self._times),
            self.consumed,
            self._next_center,
            self._armed,
            self.last_event,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TransitionDetector):
            return NotImplemented
        return self.config == other.config and self.state() == other.state()

    @property
    def buffered(self) -> list[tuple[int, int]]:
        """(index, label) pairs currently held, oldest first."""
        first = self.consumed - len(self._labels) + 1
        return [(first + i, lbl) for i, lbl in enumerate(self._labels)]

    def push(self, prediction: Prediction | int, t: float | None = None) -> TransitionEvent | None:
        label = prediction.label if isinstance(prediction, Prediction) else int(prediction)
        if label not in (0, 1):
            raise ValueError(f"labels must be 0 or 1, got {label}")
        self._labels.append(label)
        self._times.append(t)
        self.consumed += 1
        cfg = self.config
        if self.consumed < cfg.g:
            return None

        oldest = self.consumed - len(self._labels) + 1
        # centers that have aged out of the buffer can no longer be checked
        self._next_center = max(self._next_center, oldest + cfg.delta)
        while self._next_center + cfg.delta <= self.consumed:
            j = self._next_center
            self._next_center += 1
            event = self._check(j, oldest)
            if event is not None:
                self.last_event = event
                return event
        return None

    def _check(self, j: int, oldest: int) -> TransitionEvent | None:
        cfg = self.config
        k = j - oldest
        labels = self._labels
        past = sum(labels[i] for i in range(k - cfg.delta, k)) / cfg.delta
        future = sum(labels[i] for i in range(k + 1, k + 1 + cfg.delta)) / cfg.delta
        if self._armed:
            if past >= cfg.high_mean - _TOL and future <= cfg.low_mean + _TOL:
                self._armed = False
                return TransitionEvent(SWIM_TO_STOP, j, self._times[k])
        elif past <= cfg.low_mean + _TOL and future >= cfg.high_mean - _TOL:
            self._armed = True
            if cfg.detect_recovery:
                return TransitionEvent(STOP_TO_SWIM, j, self._times[k])
        return None


def detect_transitions(labels: Iterable[int], config: DetectorConfig | None = None, times: Iterable[float] | None = None) -> list[TransitionEvent]:
    det = TransitionDetector(config)
    times_iter = iter(times) if times is not None else None
    events = []
    for lbl in labels:
        ev = det.push(lbl, next(times_iter) if times_iter is not None else None)
        if ev is not None:
            events.append(ev)
    return events


def write_event(fh: IO[str], event: TransitionEvent) -> None:
    fh.write(json.dumps(event.to_record()) + "\n")
