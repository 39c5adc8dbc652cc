"""Frame-by-frame pipeline: rolling pose window -> features -> prediction -> detector."""

from __future__ import annotations

import csv
import json
import logging
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .detector import DetectorConfig, TransitionDetector, TransitionEvent
from .errors import PimuError
from .features import FeatureMode, features_from_positions
from .pose import DEFAULT_MAX_GAP, PoseFrame, PoseSequence, interpolate_gaps
from .tsf import Prediction, WindowClassifier

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StreamStep:
    index: int  # 1-based prediction count
    t: float  # timestamp of the newest frame in the window
    prediction: Prediction
    elapsed: float  # seconds since the engine started
    event: TransitionEvent | None = None


class StreamEngine:
    """Holds only the last ``window_len`` frames and the detector's G predictions."""

    def __init__(
        self,
        classifier: WindowClassifier,
        mode: FeatureMode,
        window_len: int = 52,
        stride: int = 1,
        detector: DetectorConfig | None = None,
        max_gap: int = DEFAULT_MAX_GAP,
    ):
        if window_len < 3 or stride < 1:
            raise ValueError("window_len must be >= 3 and stride >= 1")
        self.classifier = classifier
        self.mode = FeatureMode(mode)
        self.window_len = window_len
        self.stride = stride
        self.max_gap = max_gap
        self.detector = TransitionDetector(detector)
        self._frames: deque[PoseFrame] = deque(maxlen=window_len)
        self._since_last = 0
        self.n_predictions = 0
        self.n_rejected = 0
        self._t0 = time.perf_counter()

    def push_frame(self, frame: PoseFrame) -> StreamStep | None:
        if self._frames and frame.t <= self._frames[-1].t:
            raise PimuError(f"frame t={frame.t} is not after t={self._frames[-1].t}")
        self._frames.append(frame)
        self._since_last += 1
        if len(self._frames) < self.window_len:
            return None
        if self.n_predictions + self.n_rejected > 0 and self._since_last < self.stride:
            return None
        self._since_last = 0

        window = list(self._frames)
        try:
            if not all(f.is_complete for f in window):
                window = list(interpolate_gaps(PoseSequence(tuple(window), _mean_dt(window)), self.max_gap))
                if not all(f.is_complete for f in window):
                    raise PimuError("window has an unfillable gap")
            positions = np.stack([f.positions for f in window])
            times = np.array([f.t for f in window])
            matrix = features_from_positions(positions, times, self.mode)
        except PimuError as exc:
            self.n_rejected += 1
            log.debug("window ending t=%s rejected: %s", frame.t, exc)
            return None

        prediction = self.classifier.predict(matrix)
        self.n_predictions += 1
        event = self.detector.push(prediction, frame.t)
        return StreamStep(self.n_predictions, frame.t, prediction, time.perf_counter() - self._t0, event)

    def run(self, frames: Iterable[PoseFrame]) -> Iterator[StreamStep]:
        for frame in frames:
            step = self.push_frame(frame)
            if step is not None:
                yield step


def _mean_dt(window: list[PoseFrame]) -> float:
    return (window[-1].t - window[0].t) / (len(window) - 1)


PREDICTION_COLUMNS = ("index", "label", "confidence", "elapsed")


def write_prediction_row(writer, step: StreamStep) -> None:
    writer.writerow([step.index, step.prediction.label, f"{step.prediction.confidence:.6f}", f"{step.elapsed:.6f}"])


# ----------------------------------------------------------------- timeline

GREEN = "#2e9e44"
RED = "#d63a3a"


def write_timeline_svg(predictions_csv: str | Path, events_jsonl: str | Path, out: str | Path, delta: int = 7, cell: int = 6) -> None:
    """Static timeline: one green/red cell per prediction, yellow frames around each check window.

    Rows are streamed from the prediction log, so memory does not grow with
    stream length.
    """
    events = []
    if Path(events_jsonl).exists():
        with open(events_jsonl) as fh:
            events = [json.loads(line) for line in fh if line.strip()]
    n = 0
    with open(predictions_csv, newline="") as fh:
        for _ in csv.DictReader(fh):
            n += 1
    height = 40
    width = max(n, 1) * cell + 20
    with open(out, "w") as svg, open(predictions_csv, newline="") as fh:
        svg.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height + 30}" viewBox="0 0 {width} {height + 30}">\n')
        svg.write('<rect width="100%" height="100%" fill="white"/>\n')
        for row in csv.DictReader(fh):
            i = int(row["index"])
            color = GREEN if int(row["label"]) == 1 else RED
            svg.write(f'<rect x="{10 + (i - 1) * cell}" y="10" width="{cell}" height="{height - 20}" fill="{color}"/>\n')
        for ev in events:
            j = int(ev["index"])
            x = 10 + (j - 1 - delta) * cell
            svg.write(
                f'<rect x="{x}" y="5" width="{(2 * delta + 1) * cell}" height="{height - 10}" '
                'fill="none" stroke="#f2c200" stroke-width="2"/>\n'
            )
            svg.write(f'<text x="{x}" y="{height + 15}" font-size="10" font-family="sans-serif">{ev["event"]} @ {j}</text>\n')
        svg.write("</svg>\n")
