import csv
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from pseudoimu.detector import DetectorConfig, write_event
from pseudoimu.errors import PimuError
from pseudoimu.features import FeatureMode
from pseudoimu.pose import PoseFrame
from pseudoimu.stream import PREDICTION_COLUMNS, StreamEngine, write_prediction_row, write_timeline_svg
from pseudoimu.synth import POSE_CLASSES, SynthParams, generate_sequence

WINDOW = 52
TRANSITION_FRAME = 120  # 12 s at 10 fps
# window k (1-based) ends at frame k + 50; the first fully stopped window starts at the transition
FIRST_STOPPED_WINDOW = TRANSITION_FRAME + 1
LAST_SWIMMING_WINDOW = TRANSITION_FRAME - WINDOW + 1


def _run(forest, frames, **kwargs):
    engine = StreamEngine(forest, FeatureMode.TRANSLATIONAL, **kwargs)
    return engine, list(engine.run(frames))


def test_short_stream_gives_nothing(trans_forest):
    frames = generate_sequence(SynthParams(seed=0), 5, 0).sequence.frames
    engine, steps = _run(trans_forest, frames)
    assert len(frames) == 50 and steps == [] and engine.n_predictions == 0


@pytest.mark.parametrize("stride, expected", [(1, 49), (4, 13), (52, 1)])
def test_prediction_count(trans_forest, stride, expected):
    frames = generate_sequence(SynthParams(seed=0), 10, 0).sequence.frames
    _, steps = _run(trans_forest, frames, stride=stride)
    assert len(steps) == expected
    assert [s.index for s in steps] == list(range(1, expected + 1))
    assert steps[0].t == frames[WINDOW - 1].t


@pytest.mark.parametrize("pose", POSE_CLASSES)
def test_all_swim_stream_has_no_events(trans_forest, pose):
    frames = generate_sequence(SynthParams(pose_class=pose, seed=1), 30, 0).sequence.frames
    _, steps = _run(trans_forest, frames)
    assert all(s.prediction.label == 1 for s in steps)
    assert [s.event for s in steps if s.event] == []


def _oracle_events(forest, pose, seed):
    frames = generate_sequence(SynthParams(pose_class=pose, seed=seed), 12, 12).sequence.frames
    _, steps = _run(forest, frames)
    return [s.event for s in steps if s.event]


@pytest.mark.parametrize("pose", POSE_CLASSES)
def test_oracle_transition_detected_once_while_windows_straddle(trans_forest, pose):
    events = _oracle_events(trans_forest, pose, seed=0)
    assert len(events) == 1
    # the detector fires among the windows that mix swimming and stopped frames
    assert LAST_SWIMMING_WINDOW < events[0].at_index < FIRST_STOPPED_WINDOW
    assert events[0].t == pytest.approx((events[0].at_index + WINDOW - 2) / 10)


@pytest.mark.xfail(strict=True, reason="windowing bias: the forest calls 'stopped' about one kick cycle before the window is fully stopped")
def test_oracle_transition_within_delta_of_first_stopped_window(trans_forest):
    offsets = [_oracle_events(trans_forest, pose, 0)[0].at_index - FIRST_STOPPED_WINDOW for pose in POSE_CLASSES]
    assert all(abs(o) <= DetectorConfig().delta for o in offsets)


def test_short_gaps_are_interpolated(trans_forest):
    frames = list(generate_sequence(SynthParams(seed=2), 8, 0).sequence.frames)
    present = np.ones(12, dtype=bool)
    present[3] = False
    frames[60] = PoseFrame(frames[60].t, frames[60].positions, present)
    engine, steps = _run(trans_forest, frames)
    # only the window whose newest frame is the gappy one cannot be bridged
    assert engine.n_rejected == 1 and len(steps) == len(frames) - WINDOW


def test_long_gaps_reject_windows(trans_forest):
    frames = list(generate_sequence(SynthParams(seed=2), 8, 0).sequence.frames)
    for k in range(60, 64):
        frames[k] = PoseFrame(frames[k].t, frames[k].positions, np.zeros(12, dtype=bool))
    engine, steps = _run(trans_forest, frames)
    assert engine.n_rejected > 0
    assert engine.n_predictions + engine.n_rejected == len(frames) - WINDOW + 1


def test_state_is_bounded(trans_forest):
    frames = generate_sequence(SynthParams(seed=3), 20, 10).sequence.frames
    engine = StreamEngine(trans_forest, FeatureMode.TRANSLATIONAL)
    for f in frames:
        engine.push_frame(f)
        assert len(engine._frames) <= WINDOW
        assert len(engine.detector.buffered) <= engine.detector.config.g


def test_rejects_time_going_backwards(trans_forest):
    engine = StreamEngine(trans_forest, FeatureMode.TRANSLATIONAL)
    engine.push_frame(PoseFrame(1.0, np.zeros((12, 3))))
    with pytest.raises(PimuError):
        engine.push_frame(PoseFrame(0.5, np.zeros((12, 3))))


def test_timeline_svg(trans_forest, tmp_path):
    frames = generate_sequence(SynthParams(seed=0), 12, 12).sequence.frames
    _, steps = _run(trans_forest, frames)
    pred, ev = tmp_path / "p.csv", tmp_path / "e.jsonl"
    with open(pred, "w", newline="") as fh, open(ev, "w") as efh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTION_COLUMNS)
        for s in steps:
            write_prediction_row(writer, s)
            if s.event:
                write_event(efh, s.event)
    out = tmp_path / "t.svg"
    write_timeline_svg(pred, ev, out, delta=7)
    root = ET.parse(out).getroot()
    rects = root.findall("{http://www.w3.org/2000/svg}rect")
    fills = [r.get("fill") for r in rects]
    assert fills.count("#2e9e44") + fills.count("#d63a3a") == len(steps)
    boxes = [r for r in rects if r.get("stroke")]
    assert len(boxes) == 1 and float(boxes[0].get("width")) == 15 * 6
