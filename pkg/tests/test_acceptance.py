"""Acceptance criteria, one test per criterion.

Each test records a ``PASS``/``FAIL`` line with its wall time; the lines are
printed in an "acceptance criteria" section at the end of the pytest run.
Run just this suite with ``pytest tests/test_acceptance.py -v``.
"""

import contextlib
import time
import tracemalloc

import numpy as np
import pytest

from pseudoimu.body_frame import body_axes
from pseudoimu.cli import main
from pseudoimu.detector import DetectorConfig, detect_transitions
from pseudoimu.features import FeatureMode, central_second_difference, features_from_positions
from pseudoimu.synth import POSE_CLASSES, SynthGrid, SynthParams, generate_dataset, generate_sequence, inject_camera_motion
from pseudoimu.tsf import ForestParams, model_bytes, train_forest

from conftest import acceptance_lines, random_rotation, random_skeleton

pytestmark = pytest.mark.acceptance


@pytest.fixture
def criterion(request):
    @contextlib.contextmanager
    def run(name: str, budget: float | None = None):
        notes: list[str] = []
        start = time.perf_counter()
        status = "FAIL"
        try:
            yield notes
            elapsed = time.perf_counter() - start
            if budget is not None:
                notes.append(f"budget {budget:g}s")
                assert elapsed < budget, f"{name} took {elapsed:.2f}s, budget {budget}s"
            status = "PASS"
        finally:
            elapsed = time.perf_counter() - start
            line = f"{status} {name} ({elapsed:.2f}s) " + "; ".join(notes)
            request.config.stash[acceptance_lines].append(line.rstrip())
            print(line)

    return run


def _accuracy(forest, data) -> float:
    preds = forest.predict_many([m for m, _ in data])
    return float(np.mean([p.label == y for p, (_, y) in zip(preds, data)]))


# ------------------------------------------------------------------ C1


def test_c1_quadratic_exactness(criterion):
    with criterion("C1 finite-difference exactness", budget=1.0) as notes:
        rng = np.random.default_rng(1)
        dt = 0.1
        t = np.arange(52) * dt
        worst = 0.0
        for _ in range(1000):
            a = rng.uniform(0.1, 10.0, 3) * rng.choice([-1, 1], 3)
            b, c = rng.normal(0, 1, 3), rng.normal(0, 1, 3)
            s = a * t[:, None] ** 2 + b * t[:, None] + c
            est = central_second_difference(s, dt)
            worst = max(worst, float(np.max(np.abs(est - 2 * a) / np.abs(2 * a))))
        notes.append(f"worst relative error {worst:.2e}")
        assert worst <= 1e-9


# ------------------------------------------------------------------ C2


def test_c2_sinusoid_truncation_bound(criterion):
    # bound scaled by the acceleration amplitude A w^2, the dimensionally consistent reading
    with criterion("C2 sinusoid truncation bound", budget=1.0) as notes:
        dt = 0.1
        t = np.arange(200) * dt
        worst = 0.0
        for omega in np.linspace(0.1, 2 * np.pi * 2, 400):
            for amp in (0.01, 1.0, 50.0):
                est = central_second_difference(amp * np.sin(omega * t), dt)
                true = -amp * omega ** 2 * np.sin(omega * t[1:-1])
                bound = omega ** 2 * dt ** 2 / 12 * amp * omega ** 2 * (1 + 1e-6)
                worst = max(worst, float(np.max(np.abs(est - true)) / bound))
        notes.append(f"max error / bound {worst:.4f}")
        assert worst <= 1.0


# ------------------------------------------------------------------ C3


def test_c3_body_frame_orthonormal_and_equivariant(criterion):
    with criterion("C3 body-frame orthonormality and equivariance", budget=5.0) as notes:
        rng = np.random.default_rng(3)
        n = 10_000
        pos = np.stack([random_skeleton(rng) for _ in range(n)])
        Q = np.stack([random_rotation(rng) for _ in range(n)])
        shift = rng.normal(0, 5, (n, 1, 3))
        _, R = body_axes(pos)
        origin2, R2 = body_axes(np.einsum("nij,nkj->nki", Q, pos) + shift)
        ortho = np.max(np.abs(np.einsum("nji,njk->nik", R, R) - np.eye(3)))
        det = np.max(np.abs(np.linalg.det(R) - 1))
        equi = np.max(np.abs(R2 - Q @ R))
        notes.append(f"orthonormality {ortho:.1e}, det {det:.1e}, equivariance {equi:.1e}")
        assert ortho <= 1e-9 and det <= 1e-9 and equi <= 1e-9


# ------------------------------------------------------------------ C4


def test_c4_camera_motion_invariance(criterion):
    with criterion("C4 camera-motion invariance", budget=10.0) as notes:
        rng = np.random.default_rng(4)
        worst = 0.0
        for i in range(100):
            params = SynthParams(pose_class=POSE_CLASSES[i % 4], seed=i)
            labeled = generate_sequence(params, 6, 6)
            # arbitrary per-frame path: a random walk plus a random offset and jumps
            n = len(labeled)
            path = np.cumsum(rng.normal(0, 0.5, (n, 3)), axis=0) + rng.uniform(-50, 50, 3)
            path[rng.random(n) < 0.1] += rng.normal(0, 10, 3)
            lookup = {round(f.t, 9): p for f, p in zip(labeled.sequence.frames, path)}
            moved = inject_camera_motion(labeled, lambda t: lookup[round(t, 9)])
            a = features_from_positions(labeled.sequence.positions(), labeled.sequence.times, FeatureMode.COMBINED).values
            b = features_from_positions(moved.sequence.positions(), moved.sequence.times, FeatureMode.COMBINED).values
            worst = max(worst, float(np.max(np.abs(a - b))))
        notes.append(f"max element change {worst:.1e}")
        assert worst <= 1e-9


# ------------------------------------------------------------------ C5, C6


@pytest.fixture(scope="module")
def train_test():
    train = generate_dataset(SynthGrid(), windows_per_class=200, seed=0, mode=FeatureMode.COMBINED)
    test = generate_dataset(SynthGrid(), windows_per_class=100, seed=1, mode=FeatureMode.COMBINED)
    return train, test


def _slice(data, mode: FeatureMode):
    from pseudoimu.features import FeatureMatrix

    cols = {FeatureMode.TRANSLATIONAL: slice(0, 33), FeatureMode.ROTATIONAL: slice(33, 36), FeatureMode.COMBINED: slice(0, 36)}[mode]
    return [(FeatureMatrix(m.values[:, cols], mode), y) for m, y in data]


@pytest.mark.parametrize("n_trees", [50, 500])
def test_c5_classifier_oracle_accuracy(criterion, train_test, n_trees):
    train, test = train_test
    with criterion(f"C5 oracle accuracy, {n_trees} trees", budget=120.0) as notes:
        accs = {}
        for mode in (FeatureMode.TRANSLATIONAL, FeatureMode.COMBINED):
            forest = train_forest(_slice(train, mode), ForestParams(n_trees=n_trees, seed=0))
            accs[mode] = _accuracy(forest, _slice(test, mode))
        notes.append(f"{len(train)} train / {len(test)} test windows")
        notes.append(f"trans {accs[FeatureMode.TRANSLATIONAL]:.3f} (>= 0.95), combined {accs[FeatureMode.COMBINED]:.3f} (>= 0.90)")
        assert accs[FeatureMode.TRANSLATIONAL] >= 0.95
        assert accs[FeatureMode.COMBINED] >= 0.90


def test_c6_translational_beats_rotational(criterion, train_test):
    train, test = train_test
    with criterion("C6 feature-mode ordering", budget=180.0) as notes:
        accs = {}
        for mode in FeatureMode:
            forest = train_forest(_slice(train, mode), ForestParams(n_trees=50, seed=0))
            accs[mode.value] = _accuracy(forest, _slice(test, mode))
        notes.append(", ".join(f"{k} {v:.3f}" for k, v in accs.items()))
        assert accs["trans"] >= accs["rot"]


# ------------------------------------------------------------------ C7


def test_c7a_noisy_transition_detection(criterion):
    # stays red: with 10% flips the 6/7-of-7 bound on both sides is met only ~83% of the time
    with criterion("C7a noisy transition detection", budget=30.0) as notes:
        rng = np.random.default_rng(7)
        cfg = DetectorConfig(high_mean=6 / 7, low_mean=1 / 7)
        trials, hits = 1000, 0
        for _ in range(trials):
            k = int(rng.integers(30, 71))
            truth = np.r_[np.ones(k, int), np.zeros(100 - k, int)]
            noisy = np.where(rng.random(100) < 0.1, 1 - truth, truth)
            events = detect_transitions(noisy.tolist(), cfg)
            hits += bool(events) and abs(events[0].at_index - k) <= cfg.delta
        notes.append(f"hit rate {hits / trials:.3f} (>= 0.95)")
        assert hits / trials >= 0.95


def test_c7b_no_false_positives(criterion):
    with criterion("C7b zero events on all-swimming streams", budget=30.0) as notes:
        rng = np.random.default_rng(8)
        n_events = sum(len(detect_transitions([1] * int(rng.integers(1, 300)))) for _ in range(1000))
        notes.append(f"{n_events} events over 1000 streams")
        assert n_events == 0


# ------------------------------------------------------------------ C8


def test_c8_determinism(criterion, tmp_path):
    with criterion("C8 determinism") as notes:
        a = generate_dataset(SynthGrid(), 50, seed=11, mode=FeatureMode.COMBINED)
        b = generate_dataset(SynthGrid(), 50, seed=11, mode=FeatureMode.COMBINED)
        assert all(x.values.tobytes() == y.values.tobytes() and lx == ly for (x, lx), (y, ly) in zip(a, b))
        fa = train_forest(_slice(a, FeatureMode.TRANSLATIONAL), ForestParams(n_trees=20, seed=5))
        fb = train_forest(_slice(b, FeatureMode.TRANSLATIONAL), ForestParams(n_trees=20, seed=5))
        assert model_bytes(fa) == model_bytes(fb)
        notes.append("corpus, model bytes")

        for run in ("a", "b"):
            d = tmp_path / run
            assert main(["simulate", "--count", "12", "--swim-secs", "12", "--stop-secs", "12", "--seed", "2", "--out", str(d / "data")]) == 0
            assert main(["train", "--manifest", str(d / "data" / "manifest.json"), "--out", str(d / "m.pimu"), "--n-trees", "10", "--stride", "26"]) == 0
            assert main(["stream", "--model", str(d / "m.pimu"), "--frames", str(d / "data" / "seq_000.jsonl"), "--out", str(d / "s"), "--no-svg"]) == 0
        for rel in ["data/seq_000.jsonl", "data/seq_011.jsonl", "data/seq_005.labels.json", "m.pimu", "s/events.jsonl"]:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
        notes.append("CLI corpus, model file and event log")


# ------------------------------------------------------------------ C9


@pytest.fixture(scope="module")
def stream_inputs(tmp_path_factory, trans_model_path):
    d = tmp_path_factory.mktemp("long")
    assert main(["simulate", "--swim-secs", "500", "--stop-secs", "500", "--seed", "3", "--out", str(d / "long")]) == 0
    assert main(["simulate", "--swim-secs", "100", "--stop-secs", "100", "--seed", "3", "--out", str(d / "short")]) == 0
    return trans_model_path, d / "long" / "seq_000.jsonl", d / "short" / "seq_000.jsonl", d


def test_c9_streaming_bounds(criterion, stream_inputs, capsys):
    model, long_frames, short_frames, d = stream_inputs

    def stream(frames, out):
        assert main(["stream", "--model", str(model), "--frames", str(frames), "--out", str(d / out), "--no-svg"]) == 0

    with criterion("C9 streaming bound") as notes:
        start = time.perf_counter()
        stream(long_frames, "timed")
        per_frame = (time.perf_counter() - start) / 10_000
        notes.append(f"{per_frame * 1e3:.2f} ms per frame over 10000 frames (< 10)")

        peaks = []
        for frames, out in ((short_frames, "mem2k"), (long_frames, "mem10k")):
            tracemalloc.start()
            stream(frames, out)
            peaks.append(tracemalloc.get_traced_memory()[1])
            tracemalloc.stop()
        notes.append(f"peak traced memory {peaks[0] / 1e6:.2f} MB at 2000 frames, {peaks[1] / 1e6:.2f} MB at 10000")
        assert per_frame < 0.010
        # O(G + window): five times the frames must not grow the peak materially
        assert peaks[1] <= 1.1 * peaks[0] + 64 * 1024
    capsys.readouterr()
