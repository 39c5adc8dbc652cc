"""Command-line entry point: ``pimu simulate | train | eval | stream``.

Exit codes: 0 success, 2 validation error, 3 data or IO error, 4 model mismatch.
The log level comes from the ``PIMU_LOG`` environment variable (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .dataset_io import (
    LabelPolicy,
    SplitSpec,
    WindowSpec,
    load_manifest_sequences,
    parse_frame_lines,
    positions_of,
    read_manifest,
    split,
    window_dataset,
    write_frames,
    write_labels,
    write_manifest,
)
from .detector import DetectorConfig, write_event
from .errors import CorruptFile, LayoutMismatch, PimuError, ShapeMismatch, VersionMismatch
from .features import FeatureMatrix, FeatureMode, feature_dims, features_from_positions
from .stream import PREDICTION_COLUMNS, StreamEngine, write_prediction_row, write_timeline_svg
from .synth import POSE_CLASSES, SynthGrid, SynthParams, generate_sequence
from .tsf import ForestParams, WindowClassifier, load_model, save_model, train_forest

log = logging.getLogger("pseudoimu")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DATA = 3
EXIT_MODEL = 4
MODEL_ERRORS = (LayoutMismatch, ShapeMismatch, VersionMismatch, CorruptFile)


@dataclass(frozen=True)
class RunConfig:
    """Validated settings shared by the subcommands."""

    mode: FeatureMode = FeatureMode.COMBINED
    window: WindowSpec = field(default_factory=WindowSpec)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    model: Path | None = None
    inputs: tuple[Path, ...] = ()
    out: Path | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", FeatureMode(self.mode))
        paths = [p for p in (self.model, *self.inputs, self.out) if p is not None]
        resolved = [Path(p).resolve() for p in paths if str(p) != "-"]
        if len(set(resolved)) != len(resolved):
            raise ValueError("input, model and output paths must be distinct")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")

    def to_record(self) -> dict:
        return {
            "mode": self.mode.value,
            "window": {"length": self.window.length, "stride": self.window.stride, "policy": self.window.policy.value},
            "detector": {
                "g": self.detector.g,
                "delta": self.detector.delta,
                "high_mean": self.detector.high_mean,
                "low_mean": self.detector.low_mean,
                "detect_recovery": self.detector.detect_recovery,
            },
            "model": str(self.model) if self.model else None,
            "inputs": [str(p) for p in self.inputs],
            "out": str(self.out) if self.out else None,
            "seed": self.seed,
        }


def _sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _run_manifest(command: str, config: RunConfig, **extra) -> dict:
    return {"tool": "pseudoimu", "version": __version__, "command": command, "config": config.to_record(), **extra}


# ---------------------------------------------------------------- simulate


def cmd_simulate(args: argparse.Namespace) -> int:
    out = Path(args.out)
    config = RunConfig(mode=args.mode or FeatureMode.COMBINED, out=out, seed=args.seed)
    out.mkdir(parents=True, exist_ok=True)
    grid = SynthGrid()
    combos = grid.combos()
    children = np.random.SeedSequence(config.seed).spawn(args.count)
    items = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        if args.count == 1:
            pose, amp, freq, sink = POSE_CLASSES[0], 0.3, 1.0, 0.05
            seed = config.seed
        else:
            pose, amp, freq, sink = combos[int(rng.integers(len(combos)))]
            seed = int(rng.integers(2**63))
        params = SynthParams(
            pose_class=args.pose or pose,
            swim_amp=amp if args.amp is None else args.amp,
            swim_freq=freq if args.freq is None else args.freq,
            jitter_sigma=args.jitter,
            sink_rate=sink if args.sink_rate is None else args.sink_rate,
            fps=args.fps,
            seed=seed,
            roll_gain=args.roll_gain,
        )
        labeled = generate_sequence(params, args.swim_secs, args.stop_secs)
        stem = f"seq_{i:03d}"
        write_frames(labeled.sequence, out / f"{stem}.jsonl")
        write_labels(labeled, out / f"{stem}.labels.json")
        items.append(
            {
                "frames": f"{stem}.jsonl",
                "labels": f"{stem}.labels.json",
                "n_frames": len(labeled),
                "transition_index": labeled.transition_index,
                "params": params.__dict__,
            }
        )
        log.info("wrote %s (%d frames, transition at %d)", stem, len(labeled), labeled.transition_index)
    manifest = _run_manifest(
        "simulate",
        config,
        seed_defaulted=args.seed_defaulted,
        swim_secs=args.swim_secs,
        stop_secs=args.stop_secs,
        items=items,
    )
    if args.mode:
        manifest["feature_mode"] = FeatureMode(args.mode).value
    write_manifest(out / "manifest.json", manifest)
    print(f"wrote {len(items)} sequence(s) to {out}")
    return EXIT_OK


# ------------------------------------------------------------------- train


def build_dataset(manifest: str | Path, mode: FeatureMode, window: WindowSpec) -> list[tuple[FeatureMatrix, int]]:
    """Window every labelled sequence of a manifest and featurize the windows."""
    dataset = []
    skipped = 0
    for labeled in load_manifest_sequences(manifest):
        for frames, label in window_dataset(labeled, window):
            positions, times = positions_of(frames)
            try:
                dataset.append((features_from_positions(positions, times, mode), label))
            except PimuError as exc:
                skipped += 1
                log.debug("skipping window at t=%s: %s", times[0], exc)
    if skipped:
        log.warning("skipped %d window(s) that could not be featurized", skipped)
    return dataset


def _manifest_mode(path: str | Path) -> FeatureMode | None:
    declared = read_manifest(path).get("feature_mode")
    return FeatureMode(declared) if declared else None


def cmd_train(args: argparse.Namespace) -> int:
    declared = _manifest_mode(args.manifest)
    mode = FeatureMode(args.mode) if args.mode else (declared or FeatureMode.COMBINED)
    if declared is not None and declared is not mode:
        raise LayoutMismatch(f"manifest holds {declared.value} data but --mode is {mode.value}")
    config = RunConfig(
        mode=mode,
        window=WindowSpec(args.window_len, args.stride, LabelPolicy.STRICT),
        inputs=(Path(args.manifest),),
        out=Path(args.out),
        seed=args.seed,
    )
    dataset = build_dataset(args.manifest, config.mode, config.window)
    train_set, val_set, test_set = split(dataset, SplitSpec(seed=config.seed))
    forest = train_forest(train_set, ForestParams(n_trees=args.n_trees, seed=config.seed, n_jobs=args.jobs))
    save_model(forest, config.out)

    metrics = {
        "n_windows": len(dataset),
        "n_train": len(train_set),
        "n_val": len(val_set),
        "n_test": len(test_set),
        "val_accuracy": evaluate(forest, val_set)["accuracy"] if val_set else None,
        "test_accuracy": evaluate(forest, test_set)["accuracy"] if test_set else None,
    }
    metrics_path = config.out.with_suffix(".metrics.json")
    metrics_path.write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    write_manifest(
        config.out.with_suffix(".manifest.json"),
        _run_manifest(
            "train",
            config,
            n_trees=args.n_trees,
            model_sha256=_sha256(config.out),
            dataset_hash=forest.dataset_hash,
            metrics=metrics.copy(),
            items=[],
        ),
    )
    print(f"val accuracy: {metrics['val_accuracy']:.4f} ({metrics['n_val']} windows)")
    print(f"model written to {config.out}")
    return EXIT_OK


# -------------------------------------------------------------------- eval


def evaluate(classifier: WindowClassifier, dataset: Sequence[tuple[FeatureMatrix, int]]) -> dict:
    """Accuracy and 2x2 confusion matrix; rows are true labels, columns predictions."""
    confusion = np.zeros((2, 2), dtype=int)
    predict_many = getattr(classifier, "predict_many", None)
    matrices = [m for m, _ in dataset]
    preds = predict_many(matrices) if predict_many else [classifier.predict(m) for m in matrices]
    for (_, truth), pred in zip(dataset, preds):
        confusion[truth, pred.label] += 1
    total = int(confusion.sum())
    return {
        "accuracy": float(np.trace(confusion)) / total if total else float("nan"),
        "confusion": confusion.tolist(),
        "n": total,
    }


def comparison_table(rows: Sequence[tuple[str, FeatureMode, float]], n_steps: int = 50) -> tuple[list[str], list[list[str]]]:
    """One row per model with its accuracy under its feature-mode column."""
    header = ["model"] + [f"{m.value} ({n_steps}x{feature_dims(m)})" for m in FeatureMode]
    body = []
    for name, mode, acc in rows:
        body.append([name] + [f"{acc:.4f}" if m is mode else "" for m in FeatureMode])
    return header, body


def format_table(header: list[str], body: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in [header, *body]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def cmd_eval(args: argparse.Namespace) -> int:
    out = Path(args.out)
    config = RunConfig(
        window=WindowSpec(args.window_len, args.stride, LabelPolicy.STRICT),
        inputs=(Path(args.manifest), *map(Path, args.model)),
        out=out,
    )
    out.mkdir(parents=True, exist_ok=True)
    cache: dict[FeatureMode, list] = {}
    results = []
    for path in args.model:
        forest = load_model(path)
        mode = forest.mode
        if forest.layout.n_steps + 2 != config.window.length:
            raise LayoutMismatch(f"{path}: model expects {forest.layout.n_steps + 2}-frame windows, not {config.window.length}")
        if mode not in cache:
            cache[mode] = build_dataset(args.manifest, mode, config.window)
        metrics = evaluate(forest, cache[mode])
        results.append({"model": Path(path).stem, "path": str(path), "mode": mode.value, **metrics})

    n_steps = config.window.length - 2
    header, body = comparison_table([(r["model"], FeatureMode(r["mode"]), r["accuracy"]) for r in results], n_steps)
    lines = ["Classification accuracy by feature mode", "", format_table(header, body), ""]
    for r in results:
        (tn, fp), (fn, tp) = r["confusion"]
        lines += [
            f"{r['model']} ({r['mode']}): accuracy {r['accuracy']:.4f} on {r['n']} windows",
            "                 pred stop  pred swim",
            f"  true stop      {tn:9d}  {fp:9d}",
            f"  true swim      {fn:9d}  {tp:9d}",
            "",
        ]
    report = "\n".join(lines)
    (out / "report.txt").write_text(report)
    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(body)
    write_manifest(out / "manifest.json", _run_manifest("eval", config, results=results, items=[]))
    print(report)
    return EXIT_OK


# ------------------------------------------------------------------ stream


def cmd_stream(args: argparse.Namespace) -> int:
    out = Path(args.out)
    config = RunConfig(
        mode=args.mode or FeatureMode.COMBINED,
        window=WindowSpec(args.window_len or 52, args.stride),
        detector=DetectorConfig(args.g, args.delta, args.high_mean, args.low_mean, args.detect_recovery),
        model=Path(args.model),
        inputs=(Path(args.frames),),
        out=out,
    )
    forest = load_model(config.model, mode=FeatureMode(args.mode) if args.mode else None)
    window_len = forest.layout.n_steps + 2
    if args.window_len is not None and args.window_len != window_len:
        raise LayoutMismatch(f"model expects {window_len}-frame windows, --window-len is {args.window_len}")
    config = replace(config, mode=forest.mode, window=WindowSpec(window_len, args.stride))
    out.mkdir(parents=True, exist_ok=True)

    engine = StreamEngine(forest, forest.mode, window_len, config.window.stride, config.detector, args.max_gap)
    pred_path, events_path = out / "predictions.csv", out / "events.jsonl"
    n_frames = n_events = 0

    def counted(frames):
        nonlocal n_frames
        for f in frames:
            n_frames += 1
            yield f

    source = sys.stdin if args.frames == "-" else open(args.frames)
    try:
        with open(pred_path, "w", newline="") as pred_fh, open(events_path, "w") as ev_fh:
            writer = csv.writer(pred_fh)
            writer.writerow(PREDICTION_COLUMNS)
            for step in engine.run(counted(parse_frame_lines(source))):
                write_prediction_row(writer, step)
                log.debug("%d, %d, %.3f, %.6f", step.index, step.prediction.label, step.prediction.confidence, step.elapsed)
                if step.event is not None:
                    n_events += 1
                    write_event(ev_fh, step.event)
                    print(json.dumps(step.event.to_record()))
    finally:
        if source is not sys.stdin:
            source.close()

    outputs = {"predictions": pred_path.name, "events": events_path.name}
    if not args.no_svg:
        write_timeline_svg(pred_path, events_path, out / "timeline.svg", delta=config.detector.delta)
        outputs["timeline"] = "timeline.svg"
    summary = {
        "n_frames": n_frames,
        "n_predictions": engine.n_predictions,
        "n_rejected": engine.n_rejected,
        "n_events": n_events,
    }
    write_manifest(
        out / "manifest.json",
        _run_manifest("stream", config, model_sha256=_sha256(config.model), outputs=outputs, summary=summary, items=[]),
    )
    log.info("stream done: %s", summary)
    print(f"{engine.n_predictions} predictions, {n_events} event(s) from {n_frames} frames")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _nonneg_float(text: str) -> float:
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _pos_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return value


def _pos_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pimu", description="Pseudo-inertial swim/stop detection from 3D keypoints.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    modes = [m.value for m in FeatureMode]

    p = sub.add_parser("simulate", help="write synthetic labelled keypoint sequences")
    p.add_argument("--pose", choices=POSE_CLASSES, help="posture (default: prone_down, or varied when --count > 1)")
    p.add_argument("--swim-secs", type=_nonneg_float, required=True)
    p.add_argument("--stop-secs", type=_nonneg_float, required=True)
    p.add_argument("--seed", type=_nonneg_int, default=None)
    p.add_argument("--count", type=_pos_int, default=1, help="number of sequences")
    p.add_argument("--amp", type=_nonneg_float, help="kick amplitude")
    p.add_argument("--freq", type=_pos_float, help="kick frequency in Hz")
    p.add_argument("--jitter", type=_nonneg_float, default=0.01, help="keypoint noise sigma")
    p.add_argument("--sink-rate", type=float, help="drift along gravity after stopping, units/s")
    p.add_argument("--roll-gain", type=float, default=0.4)
    p.add_argument("--fps", type=_pos_float, default=10.0)
    p.add_argument("--mode", choices=modes, help="feature mode to record in the manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a time-series forest from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=modes)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--n-trees", type=_pos_int, default=500)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--window-len", type=_pos_int, default=52)
    p.add_argument("--stride", type=_pos_int, default=52)
    p.add_argument("--jobs", type=_pos_int, default=1, help="training threads")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score one or more models on a labelled manifest")
    p.add_argument("--model", action="append", required=True, help="model file; repeat to compare modes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--window-len", type=_pos_int, default=52)
    p.add_argument("--stride", type=_pos_int, default=52)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stream", help="run the online detector over a frame stream")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", required=True, help="JSONL frame file, or - for stdin")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mode", choices=modes, help="fail unless the model uses this mode")
    p.add_argument("--window-len", type=_pos_int)
    p.add_argument("--stride", type=_pos_int, default=1)
    p.add_argument("--g", type=_pos_int, default=15)
    p.add_argument("--delta", type=_pos_int, default=7)
    p.add_argument("--high-mean", type=float, default=1.0)
    p.add_argument("--low-mean", type=float, default=0.0)
    p.add_argument("--detect-recovery", action="store_true", help="also report stop-to-swim events")
    p.add_argument("--max-gap", type=_nonneg_int, default=2, help="longest missing-joint run to interpolate")
    p.add_argument("--no-svg", action="store_true")
    p.set_defaults(func=cmd_stream)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("PIMU_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    if getattr(args, "command", None) == "simulate":
        args.seed_defaulted = args.seed is None
        if args.seed is None:
            args.seed = 0
    try:
        return args.func(args)
    except MODEL_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (PimuError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
