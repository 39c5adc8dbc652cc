"""Time series forest over pseudo-IMU windows.

Each tree node draws about sqrt(N) interval lengths times sqrt(N) start
positions, pairs every interval with a random feature column, and scores the
mean, standard deviation and least-squares slope of the interval as split
features. Splits are ranked by entrance gain: information gain in bits plus a
tiny margin term that only breaks ties between equal-gain thresholds.

Interval statistics are evaluated from per-window prefix sums so that a whole
forest can be applied to a window in one vectorised pass.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Protocol, Sequence, Union

import numpy as np

from .errors import CorruptFile, DegenerateDataset, LayoutMismatch, ShapeMismatch, VersionMismatch
from .features import FeatureMatrix, FeatureMode, column_names

SWIMMING = 1
NOT_SWIMMING = 0
LABEL_NAMES = {SWIMMING: "swimming", NOT_SWIMMING: "not_swimming"}

MAGIC = b"PIMU"
FORMAT_VERSION = 1
MARGIN_WEIGHT = 1e-6
MIN_GAIN = 1e-12


class Stat(IntEnum):
    MEAN = 0
    STD = 1
    SLOPE = 2


@dataclass(frozen=True)
class IntervalFeature:
    column: int
    start: int
    end: int
    stat: Stat

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"invalid interval [{self.start}, {self.end})")
        object.__setattr__(self, "stat", Stat(self.stat))


@dataclass(frozen=True)
class Prediction:
    label: int
    confidence: float

    @property
    def name(self) -> str:
        return LABEL_NAMES[self.label]


class WindowClassifier(Protocol):
    """Anything that maps a feature window to a swimming / not-swimming prediction."""

    def predict(self, matrix: FeatureMatrix) -> Prediction: ...


# ---------------------------------------------------------------- statistics


def interval_stats(matrix: FeatureMatrix | np.ndarray, f: IntervalFeature) -> float:
    """Reference (two-pass) interval statistic; population std, slope per time step."""
    values = matrix.values if isinstance(matrix, FeatureMatrix) else np.asarray(matrix, dtype=np.float64)
    if f.end > values.shape[0] or f.column >= values.shape[1]:
        raise ValueError(f"{f} does not fit a matrix of shape {values.shape}")
    x = values[f.start : f.end, f.column]
    if f.stat is Stat.MEAN:
        return float(x.mean())
    if f.stat is Stat.STD:
        return float(x.std())
    if x.size < 2:
        return 0.0
    t = np.arange(x.size, dtype=np.float64)
    t -= t.mean()
    return float(np.dot(t, x - x.mean()) / np.dot(t, t))


def _prefix_sums(X: np.ndarray) -> np.ndarray:
    """Stack of cumulative sums of x, t*x and x**2 with a leading zero row.

    X has shape (n, N, D); the result has shape (3, n, N + 1, D).
    """
    n, N, D = X.shape
    t = np.arange(N, dtype=np.float64)[None, :, None]
    P = np.zeros((3, n, N + 1, D))
    np.cumsum(X, axis=1, out=P[0, :, 1:])
    np.cumsum(X * t, axis=1, out=P[1, :, 1:])
    np.cumsum(X * X, axis=1, out=P[2, :, 1:])
    return P


def _interval_moments(P, rows, col, start, end):
    """mean, std, slope arrays of shape (len(rows), len(col))."""
    r = rows[:, None]
    s0 = P[0, r, end, col] - P[0, r, start, col]
    s1 = P[1, r, end, col] - P[1, r, start, col]
    s2 = P[2, r, end, col] - P[2, r, start, col]
    L = (end - start).astype(np.float64)
    mean = s0 / L
    std = np.sqrt(np.maximum(s2 / L - mean * mean, 0.0))
    tbar = start + (L - 1.0) / 2.0
    stt = L * (L * L - 1.0) / 12.0
    with np.errstate(invalid="ignore", divide="ignore"):
        slope = np.where(stt > 0, (s1 - tbar * s0) / np.where(stt > 0, stt, 1.0), 0.0)
    return mean, std, slope


# ------------------------------------------------------------------ entropy


def _entropy_bits(pos, total):
    """Binary entropy of pos/total, elementwise; 0 where total == 0."""
    pos = np.asarray(pos, dtype=np.float64)
    total = np.asarray(total, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(total > 0, pos / np.where(total > 0, total, 1.0), 0.0)
        q = 1.0 - p
        h = -(np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0) + np.where(q > 0, q * np.log2(np.where(q > 0, q, 1.0)), 0.0))
    return h


def information_gain(labels_left: Sequence[int], labels_right: Sequence[int]) -> float:
    left = np.asarray(labels_left)
    right = np.asarray(labels_right)
    nl, nr = left.size, right.size
    n = nl + nr
    parent = _entropy_bits((left == SWIMMING).sum() + (right == SWIMMING).sum(), n)
    child = (nl * _entropy_bits((left == SWIMMING).sum(), nl) + nr * _entropy_bits((right == SWIMMING).sum(), nr)) / n
    return float(parent - child)


def entrance_gain(labels_left: Sequence[int], labels_right: Sequence[int], margin: float, alpha: float = MARGIN_WEIGHT) -> float:
    """Information gain (bits) plus ``alpha * margin``.

    During training ``alpha`` is ``MARGIN_WEIGHT / value_range`` at the node,
    which bounds the margin term by MARGIN_WEIGHT bits.
    """
    return information_gain(labels_left, labels_right) + alpha * margin


# ------------------------------------------------------------------- model


@dataclass(frozen=True)
class Leaf:
    counts: tuple[int, int]  # (not_swimming, swimming)

    @property
    def vote(self) -> int:
        # ties go to not_swimming
        return SWIMMING if self.counts[1] > self.counts[0] else NOT_SWIMMING


@dataclass(frozen=True)
class Split:
    feature: IntervalFeature
    threshold: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Leaf, Split]


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 500
    seed: int = 0
    thresholds_per_feature: int = 20
    min_leaf: int = 1
    min_interval: int = 3
    bootstrap: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.thresholds_per_feature < 1 or self.min_leaf < 1 or self.min_interval < 1:
            raise ValueError("thresholds_per_feature, min_leaf and min_interval must be >= 1")


@dataclass(frozen=True)
class Layout:
    mode: FeatureMode
    n_steps: int
    n_columns: int
    columns: tuple[str, ...]

    @classmethod
    def of(cls, matrix: FeatureMatrix) -> "Layout":
        n, d = matrix.shape
        return cls(matrix.mode, n, d, matrix.columns)

    def check(self, matrix: FeatureMatrix) -> None:
        if matrix.mode != self.mode or matrix.shape != (self.n_steps, self.n_columns):
            raise LayoutMismatch(
                f"model expects {self.n_steps}x{self.n_columns} ({self.mode.value}) windows, "
                f"got {matrix.shape[0]}x{matrix.shape[1]} ({matrix.mode.value})"
            )


# per-node arrays, preorder; leaves have left == right == -1
_NODE_FIELDS = ("column", "start", "end", "stat", "threshold", "left", "right", "n0", "n1")


@dataclass(eq=False)
class Forest:
    layout: Layout
    params: ForestParams
    dataset_hash: str
    roots: np.ndarray
    nodes: dict[str, np.ndarray]
    _compiled: dict | None = field(default=None, repr=False)

    @property
    def n_trees(self) -> int:
        return int(self.roots.size)

    @property
    def mode(self) -> FeatureMode:
        return self.layout.mode

    def tree(self, i: int) -> TreeNode:
        """Nested Leaf/Split view of tree ``i``."""
        nd = self.nodes

        def build(k: int) -> TreeNode:
            if nd["left"][k] < 0:
                return Leaf((int(nd["n0"][k]), int(nd["n1"][k])))
            feat = IntervalFeature(int(nd["column"][k]), int(nd["start"][k]), int(nd["end"][k]), Stat(int(nd["stat"][k])))
            return Split(feat, float(nd["threshold"][k]), build(int(nd["left"][k])), build(int(nd["right"][k])))

        return build(int(self.roots[i]))

    def _compile(self) -> dict:
        if self._compiled is None:
            nd = self.nodes
            internal = nd["left"] >= 0
            keys = np.stack([nd["column"], nd["start"], nd["end"], nd["stat"]], axis=1)
            uniq, inverse = np.unique(keys[internal], axis=0, return_inverse=True)
            fidx = np.zeros(internal.size, dtype=np.intp)
            fidx[internal] = inverse.ravel()
            leaf_vote = (nd["n1"] > nd["n0"]).astype(np.int8)
            self._compiled = {
                "internal": internal,
                "fidx": fidx,
                "uniq": uniq.astype(np.intp),
                "threshold": nd["threshold"],
                "left": nd["left"].astype(np.intp),
                "right": nd["right"].astype(np.intp),
                "vote": leaf_vote,
            }
        return self._compiled

    def swim_votes(self, X: np.ndarray) -> np.ndarray:
        """Number of trees voting swimming for each window in X (m, N, D)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        if X.shape[1:] != (self.layout.n_steps, self.layout.n_columns):
            raise LayoutMismatch(f"expected windows of shape {(self.layout.n_steps, self.layout.n_columns)}, got {X.shape[1:]}")
        c = self._compile()
        m = X.shape[0]
        if c["uniq"].size:
            P = _prefix_sums(X)
            u = c["uniq"]
            mean, std, slope = _interval_moments(P, np.arange(m), u[:, 0], u[:, 1], u[:, 2])
            values = np.where(u[:, 3] == Stat.MEAN, mean, np.where(u[:, 3] == Stat.STD, std, slope))
        else:
            values = np.zeros((m, 1))
        cur = np.broadcast_to(self.roots.astype(np.intp), (m, self.n_trees)).copy()
        rows = np.arange(m)[:, None]
        while True:
            active = c["internal"][cur]
            if not active.any():
                break
            v = values[rows, c["fidx"][cur]]
            go_left = v <= c["threshold"][cur]
            nxt = np.where(go_left, c["left"][cur], c["right"][cur])
            cur = np.where(active, nxt, cur)
        return c["vote"][cur].sum(axis=1).astype(np.int64)

    def predict(self, matrix: FeatureMatrix) -> Prediction:
        self.layout.check(matrix)
        swim = int(self.swim_votes(matrix.values[None])[0])
        return _vote_to_prediction(swim, self.n_trees)

    def predict_many(self, matrices: Sequence[FeatureMatrix]) -> list[Prediction]:
        if not matrices:
            return []
        for m in matrices:
            self.layout.check(m)
        votes = self.swim_votes(np.stack([m.values for m in matrices]))
        return [_vote_to_prediction(int(v), self.n_trees) for v in votes]


def _vote_to_prediction(swim_votes: int, n_trees: int) -> Prediction:
    if 2 * swim_votes > n_trees:
        return Prediction(SWIMMING, swim_votes / n_trees)
    return Prediction(NOT_SWIMMING, (n_trees - swim_votes) / n_trees)


def predict(forest: Forest, matrix: FeatureMatrix) -> Prediction:
    return forest.predict(matrix)


# ---------------------------------------------------------------- training


def dataset_hash(X: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(str(X.shape).encode())
    h.update(np.ascontiguousarray(X, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(y, dtype=np.int8).tobytes())
    return h.hexdigest()


def _stack_dataset(dataset: Sequence[tuple[FeatureMatrix, int]]):
    if len(dataset) < 2:
        raise DegenerateDataset("need at least two examples")
    first = dataset[0][0]
    layout = Layout.of(first)
    for m, _ in dataset:
        if m.mode != layout.mode or m.shape != first.shape:
            raise ShapeMismatch(f"mixed window layouts: {first.shape}/{first.mode.value} vs {m.shape}/{m.mode.value}")
    y = np.array([int(lbl) for _, lbl in dataset], dtype=np.int8)
    if not set(np.unique(y)) <= {NOT_SWIMMING, SWIMMING}:
        raise ValueError("labels must be 0 (not swimming) or 1 (swimming)")
    if np.unique(y).size < 2:
        raise DegenerateDataset("training data contains a single class")
    X = np.stack([m.values for m, _ in dataset])
    return X, y, layout


def _candidate_splits(vals: np.ndarray, labels: np.ndarray, levels: np.ndarray):
    """Quantile thresholds and the resulting left-branch statistics.

    ``vals`` is (n, F). Returns arrays of shape (F, Q): thresholds (linear
    interpolation between order statistics), left counts, left swimming
    counts and margins (distance to the nearest training value), plus the
    (F,) value span. Left counts equal ``(vals[:, f] <= thr[f, q]).sum()``
    exactly, ties included.
    """
    V = np.ascontiguousarray(vals.T)
    F, n = V.shape
    order = np.argsort(V, axis=1, kind="stable")
    S = np.take_along_axis(V, order, axis=1)
    cum_pos = np.zeros((F, n + 1))
    np.cumsum(labels[order], axis=1, out=cum_pos[:, 1:])

    pos = levels * (n - 1)
    lo_idx = np.minimum(np.floor(pos).astype(np.intp), n - 2) if n > 1 else np.zeros(levels.size, dtype=np.intp)
    frac = pos - lo_idx
    hi_idx = np.minimum(lo_idx + 1, n - 1)
    a = S[:, lo_idx]
    b = S[:, hi_idx]
    thr = np.minimum(a + (b - a) * frac, b)

    # index of the last element of each tie group
    ends = np.where(np.concatenate([S[:, :-1] != S[:, 1:], np.ones((F, 1), dtype=bool)], axis=1), np.arange(n), n)
    ends = np.minimum.accumulate(ends[:, ::-1], axis=1)[:, ::-1]
    n_left = np.where(b <= thr, ends[:, hi_idx] + 1, lo_idx + 1)
    pos_left = np.take_along_axis(cum_pos, n_left, axis=1)
    below = np.take_along_axis(S, n_left - 1, axis=1)
    above = np.take_along_axis(S, np.minimum(n_left, n - 1), axis=1)
    margin = np.where(n_left < n, np.minimum(thr - below, above - thr), thr - below)
    return thr, n_left, pos_left, margin, S[:, -1] - S[:, 0]


def _grow_tree(P, y, N, D, params: ForestParams, rng: np.random.Generator):
    n = y.size
    rows = rng.integers(0, n, n) if params.bootstrap else np.arange(n)
    levels = np.arange(1, params.thresholds_per_feature + 1) / (params.thresholds_per_feature + 1)
    k = max(1, int(math.isqrt(N)))
    min_len = min(params.min_interval, N)
    out = {f: [] for f in _NODE_FIELDS}

    def new_node():
        for f in _NODE_FIELDS:
            out[f].append(0)
        idx = len(out["left"]) - 1
        out["left"][idx] = out["right"][idx] = -1
        out["threshold"][idx] = 0.0
        return idx

    root = new_node()
    stack = [(root, rows)]
    while stack:
        node, idx = stack.pop()
        labels = y[idx]
        n_pos = int(labels.sum())
        n_node = idx.size
        out["n0"][node] = n_node - n_pos
        out["n1"][node] = n_pos
        if n_pos == 0 or n_pos == n_node or n_node < 2 * params.min_leaf:
            continue

        lengths = rng.integers(min_len, N + 1, k)
        starts = np.concatenate([rng.integers(0, N - L + 1, k) for L in lengths])
        ends = starts + np.repeat(lengths, k)
        cols = rng.integers(0, D, starts.size)
        mean, std, slope = _interval_moments(P, idx, cols, starts, ends)
        vals = np.concatenate([mean, std, slope], axis=1)  # (n_node, 3 * k * k)
        stat_of = np.repeat(np.arange(3), starts.size)

        thr, n_left, pos_left, margin, span = _candidate_splits(vals, labels, levels)
        n_right = n_node - n_left
        pos_right = n_pos - pos_left
        gain = _entropy_bits(n_pos, n_node) - (
            n_left * _entropy_bits(pos_left, n_left) + n_right * _entropy_bits(pos_right, n_right)
        ) / n_node
        valid = (n_left >= params.min_leaf) & (n_right >= params.min_leaf)
        if not valid.any():
            continue
        alpha = np.where(span > 0, MARGIN_WEIGHT / np.where(span > 0, span, 1.0), 0.0)
        score = np.where(valid, gain + alpha[:, None] * margin, -np.inf)
        f, q = np.unravel_index(int(np.argmax(score)), score.shape)
        if not gain[f, q] > MIN_GAIN:
            continue

        c = f % starts.size
        out["column"][node] = int(cols[c])
        out["start"][node] = int(starts[c])
        out["end"][node] = int(ends[c])
        out["stat"][node] = int(stat_of[f])
        out["threshold"][node] = float(thr[f, q])
        go_left = vals[:, f] <= thr[f, q]
        left, right = new_node(), new_node()
        out["left"][node], out["right"][node] = left, right
        # push right first so the left subtree is numbered first (preorder)
        stack.append((right, idx[~go_left]))
        stack.append((left, idx[go_left]))
    return out


def train_forest(dataset: Sequence[tuple[FeatureMatrix, int]], params: ForestParams | None = None, **overrides) -> Forest:
    """Grow a time series forest on labelled windows.

    Each tree draws from its own generator seeded with ``(seed, tree_index)``,
    so the result does not depend on ``n_jobs``.
    """
    params = params or ForestParams()
    if overrides:
        params = ForestParams(**{**asdict(params), **overrides})
    X, y, layout = _stack_dataset(dataset)
    _, N, D = X.shape
    P = _prefix_sums(X)

    def grow(i: int):
        return _grow_tree(P, y, N, D, params, np.random.default_rng([params.seed, i]))

    if params.n_jobs > 1:
        with ThreadPoolExecutor(params.n_jobs) as pool:
            trees = list(pool.map(grow, range(params.n_trees)))
    else:
        trees = [grow(i) for i in range(params.n_trees)]

    roots = []
    merged = {f: [] for f in _NODE_FIELDS}
    offset = 0
    for t in trees:
        roots.append(offset)
        for f in _NODE_FIELDS:
            vals = t[f]
            if f in ("left", "right"):
                vals = [v + offset if v >= 0 else -1 for v in vals]
            merged[f].extend(vals)
        offset += len(t["left"])
    return Forest(layout, params, dataset_hash(X, y), np.array(roots, dtype=np.int64), _as_arrays(merged))


def _as_arrays(nodes: dict) -> dict[str, np.ndarray]:
    out = {}
    for f in _NODE_FIELDS:
        dtype = np.float64 if f == "threshold" else np.int64
        out[f] = np.asarray(nodes[f], dtype=dtype)
    return out


# ----------------------------------------------------------------- baseline


def energy(matrix: FeatureMatrix) -> float:
    """Mean absolute translational acceleration (all columns for rotational-only windows)."""
    block = matrix.translational if matrix.mode.has_translation else matrix.values
    return float(np.mean(np.abs(block)))


def baseline_energy_classify(matrix: FeatureMatrix, threshold: float) -> Prediction:
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    return Prediction(SWIMMING if energy(matrix) > threshold else NOT_SWIMMING, 1.0)


def fit_energy_threshold(dataset: Sequence[tuple[FeatureMatrix, int]]) -> float:
    """Energy threshold with the best training accuracy (midpoints between sorted energies)."""
    e = np.array([energy(m) for m, _ in dataset])
    y = np.array([lbl for _, lbl in dataset])
    order = np.sort(np.unique(e))
    candidates = np.concatenate([[0.0], (order[:-1] + order[1:]) / 2.0, [order[-1]]])
    acc = [np.mean((e > c).astype(int) == y) for c in candidates]
    return float(candidates[int(np.argmax(acc))])


@dataclass(frozen=True)
class EnergyClassifier:
    threshold: float

    def predict(self, matrix: FeatureMatrix) -> Prediction:
        return baseline_energy_classify(matrix, self.threshold)


# ------------------------------------------------------------ persistence


def _header(forest: Forest) -> dict:
    lay = forest.layout
    return {
        "mode": lay.mode.value,
        "N": lay.n_steps,
        "D": lay.n_columns,
        "columns": list(lay.columns),
        "n_trees": forest.n_trees,
        "seed": forest.params.seed,
        "params": {k: v for k, v in asdict(forest.params).items() if k != "n_jobs"},
        "dataset_hash": forest.dataset_hash,
    }


def model_bytes(forest: Forest) -> bytes:
    header = json.dumps(_header(forest), sort_keys=True, separators=(",", ":")).encode()
    body = io.BytesIO()
    np.savez(body, roots=forest.roots, **forest.nodes)
    return MAGIC + struct.pack(">HI", FORMAT_VERSION, len(header)) + header + body.getvalue()


def save_model(forest: Forest, path: str | Path) -> None:
    Path(path).write_bytes(model_bytes(forest))


def load_model(path: str | Path, mode: FeatureMode | None = None, n_steps: int | None = None) -> Forest:
    """Read a model file; optionally assert the expected feature layout."""
    blob = Path(path).read_bytes()
    if len(blob) < 10 or blob[:4] != MAGIC:
        raise CorruptFile(f"{path}: not a pseudo-IMU model file")
    version, hlen = struct.unpack(">HI", blob[4:10])
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    try:
        header = json.loads(blob[10 : 10 + hlen].decode())
        with np.load(io.BytesIO(blob[10 + hlen :]), allow_pickle=False) as npz:
            roots = npz["roots"]
            nodes = {f: npz[f] for f in _NODE_FIELDS}
        file_mode = FeatureMode(header["mode"])
        layout = Layout(file_mode, int(header["N"]), int(header["D"]), tuple(header["columns"]))
        params = ForestParams(**header["params"])
    except (ValueError, KeyError, TypeError, OSError, UnicodeDecodeError, zipfile.BadZipFile, EOFError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    if layout.columns != column_names(file_mode) or layout.n_columns != len(layout.columns):
        raise LayoutMismatch(f"{path}: column layout differs from this build's {file_mode.value} layout")
    if roots.size != header["n_trees"]:
        raise CorruptFile(f"{path}: tree count mismatch")
    n_nodes = nodes["left"].size
    if any(a.size != n_nodes for a in nodes.values()) or (roots.size and (roots.max() >= n_nodes or roots.min() < 0)):
        raise CorruptFile(f"{path}: inconsistent node arrays")
    if mode is not None and FeatureMode(mode) != file_mode:
        raise LayoutMismatch(f"{path}: model uses {file_mode.value} features, requested {FeatureMode(mode).value}")
    if n_steps is not None and n_steps != layout.n_steps:
        raise LayoutMismatch(f"{path}: model expects N={layout.n_steps}, requested {n_steps}")
    return Forest(layout, params, header["dataset_hash"], roots, nodes)
