"""Random forest (Gini, bootstrap, per-node feature subsets) and classification metrics."""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RF_MAGIC = b"BLRF0001"
# decreases closer than this are treated as ties
TIE_TOL = 1e-12


class ForestError(ValueError):
    pass


def gini(counts) -> float:
    c = np.asarray(counts, dtype=np.float64)
    if np.any(c < 0):
        raise ForestError("negative class count")
    n = c.sum()
    if n == 0:
        raise ForestError("gini of empty node")
    p = c / n
    return float(1.0 - np.sum(p * p))


def best_split(X: np.ndarray, y: np.ndarray, n_classes: int, features=None):
    """Best (feature, threshold) by Gini decrease, or None if nothing improves.

    Samples with ``x[feature] <= threshold`` go left. Thresholds are midpoints
    of adjacent distinct values. Ties go to the lowest feature index, then the
    lowest threshold.
    """
    n = X.shape[0]
    if n < 2:
        return None
    features = np.arange(X.shape[1]) if features is None else np.sort(np.asarray(features))
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    parent = gini(onehot.sum(axis=0))
    if parent == 0.0:
        return None

    Xs = X[:, features]
    order = np.argsort(Xs, axis=0, kind="stable")
    xs = np.take_along_axis(Xs, order, axis=0)
    left = np.cumsum(onehot[order], axis=0)[:-1]  # (n-1, m, k)
    total = onehot.sum(axis=0)
    right = total - left
    nl = np.arange(1, n, dtype=np.float64)[:, None]
    nr = n - nl
    weighted = (nl - (left**2).sum(axis=2) / nl + nr - (right**2).sum(axis=2) / nr) / n
    decrease = parent - weighted
    decrease[xs[1:] <= xs[:-1]] = -np.inf

    best = decrease.max()
    if not best > TIE_TOL:
        return None
    # first feature (ascending) that reaches the best, then its lowest threshold
    col = int(np.argmax((decrease >= best - TIE_TOL).any(axis=0)))
    row = int(np.argmax(decrease[:, col] >= best - TIE_TOL))
    lo, hi = xs[row, col], xs[row + 1, col]
    thr = lo + (hi - lo) / 2
    if not lo <= thr < hi:
        thr = lo
    return int(features[col]), float(thr)


@dataclass
class DecisionTree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, n_classes) class counts

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.value[self.apply(X)], axis=1)

    def depth(self) -> int:
        def d(i):
            return 0 if self.feature[i] < 0 else 1 + max(d(self.left[i]), d(self.right[i]))

        return d(0)


def build_tree(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    m: int,
    max_depth: int | None,
    rng: np.random.Generator,
    min_samples_split: int = 2,
) -> DecisionTree:
    d = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(np.bincount(y[idx], minlength=n_classes).astype(np.float64))
        return len(feature) - 1

    root = new_node(np.arange(X.shape[0]))
    stack = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if (max_depth is not None and depth >= max_depth) or idx.size < min_samples_split:
            continue
        if np.count_nonzero(value[node]) < 2:
            continue
        subset = np.sort(rng.choice(d, size=min(m, d), replace=False))
        split = best_split(X[idx], y[idx], n_classes, subset)
        if split is None:
            continue
        f, thr = split
        mask = X[idx, f] <= thr
        li, ri = new_node(idx[mask]), new_node(idx[~mask])
        feature[node], threshold[node], left[node], right[node] = f, thr, li, ri
        stack.append((ri, idx[~mask], depth + 1))
        stack.append((li, idx[mask], depth + 1))
    return DecisionTree(
        np.array(feature, dtype=np.int32),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int32),
        np.array(right, dtype=np.int32),
        np.array(value, dtype=np.float64).reshape(-1, n_classes),
    )


@dataclass
class Forest:
    trees: list[DecisionTree]
    n_classes: int
    n_features: int
    m: int
    seed: int
    classes: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.trees:
            raise ForestError("forest needs at least one tree")
        for t in self.trees:
            if t.value.shape[1] != self.n_classes:
                raise ForestError("trees disagree on n_classes")

    def votes(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ForestError(f"expected {self.n_features} features, got {X.shape[1]}")
        votes = np.zeros((X.shape[0], self.n_classes))
        rows = np.arange(X.shape[0])
        for t in self.trees:
            votes[rows, t.predict(X)] += 1
        return votes

    def predict_proba(self, X) -> np.ndarray:
        return self.votes(X) / len(self.trees)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.votes(X), axis=1)

    def to_bytes(self) -> bytes:
        names = "\n".join(self.classes).encode()
        out = [
            RF_MAGIC,
            struct.pack("<IIIqI", self.n_classes, self.n_features, self.m, self.seed, len(self.trees)),
            struct.pack("<I", len(names)),
            names,
        ]
        for t in self.trees:
            out.append(struct.pack("<I", t.n_nodes))
            out.append(t.feature.astype("<i4").tobytes())
            out.append(t.threshold.astype("<f8").tobytes())
            out.append(t.left.astype("<i4").tobytes())
            out.append(t.right.astype("<i4").tobytes())
            out.append(t.value.astype("<f8").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Forest":
        if blob[:8] != RF_MAGIC:
            raise ForestError("not a forest checkpoint")
        try:
            off = 8
            n_classes, n_features, m, seed, n_trees = struct.unpack_from("<IIIqI", blob, off)
            off += struct.calcsize("<IIIqI")
            (name_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            names = blob[off : off + name_len].decode()
            off += name_len
            trees = []
            for _ in range(n_trees):
                (k,) = struct.unpack_from("<I", blob, off)
                off += 4

                def take(dtype, count):
                    nonlocal off
                    arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off)
                    off += arr.nbytes
                    return arr.astype(dtype[1:])

                feature = take("<i4", k)
                threshold = take("<f8", k)
                left = take("<i4", k)
                right = take("<i4", k)
                value = take("<f8", k * n_classes).reshape(k, n_classes)
                trees.append(DecisionTree(feature, threshold, left, right, value))
        except (struct.error, ValueError) as exc:
            raise ForestError(f"corrupt forest checkpoint: {exc}") from exc
        if off != len(blob):
            raise ForestError("trailing bytes in forest checkpoint")
        return cls(trees, n_classes, n_features, m, seed, names.split("\n") if names else [])

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Forest":
        return cls.from_bytes(Path(path).read_bytes())

    def to_text(self) -> str:
        lines = [f"forest n_trees={len(self.trees)} n_classes={self.n_classes} m={self.m} seed={self.seed}"]
        for ti, t in enumerate(self.trees):
            lines.append(f"tree {ti} nodes={t.n_nodes}")

            def walk(i, depth):
                pad = "  " * (depth + 1)
                if t.feature[i] < 0:
                    counts = ",".join(str(int(c)) for c in t.value[i])
                    lines.append(f"{pad}leaf [{counts}]")
                else:
                    lines.append(f"{pad}x[{t.feature[i]}] <= {t.threshold[i]!r}")
                    walk(t.left[i], depth + 1)
                    walk(t.right[i], depth + 1)

            walk(0, 0)
        return "\n".join(lines) + "\n"


def default_m(n_features: int) -> int:
    return math.ceil(math.sqrt(n_features))


def tree_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def fit(
    X,
    y,
    n_trees: int = 100,
    m: int | None = None,
    max_depth: int | None = None,
    seed: int = 0,
    bootstrap: bool = True,
    n_jobs: int = 1,
    classes: list[str] | None = None,
    n_classes: int | None = None,
) -> Forest:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if np.unique(y).size < 2:
        raise ForestError("need at least two classes")
    k = n_classes or int(y.max()) + 1
    d = X.shape[1]
    m = m or default_m(d)

    def one(i):
        rng = tree_rng(seed, i)
        idx = rng.integers(0, X.shape[0], X.shape[0]) if bootstrap else np.arange(X.shape[0])
        return build_tree(X[idx], y[idx], k, m, max_depth, rng)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            trees = list(pool.map(one, range(n_trees)))
    else:
        trees = [one(i) for i in range(n_trees)]
    return Forest(trees, k, d, m, seed, list(classes or []))


def predict(forest: Forest, fv) -> tuple[int, np.ndarray]:
    values = fv.values if hasattr(fv, "values") else np.asarray(fv, dtype=np.float64)
    if values.ndim != 1:
        raise ForestError("predict takes a single vector")
    proba = forest.predict_proba(values[None, :])[0]
    return int(np.argmax(proba)), proba


# --- metrics ------------------------------------------------------------------

def confusion_matrix(pred, labels, k: int) -> np.ndarray:
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(pred)), 1)
    return cm


def per_class_scores(pred, labels, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(precision, recall, f1, present) per class; rows are true labels."""
    cm = confusion_matrix(pred, labels, k)
    tp = np.diag(cm).astype(np.float64)
    pred_pos = cm.sum(axis=0)
    true_pos = cm.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_pos > 0, tp / pred_pos, 0.0)
        recall = np.where(true_pos > 0, tp / true_pos, 0.0)
        denom = pred_pos + true_pos
        f1 = np.where(denom > 0, 2 * tp / denom, 0.0)
    present = (pred_pos + true_pos) > 0
    return precision, recall, f1, present


def macro_f1(pred, labels, k: int) -> float:
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    if pred.size == 0 or pred.shape != labels.shape:
        raise ForestError("macro_f1 needs equal-length, non-empty inputs")
    _, _, f1, present = per_class_scores(pred, labels, k)
    return float(f1[present].mean())


def classification_report(pred, labels, k: int) -> dict:
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    precision, recall, f1, present = per_class_scores(pred, labels, k)
    return {
        "accuracy": float(np.mean(pred == labels)),
        "precision": float(precision[present].mean()),
        "recall": float(recall[present].mean()),
        "macro_f1": float(f1[present].mean()),
        "confusion": confusion_matrix(pred, labels, k).tolist(),
    }
