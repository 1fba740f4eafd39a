"""Gradient-boosted decision trees with logistic loss, from first principles.

Second-order boosting: per round, with p = sigmoid(raw),

    g_i = w_i * (p_i - y_i)        h_i = w_i * p_i * (1 - p_i)

trees greedily maximize the exact gain over every split of every feature
(features are few, so no histogram approximation), and each leaf takes the
Newton value -G/H in log-odds space. Prediction is

    sigmoid(base_score + learning_rate * sum of leaf values)

with base_score the log-odds of the (weighted) training prior. Training is
fully deterministic: no subsampling, stable sorts, first-best tie-breaks,
no early stopping.

Models serialize to a versioned line-oriented text format (grammar in
``dumps_forest``) that round-trips bit-exactly via shortest float repr.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ModelFormatError, ValidationError

_GAIN_EPS = 1e-12


@dataclass(frozen=True)
class TrainingConfig:
    n_rounds: int = 200
    max_depth: int = 4
    learning_rate: float = 0.1
    min_child_weight: float = 1.0
    pos_weight: float | None = None  # None: use n_negative / n_positive

    def __post_init__(self) -> None:
        if self.n_rounds < 0:
            raise ValidationError("n_rounds must be >= 0")
        if self.max_depth < 1:
            raise ValidationError("max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValidationError("learning_rate must be in (0, 1]")
        if self.min_child_weight < 0:
            raise ValidationError("min_child_weight must be >= 0")
        if self.pos_weight is not None and self.pos_weight <= 0:
            raise ValidationError("pos_weight must be positive")


@dataclass
class Tree:
    """Flat node arrays; feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def predict_raw(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(X.shape[0], dtype=np.float64)
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if rows.size == 0:
                continue
            f = int(self.feature[node])
            if f < 0:
                out[rows] = self.value[node]
                continue
            go_left = X[rows, f] < self.threshold[node]
            stack.append((int(self.left[node]), rows[go_left]))
            stack.append((int(self.right[node]), rows[~go_left]))
        return out


@dataclass
class TrainedForest:
    feature_schema: tuple[str, ...]
    base_score: float
    learning_rate: float
    trees: list[Tree]
    meta: dict[str, str] = field(default_factory=dict)
    train_losses: list[float] = field(default_factory=list)
    version: int = 1


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def _weighted_logloss(raw: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    # -y*log(p) - (1-y)*log(1-p) == softplus(raw) - y*raw, stable form
    per_row = np.logaddexp(0.0, raw) - y * raw
    return float((w * per_row).sum() / w.sum())


class _TreeBuilder:
    def __init__(self, X: np.ndarray, g: np.ndarray, h: np.ndarray,
                 sort_idx: list[np.ndarray], config: TrainingConfig):
        self.X = X
        self.g = g
        self.h = h
        self.sort_idx = sort_idx
        self.config = config
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.contrib = np.zeros(X.shape[0], dtype=np.float64)
        self._left_buf = np.zeros(X.shape[0], dtype=bool)

    def _new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def _best_split(self, orders: list[np.ndarray], G: float, H: float):
        best = None
        parent_score = G * G / H
        for f, order in enumerate(orders):
            xs = self.X[order, f]
            GL = np.cumsum(self.g[order])[:-1]
            HL = np.cumsum(self.h[order])[:-1]
            mcw = max(self.config.min_child_weight, _GAIN_EPS)
            valid = (xs[:-1] < xs[1:]) & (HL >= mcw) & (H - HL >= mcw)
            candidates = np.flatnonzero(valid)
            if candidates.size == 0:
                continue
            gains = 0.5 * (
                GL[candidates] ** 2 / HL[candidates]
                + (G - GL[candidates]) ** 2 / (H - HL[candidates])
                - parent_score
            )
            j = int(np.argmax(gains))
            gain = float(gains[j])
            if best is not None and gain <= best[0] + _GAIN_EPS:
                continue  # strict improvement required: first feature wins ties
            pos = int(candidates[j])
            thr = 0.5 * (float(xs[pos]) + float(xs[pos + 1]))
            if thr <= xs[pos]:  # midpoint collapsed onto the lower value
                thr = float(xs[pos + 1])
            best = (gain, f, thr)
        return best

    def build(self, orders: list[np.ndarray], depth: int) -> int:
        node = self._new_node()
        rows = orders[0]
        G = float(self.g[rows].sum())
        H = float(self.h[rows].sum())
        best = None
        if depth < self.config.max_depth and rows.size >= 2 and H > 0.0:
            best = self._best_split(orders, G, H)
        if best is None or best[0] <= _GAIN_EPS:
            # H can underflow to 0 once predictions saturate; contribute nothing
            leaf_value = -G / H if H > 0.0 else 0.0
            self.value[node] = leaf_value
            self.contrib[rows] = leaf_value
            return node
        _, f, thr = best
        split_order = orders[f]
        left_rows = split_order[self.X[split_order, f] < thr]
        self._left_buf[left_rows] = True
        orders_left = [o[self._left_buf[o]] for o in orders]
        orders_right = [o[~self._left_buf[o]] for o in orders]
        self._left_buf[left_rows] = False
        self.feature[node] = f
        self.threshold[node] = thr
        self.left[node] = self.build(orders_left, depth + 1)
        self.right[node] = self.build(orders_right, depth + 1)
        return node

    def to_tree(self) -> Tree:
        return Tree(
            feature=np.asarray(self.feature, dtype=np.int16),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            left=np.asarray(self.left, dtype=np.int32),
            right=np.asarray(self.right, dtype=np.int32),
            value=np.asarray(self.value, dtype=np.float64),
        )


def _validate_matrix(X: np.ndarray, n_features: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != n_features:
        raise ValidationError(
            f"feature matrix must be 2-D with {n_features} columns, got {X.shape}"
        )
    if not np.isfinite(X).all():
        raise ValidationError("feature matrix contains non-finite values")
    return X


def train_gbdt(X, y, feature_schema: tuple[str, ...],
               config: TrainingConfig | None = None,
               meta: dict[str, str] | None = None) -> TrainedForest:
    """Fit the boosted forest; deterministic given identical inputs."""
    config = config or TrainingConfig()
    X = _validate_matrix(X, len(feature_schema))
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (X.shape[0],):
        raise ValidationError("y must be 1-D and aligned with X")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValidationError("y must be binary 0/1")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("degenerate target: training labels are single-class")
    pos_weight = config.pos_weight if config.pos_weight is not None else n_neg / n_pos
    w = np.where(y == 1.0, pos_weight, 1.0)
    w_pos = float(w[y == 1.0].sum())
    w_neg = float(w[y == 0.0].sum())
    base_score = math.log(w_pos / w_neg)

    sort_idx = [
        np.argsort(X[:, f], kind="stable").astype(np.int64)
        for f in range(X.shape[1])
    ]
    raw = np.full(X.shape[0], base_score, dtype=np.float64)
    losses = [_weighted_logloss(raw, y, w)]
    trees: list[Tree] = []
    for _ in range(config.n_rounds):
        p = _sigmoid(raw)
        g = w * (p - y)
        h = w * p * (1.0 - p)
        builder = _TreeBuilder(X, g, h, sort_idx, config)
        builder.build(sort_idx, 0)
        trees.append(builder.to_tree())
        raw += config.learning_rate * builder.contrib
        losses.append(_weighted_logloss(raw, y, w))
    return TrainedForest(
        feature_schema=tuple(feature_schema),
        base_score=base_score,
        learning_rate=config.learning_rate,
        trees=trees,
        meta=dict(meta or {}),
        train_losses=losses,
    )


def predict_raw(forest: TrainedForest, X) -> np.ndarray:
    X = _validate_matrix(X, len(forest.feature_schema))
    raw = np.full(X.shape[0], forest.base_score, dtype=np.float64)
    for tree in forest.trees:
        raw += forest.learning_rate * tree.predict_raw(X)
    return raw


def predict_proba(forest: TrainedForest, X) -> np.ndarray:
    return _sigmoid(predict_raw(forest, X))


# --- text serialization ----------------------------------------------------

_MAGIC = "forest-text"


def dumps_forest(forest: TrainedForest) -> str:
    """Serialize to the v1 text grammar::

        forest-text v1
        schema <name>(,<name>)*
        base_score <float-repr>
        learning_rate <float-repr>
        n_trees <int>
        (meta <key>=<value>)*
        (tree <index> <n_nodes>
         (<id> split <feature> <thr-repr> <left> <right>
          | <id> leaf <value-repr>)*
         end tree)*
        end forest

    Floats use shortest round-trip repr, so load(dumps(f)) is bit-exact.
    """
    lines = [f"{_MAGIC} v{forest.version}"]
    lines.append("schema " + ",".join(forest.feature_schema))
    lines.append(f"base_score {float(forest.base_score)!r}")
    lines.append(f"learning_rate {float(forest.learning_rate)!r}")
    lines.append(f"n_trees {len(forest.trees)}")
    for key in forest.meta:
        if "\n" in key or "\n" in forest.meta[key] or "=" in key:
            raise ValidationError(f"meta key {key!r} not serializable")
        lines.append(f"meta {key}={forest.meta[key]}")
    for index, tree in enumerate(forest.trees):
        lines.append(f"tree {index} {tree.n_nodes}")
        for i in range(tree.n_nodes):
            if tree.feature[i] < 0:
                lines.append(f"{i} leaf {float(tree.value[i])!r}")
            else:
                lines.append(
                    f"{i} split {int(tree.feature[i])} {float(tree.threshold[i])!r} "
                    f"{int(tree.left[i])} {int(tree.right[i])}"
                )
        lines.append("end tree")
    lines.append("end forest")
    return "\n".join(lines) + "\n"


def loads_forest(text: str) -> TrainedForest:
    lines = text.splitlines()
    pos = 0

    def take() -> str:
        nonlocal pos
        if pos >= len(lines):
            raise ModelFormatError("unexpected end of model text (truncated file?)")
        line = lines[pos]
        pos += 1
        return line

    header = take().split()
    if len(header) != 2 or header[0] != _MAGIC:
        raise ModelFormatError("not a forest-text model file")
    if header[1] != "v1":
        raise ModelFormatError(f"unsupported model version {header[1]!r}")
    schema_line = take()
    if not schema_line.startswith("schema "):
        raise ModelFormatError("missing schema line")
    schema = tuple(schema_line[len("schema "):].split(","))
    try:
        base_score = float(take().split()[1])
        learning_rate = float(take().split()[1])
        n_trees = int(take().split()[1])
    except (IndexError, ValueError) as exc:
        raise ModelFormatError("malformed model header") from exc
    meta: dict[str, str] = {}
    line = take()
    while line.startswith("meta "):
        key, _, value = line[len("meta "):].partition("=")
        meta[key] = value
        line = take()
    trees: list[Tree] = []
    for index in range(n_trees):
        parts = line.split()
        if len(parts) != 3 or parts[0] != "tree" or int(parts[1]) != index:
            raise ModelFormatError(f"expected 'tree {index} <n>', got {line!r}")
        n_nodes = int(parts[2])
        feature = np.empty(n_nodes, dtype=np.int16)
        threshold = np.zeros(n_nodes, dtype=np.float64)
        left = np.full(n_nodes, -1, dtype=np.int32)
        right = np.full(n_nodes, -1, dtype=np.int32)
        value = np.zeros(n_nodes, dtype=np.float64)
        for i in range(n_nodes):
            node = take().split()
            try:
                if int(node[0]) != i:
                    raise ModelFormatError(f"node ids out of order in tree {index}")
                if node[1] == "leaf" and len(node) == 3:
                    feature[i] = -1
                    value[i] = float(node[2])
                elif node[1] == "split" and len(node) == 6:
                    feature[i] = int(node[2])
                    threshold[i] = float(node[3])
                    left[i] = int(node[4])
                    right[i] = int(node[5])
                    if not (0 <= feature[i] < len(schema)):
                        raise ModelFormatError(f"bad feature index in tree {index}")
                    if not (i < left[i] < n_nodes and i < right[i] < n_nodes):
                        raise ModelFormatError(f"bad child link in tree {index}")
                else:
                    raise ModelFormatError(f"malformed node line {' '.join(node)!r}")
            except (IndexError, ValueError) as exc:
                raise ModelFormatError(f"malformed node line in tree {index}") from exc
        if take() != "end tree":
            raise ModelFormatError(f"missing 'end tree' for tree {index}")
        trees.append(Tree(feature, threshold, left, right, value))
        line = take()
    if line != "end forest":
        raise ModelFormatError("missing 'end forest' sentinel (truncated file?)")
    return TrainedForest(
        feature_schema=schema,
        base_score=base_score,
        learning_rate=learning_rate,
        trees=trees,
        meta=meta,
    )


def save_model(forest: TrainedForest, path) -> None:
    Path(path).write_text(dumps_forest(forest), encoding="utf-8")


def load_model(path) -> TrainedForest:
    return loads_forest(Path(path).read_text(encoding="utf-8"))
