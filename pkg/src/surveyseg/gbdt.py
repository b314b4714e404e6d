"""Multiclass gradient-boosted regression trees with ordered target statistics.

Each boosting round fits one depth-limited regression tree per class to the
softmax residuals (class indicator minus predicted probability). Categorical
features are never one-hot encoded: for every class they are replaced by an
ordered target statistic, the smoothed running mean of that class indicator
over rows that come strictly earlier in one seeded permutation of the training
set. Held-out rows are encoded with statistics from the full training set, so
their encodings never depend on other held-out rows.

This is a single-permutation simplification of CatBoost's scheme, with
ordinary (not oblivious) binary trees.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import LengthMismatch, SchemaMismatch, SingleClass, SurveySegError, TooFewRows
from .matrix import MixedMatrix
from .rng import make_rng

_GAIN_EPS = 1e-12


@dataclass(frozen=True)
class GbdtConfig:
    n_rounds: int = 200
    learning_rate: float = 0.1
    max_depth: int = 4
    min_samples_leaf: int = 5
    seed: int = 0
    test_fraction: float = 0.25
    cat_smoothing: float = 1.0

    def __post_init__(self):
        if self.n_rounds < 0 or self.max_depth < 0 or self.min_samples_leaf < 1:
            raise SurveySegError("n_rounds/max_depth must be >= 0 and min_samples_leaf >= 1")
        if self.learning_rate <= 0 or self.cat_smoothing <= 0:
            raise SurveySegError("learning_rate and cat_smoothing must be positive")
        if not 0 < self.test_fraction < 1:
            raise SurveySegError("test_fraction must lie in (0, 1)")


def ordered_target_stat(column, targets, permutation, smoothing: float, prior: float | None = None) -> np.ndarray:
    """Leakage-free running-mean encoding of a categorical column.

    The row at position r of ``permutation`` gets
    ``(sum of targets of same-code rows at positions < r + smoothing * prior)
    / (count of those rows + smoothing)``. The result is in original row order.
    """
    column = np.asarray(column)
    targets = np.asarray(targets, dtype=float)
    permutation = np.asarray(permutation, dtype=np.intp)
    if not (len(column) == len(targets) == len(permutation)):
        raise LengthMismatch("column, targets and permutation differ in length")
    if prior is None:
        prior = float(targets.mean()) if len(targets) else 0.0
    codes = column[permutation]
    t = targets[permutation]
    by_code = np.argsort(codes, kind="stable")
    sc, st = codes[by_code], t[by_code]
    csum = np.cumsum(st) - st
    starts = np.flatnonzero(np.r_[True, sc[1:] != sc[:-1]])
    group = np.cumsum(np.r_[True, sc[1:] != sc[:-1]]) - 1
    before_sum = csum - csum[starts][group]
    before_cnt = np.arange(len(sc)) - starts[group]
    enc_sorted = (before_sum + smoothing * prior) / (before_cnt + smoothing)
    enc_perm = np.empty(len(sc))
    enc_perm[by_code] = enc_sorted
    out = np.empty(len(sc))
    out[permutation] = enc_perm
    return out


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.intp)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.value[node]
            rows = np.flatnonzero(inner)
            go_left = x[rows, f[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])


@dataclass
class EncodingState:
    """Full-training-set category statistics for one categorical feature."""

    sums: dict[int, np.ndarray]  # code -> per-class target sums
    counts: dict[int, int]
    prior: np.ndarray
    smoothing: float

    def encode(self, column: np.ndarray) -> np.ndarray:
        k = len(self.prior)
        out = np.empty((len(column), k))
        for i, code in enumerate(column):
            c = self.counts.get(int(code), 0)
            s = self.sums.get(int(code), np.zeros(k))
            out[i] = (s + self.smoothing * self.prior) / (c + self.smoothing)
        return out


@dataclass
class GbdtModel:
    classes: np.ndarray
    base_scores: np.ndarray
    trees: list[list[Tree]]
    feature_importance: np.ndarray
    feature_names: tuple[str, ...]
    numeric_names: tuple[str, ...]
    categorical_names: tuple[str, ...]
    encoding_state: list[EncodingState]
    learning_rate: float
    config: GbdtConfig
    train_loss: list[float] = field(default_factory=list)
    train_index: np.ndarray | None = None
    test_index: np.ndarray | None = None

    def raw_scores(self, x: np.ndarray) -> np.ndarray:
        f = np.tile(self.base_scores, (x.shape[0], 1))
        for round_trees in self.trees:
            for k, tree in enumerate(round_trees):
                f[:, k] += self.learning_rate * tree.predict(x)
        return f

    def importance_ranking(self) -> list[tuple[str, float]]:
        order = sorted(range(len(self.feature_names)), key=lambda j: (-self.feature_importance[j], j))
        return [(self.feature_names[j], float(self.feature_importance[j])) for j in order]


@dataclass
class ValidationReport:
    test_accuracy: float
    confusion: np.ndarray
    importance_ranking: list[tuple[str, float]]
    classes: list[int]

    def importance_table(self) -> str:
        lines = [f"{'Order of Importance':<20}{'Feature Id':<16}Importances"]
        for rank, (name, imp) in enumerate(self.importance_ranking, start=1):
            lines.append(f"{rank:<20}{name:<16}{imp:.6f}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "test_accuracy": self.test_accuracy,
            "classes": self.classes,
            "confusion": self.confusion.tolist(),
            "importance": [
                {"rank": r, "feature": name, "importance": imp}
                for r, (name, imp) in enumerate(self.importance_ranking, start=1)
            ],
        }


def softmax(f: np.ndarray) -> np.ndarray:
    z = f - f.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_loss(probs: np.ndarray, y: np.ndarray) -> float:
    return float(-np.mean(np.log(np.maximum(probs[np.arange(len(y)), y], 1e-300))))


class _TreeBuilder:
    def __init__(self, x: np.ndarray, max_depth: int, min_leaf: int):
        self.x = x
        self.xt = np.ascontiguousarray(x.T)
        self.order = np.argsort(self.xt, axis=1, kind="stable")
        self.max_depth = max_depth
        self.min_leaf = min_leaf

    def best_split(self, members: np.ndarray, r: np.ndarray):
        """(gain, feature, threshold) of the best split of ``members``, or None."""
        n = int(members.sum())
        if n < 2 * self.min_leaf:
            return None
        sel = members[self.order]
        idx = self.order[sel].reshape(self.order.shape[0], n)
        xs = np.take_along_axis(self.xt, idx, axis=1)
        rs = r[idx]
        s_left = np.cumsum(rs, axis=1)[:, :-1]
        total = rs.sum(axis=1, keepdims=True)
        n_left = np.arange(1, n, dtype=float)
        n_right = n - n_left
        gain = s_left**2 / n_left + (total - s_left) ** 2 / n_right - total**2 / n
        valid = (xs[:, :-1] < xs[:, 1:]) & (n_left >= self.min_leaf) & (n_right >= self.min_leaf)
        gain = np.where(valid, gain, -np.inf)
        # row-major argmax picks the lowest feature, then the lowest threshold, among equal gains
        flat = int(np.argmax(gain))
        f, pos = divmod(flat, gain.shape[1])
        g = gain[f, pos]
        if not np.isfinite(g) or g <= _GAIN_EPS:
            return None
        thr = 0.5 * (xs[f, pos] + xs[f, pos + 1])
        return float(g), f, float(thr)

    def build(self, r: np.ndarray, members: np.ndarray | None = None):
        """Fit a regression tree to residuals ``r``; returns (tree, {feature: gain})."""
        if members is None:
            members = np.ones(len(r), dtype=bool)
        feature, threshold, left, right, value = [], [], [], [], []
        gains: dict[int, float] = {}

        def grow(m: np.ndarray, depth: int) -> int:
            node = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(float(r[m].mean()) if m.any() else 0.0)
            split = self.best_split(m, r) if depth < self.max_depth else None
            if split is None:
                return node
            g, f, thr = split
            gains[f] = gains.get(f, 0.0) + g
            go_left = m & (self.x[:, f] <= thr)
            feature[node] = f
            threshold[node] = thr
            left[node] = grow(go_left, depth + 1)
            right[node] = grow(m & ~go_left, depth + 1)
            return node

        grow(members, 0)
        tree = Tree(
            np.array(feature, dtype=np.intp),
            np.array(threshold),
            np.array(left, dtype=np.intp),
            np.array(right, dtype=np.intp),
            np.array(value),
        )
        return tree, gains


def _stratified_split(y: np.ndarray, fraction: float, seed: int):
    rng = make_rng(seed, 1)
    train, test = [], []
    for c in np.unique(y):
        rows = np.flatnonzero(y == c)
        rows = rows[rng.permutation(len(rows))]
        n_test = int(round(len(rows) * fraction))
        n_test = min(n_test, len(rows) - 1)
        test.extend(rows[:n_test])
        train.extend(rows[n_test:])
    return np.sort(np.array(train, dtype=np.intp)), np.sort(np.array(test, dtype=np.intp))


def _encode_training(cat: np.ndarray, onehot: np.ndarray, config: GbdtConfig):
    """Ordered statistics for training rows plus the state used for every other row."""
    n, k = onehot.shape
    perm = make_rng(config.seed, 2).permutation(n)
    prior = onehot.mean(axis=0)
    blocks, states = [], []
    for j in range(cat.shape[1]):
        col = cat[:, j]
        enc = np.column_stack(
            [ordered_target_stat(col, onehot[:, c], perm, config.cat_smoothing, prior[c]) for c in range(k)]
        )
        blocks.append(enc)
        sums, counts = {}, {}
        for code in np.unique(col):
            rows = col == code
            sums[int(code)] = onehot[rows].sum(axis=0)
            counts[int(code)] = int(rows.sum())
        states.append(EncodingState(sums, counts, prior, config.cat_smoothing))
    return blocks, states


def _design(points: MixedMatrix, cat_blocks: list[np.ndarray]) -> np.ndarray:
    return np.hstack([points.numeric, *cat_blocks]) if cat_blocks else points.numeric.copy()


def train_gbdt(points: MixedMatrix, y: np.ndarray, config: GbdtConfig) -> GbdtModel:
    """Boost on every row of ``points``; ``y`` holds class indices 0..K-1."""
    y = np.asarray(y, dtype=np.intp)
    k = int(y.max()) + 1
    n = points.n_rows
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y] = 1.0
    blocks, states = _encode_training(points.categorical, onehot, config)
    x = _design(points, blocks)
    p = points.p
    owner = list(range(p)) + [p + j for j in range(points.q) for _ in range(k)]

    prior = np.maximum(onehot.mean(axis=0), 1e-12)
    base = np.log(prior)
    f = np.tile(base, (n, 1))
    builder = _TreeBuilder(x, config.max_depth, config.min_samples_leaf)
    importance = np.zeros(p + points.q)
    trees = []
    losses = [log_loss(softmax(f), y)]
    for _ in range(config.n_rounds):
        probs = softmax(f)
        round_trees = []
        for c in range(k):
            tree, gains = builder.build(onehot[:, c] - probs[:, c])
            for feat, g in gains.items():
                importance[owner[feat]] += g
            round_trees.append(tree)
        for c, tree in enumerate(round_trees):
            f[:, c] += config.learning_rate * tree.predict(x)
        trees.append(round_trees)
        losses.append(log_loss(softmax(f), y))
    total = importance.sum()
    if total > 0:
        importance = 100.0 * importance / total
    return GbdtModel(
        classes=np.arange(k),
        base_scores=base,
        trees=trees,
        feature_importance=importance,
        feature_names=points.names,
        numeric_names=points.numeric_names,
        categorical_names=points.categorical_names,
        encoding_state=states,
        learning_rate=config.learning_rate,
        config=config,
        train_loss=losses,
    )


def _encode_new(model: GbdtModel, points: MixedMatrix) -> np.ndarray:
    blocks = [state.encode(points.categorical[:, j]) for j, state in enumerate(model.encoding_state)]
    return _design(points, blocks)


def predict(model: GbdtModel, rows: MixedMatrix):
    """(class labels, per-class probabilities); argmax ties go to the lowest class index."""
    if rows.numeric_names != model.numeric_names or rows.categorical_names != model.categorical_names:
        raise SchemaMismatch("feature layout differs from training")
    probs = softmax(model.raw_scores(_encode_new(model, rows)))
    return model.classes[np.argmax(probs, axis=1)], probs


def fit_gbdt(points: MixedMatrix, labels, config: GbdtConfig | None = None):
    """Stratified split, boost on the training part, score the held-out part."""
    config = config or GbdtConfig()
    labels = np.asarray(labels)
    if len(labels) != points.n_rows:
        raise LengthMismatch("labels and rows differ in length")
    if points.n_rows < 20:
        raise TooFewRows(f"need at least 20 rows, got {points.n_rows}")
    classes, y = np.unique(labels, return_inverse=True)
    if len(classes) < 2:
        raise SingleClass("labels contain a single class")
    train, test = _stratified_split(y, config.test_fraction, config.seed)
    model = train_gbdt(points.take(train), y[train], config)
    model.classes = classes
    model.train_index, model.test_index = train, test

    k = len(classes)
    confusion = np.zeros((k, k), dtype=np.int64)
    if len(test):
        pred, _ = predict(model, points.take(test))
        pred_idx = np.searchsorted(classes, pred)
        np.add.at(confusion, (y[test], pred_idx), 1)
    acc = float(np.trace(confusion) / confusion.sum()) if confusion.sum() else float("nan")
    report = ValidationReport(acc, confusion, model.importance_ranking(), [int(c) for c in classes])
    return model, report


def config_dict(config: GbdtConfig) -> dict:
    return asdict(config)
