"""K-Prototypes clustering of mixed numeric and categorical data.

Dissimilarity between a row and a prototype is the squared Euclidean distance
over the numeric block plus ``gamma`` times the number of categorical
mismatches. Fitting follows the incremental scheme: an initial allocation pass
that refreshes a prototype after every assignment, then full reallocation
passes that move a row to a strictly nearer prototype and refresh both
affected prototypes, until a pass moves nothing.

With no numeric columns the problem is exactly K-Modes scaled by ``gamma``, and
the K-Modes engine is used so that both give the same partition per seed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, KOutOfRange, SchemaMismatch, SurveySegError
from .ingest import ColumnSchema
from .kmodes import _Dense, fit_kmodes, hamming_matrix
from .matrix import MixedMatrix
from .rng import RNG_ALGORITHM, make_rng

# relative slack below which a reallocation is not considered an improvement
_MOVE_TOL = 1e-12


@dataclass(frozen=True)
class Prototype:
    numeric: np.ndarray
    categorical: np.ndarray


def mixed_distance(x, proto, gamma: float) -> float:
    """``x`` and ``proto`` are Prototype-like ``(numeric, categorical)`` pairs."""
    xn, xc = (x.numeric, x.categorical) if isinstance(x, Prototype) else x
    pn, pc = (proto.numeric, proto.categorical) if isinstance(proto, Prototype) else proto
    xn, pn = np.asarray(xn, dtype=float), np.asarray(pn, dtype=float)
    xc, pc = np.asarray(xc), np.asarray(pc)
    if xn.shape != pn.shape or xc.shape != pc.shape:
        raise DimensionMismatch("row and prototype blocks differ in size")
    return float(((xn - pn) ** 2).sum() + gamma * np.count_nonzero(xc != pc))


@dataclass
class KPrototypesModel:
    k: int
    numeric_protos: np.ndarray  # k x p, original units
    categorical_protos: np.ndarray  # k x q codes
    assignments: np.ndarray
    gamma: float
    cost: float
    seed: int
    cost_trace: list[float] = field(default_factory=list)
    numeric_names: tuple[str, ...] = ()
    categorical_names: tuple[str, ...] = ()
    scale_means: np.ndarray | None = None
    scale_stds: np.ndarray | None = None
    standardize: bool = True
    iterations: int = 0
    converged: bool = True
    restart: int = 0

    @property
    def prototypes(self) -> list[Prototype]:
        return [Prototype(self.numeric_protos[l], self.categorical_protos[l]) for l in range(self.k)]

    def scaled(self, numeric: np.ndarray) -> np.ndarray:
        if self.scale_means is None:
            return np.asarray(numeric, dtype=float)
        return (np.asarray(numeric, dtype=float) - self.scale_means) / self.scale_stds

    def distances(self, points: MixedMatrix) -> np.ndarray:
        """n x k mixed distances in the space the model was fitted in."""
        xs = self.scaled(points.numeric)
        ps = self.scaled(self.numeric_protos)
        d = ((xs[:, None, :] - ps[None, :, :]) ** 2).sum(axis=2)
        return d + self.gamma * hamming_matrix(points.categorical, self.categorical_protos)

    def recompute_cost(self, points: MixedMatrix) -> float:
        d = self.distances(points)
        return float(d[np.arange(points.n_rows), self.assignments].sum())

    def to_dict(self, schema: Sequence[ColumnSchema] | None = None) -> dict:
        lookup = {c.name: c for c in schema or ()}
        protos = []
        for l in range(self.k):
            entry = {n: float(v) for n, v in zip(self.numeric_names, self.numeric_protos[l])}
            for n, code in zip(self.categorical_names, self.categorical_protos[l]):
                col = lookup.get(n)
                entry[n] = {"code": int(code), "label": col.label(int(code)) if col else None}
            protos.append(entry)
        return {
            "algorithm": "kprototypes",
            "k": self.k,
            "numeric_columns": list(self.numeric_names),
            "categorical_columns": list(self.categorical_names),
            "prototypes": protos,
            "assignments": self.assignments.tolist(),
            "gamma": self.gamma,
            "cost": self.cost,
            "cost_trace": list(self.cost_trace),
            "standardize": self.standardize,
            "iterations": self.iterations,
            "converged": self.converged,
            "seed": self.seed,
            "rng": RNG_ALGORITHM,
        }


class _State:
    """Cluster sums/counts for incremental prototype maintenance (scaled space)."""

    def __init__(self, num: np.ndarray, codec: _Dense, k: int, gamma: float):
        self.num = num
        self.cat = codec.dense
        self.codec = codec
        self.k = k
        self.gamma = gamma
        n, p = num.shape
        self.assign = np.full(n, -1, dtype=np.intp)
        self.size = np.zeros(k, dtype=np.int64)
        self.sums = np.zeros((k, p))
        self.counts = [np.zeros((k, len(lev)), dtype=np.int64) for lev in codec.levels]
        self.pnum = np.zeros((k, p))
        self.pcat = np.zeros((k, self.cat.shape[1]), dtype=np.intp)

    def refresh(self, l: int) -> None:
        if self.size[l] == 0:
            return
        self.pnum[l] = self.sums[l] / self.size[l]
        for j, c in enumerate(self.counts):
            self.pcat[l, j] = np.argmax(c[l])

    def add(self, i: int, l: int) -> None:
        self.assign[i] = l
        self.size[l] += 1
        self.sums[l] += self.num[i]
        for j, c in enumerate(self.counts):
            c[l, self.cat[i, j]] += 1

    def remove(self, i: int) -> None:
        l = self.assign[i]
        self.size[l] -= 1
        self.sums[l] -= self.num[i]
        for j, c in enumerate(self.counts):
            c[l, self.cat[i, j]] -= 1
        self.assign[i] = -1

    def dist_row(self, i: int) -> np.ndarray:
        d = ((self.num[i] - self.pnum) ** 2).sum(axis=1)
        return d + self.gamma * (self.cat[i] != self.pcat).sum(axis=1)

    def dist_col(self, l: int) -> np.ndarray:
        d = ((self.num - self.pnum[l]) ** 2).sum(axis=1)
        return d + self.gamma * (self.cat != self.pcat[l]).sum(axis=1)

    def dist_all(self) -> np.ndarray:
        return np.column_stack([self.dist_col(l) for l in range(self.k)])

    def exact_refresh(self) -> None:
        # drop accumulated rounding in the running sums
        for l in range(self.k):
            members = self.assign == l
            if members.any():
                self.sums[l] = self.num[members].sum(axis=0)
        for l in range(self.k):
            self.refresh(l)

    def cost(self) -> float:
        d = self.dist_all()
        return float(d[np.arange(len(self.assign)), self.assign].sum())

    def move(self, i: int, dest: int) -> None:
        src = self.assign[i]
        self.remove(i)
        self.add(i, dest)
        self.refresh(src)
        self.refresh(dest)


def _fill_empty(st: _State) -> None:
    while (st.size == 0).any():
        e = int(np.flatnonzero(st.size == 0)[0])
        d = st.dist_all()
        own = d[np.arange(len(st.assign)), st.assign]
        own[st.size[st.assign] <= 1] = -1.0
        i = int(np.argmax(own))
        st.move(i, e)


def _reallocate(st: _State, max_iter: int, trace: list[float]):
    """Full reallocation passes. Returns (passes, converged)."""
    n = len(st.assign)
    for it in range(1, max_iter + 1):
        d = st.dist_all()
        moved = 0
        pos = 0
        while pos < n:
            sub = d[pos:]
            own = sub[np.arange(n - pos), st.assign[pos:]]
            best = sub.min(axis=1)
            hits = np.flatnonzero(best < own - _MOVE_TOL * (1.0 + own))
            if hits.size == 0:
                break
            i = pos + int(hits[0])
            src, dest = int(st.assign[i]), int(np.argmin(d[i]))
            st.move(i, dest)
            d[:, src] = st.dist_col(src)
            d[:, dest] = st.dist_col(dest)
            moved += 1
            pos = i + 1
        st.exact_refresh()
        trace.append(st.cost())
        if moved == 0:
            return it, True
    return max_iter, False


def _exact_move_gain(st: _State, i: int) -> np.ndarray:
    """Change in total cost if row ``i`` moved to each cluster (0 for its own)."""
    a = int(st.assign[i])
    size = st.size
    x = st.num[i]
    dnum = ((x - st.pnum) ** 2).sum(axis=1)
    delta = size / (size + 1.0) * dnum
    delta -= size[a] / (size[a] - 1.0) * dnum[a]
    for j, c in enumerate(st.counts):
        v = st.cat[i, j]
        top = c.max(axis=1)
        # joining cluster b: mismatches go from size-top to size+1-max(top, c[b,v]+1)
        delta += st.gamma * (1.0 - (np.maximum(top, c[:, v] + 1) - top))
        row = c[a].copy()
        row[v] -= 1
        delta += st.gamma * (top[a] - row.max() - 1.0)
    delta[a] = 0.0
    return delta


def _screen_gains(st: _State) -> np.ndarray:
    """Vectorized :func:`_exact_move_gain` for every row at the current state."""
    n = len(st.assign)
    rows = np.arange(n)
    a = st.assign
    size = st.size.astype(float)
    dnum = ((st.num[:, None, :] - st.pnum[None, :, :]) ** 2).sum(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = size / (size + 1.0) * dnum
        delta -= (size[a] / (size[a] - 1.0) * dnum[rows, a])[:, None]
    for j, c in enumerate(st.counts):
        v = st.cat[:, j]
        top = c.max(axis=1)
        n_top = (c == top[:, None]).sum(axis=1)
        cv = c[:, v].T
        delta += st.gamma * (1.0 - (np.maximum(top, cv + 1) - top))
        # leaving lowers the cluster's best count only if v was its sole top code
        drops = (c[a, v] == top[a]) & (n_top[a] == 1)
        delta += (st.gamma * (drops.astype(float) - 1.0))[:, None]
    delta[rows, a] = 0.0
    delta[st.size[a] <= 1] = 0.0
    return delta


def _polish(st: _State, trace: list[float]) -> int:
    """One pass of exact-improvement moves; returns how many rows moved.

    A vectorized screen picks candidate rows; each candidate's gain is then
    recomputed against the live state before it moves.
    """
    moved = 0
    tol = _MOVE_TOL * (1.0 + abs(trace[-1]))
    candidates = np.flatnonzero(_screen_gains(st).min(axis=1) < -tol)
    for i in candidates:
        if st.size[st.assign[i]] <= 1:
            continue
        delta = _exact_move_gain(st, i)
        b = int(np.argmin(delta))
        if delta[b] < -tol:
            st.move(i, b)
            moved += 1
    st.exact_refresh()
    if moved:
        trace.append(st.cost())
    return moved


def _optimize(st: _State, max_iter: int, trace: list[float]):
    """Nearest-prototype passes, then exact-improvement polish, until both are stable."""
    total = 0
    while True:
        iters, conv = _reallocate(st, max_iter - total, trace)
        total += iters
        if not conv or total >= max_iter:
            return total, conv
        if _polish(st, trace) == 0:
            return total, True
        total += 1


def _run_restart(num, codec, k, gamma, init_rows, max_iter):
    st = _State(num, codec, k, gamma)
    # the seed rows are the clusters' first members
    for l, i in enumerate(init_rows):
        st.add(int(i), l)
        st.refresh(l)
    for i in range(num.shape[0]):
        if st.assign[i] >= 0:
            continue
        l = int(np.argmin(st.dist_row(i)))
        st.add(i, l)
        st.refresh(l)
    _fill_empty(st)
    st.exact_refresh()
    trace = [st.cost()]
    iters, conv = _optimize(st, max_iter, trace)
    return st, trace, iters, conv


def _distinct_rows(num: np.ndarray, cat: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    seen = {}
    for i in range(num.shape[0]):
        seen.setdefault((num[i].tobytes(), cat[i].tobytes()), i)
    uniq = np.fromiter(seen.values(), dtype=np.intp)
    if len(uniq) >= k:
        return uniq[rng.choice(len(uniq), size=k, replace=False)]
    rest = np.setdiff1d(np.arange(num.shape[0]), uniq)
    return np.concatenate([uniq, rng.choice(rest, size=k - len(uniq), replace=False)])


def _prepare(points: MixedMatrix, standardize: bool):
    if standardize and points.p:
        means = points.means
        stds = points.stds.copy()
        stds[stds == 0] = 1.0
    else:
        means = np.zeros(points.p)
        stds = np.ones(points.p)
    return (points.numeric - means) / stds, means, stds


def default_gamma(points: MixedMatrix, standardize: bool = True) -> float:
    """Half the mean numeric standard deviation (after scaling); 1.0 without numeric columns."""
    if points.p == 0:
        return 1.0
    scaled, _, _ = _prepare(points, standardize)
    g = 0.5 * float(scaled.std(axis=0).mean())
    return g if g > 0 else 1.0


def fit_kprototypes(
    points: MixedMatrix,
    k: int,
    gamma: float | None = None,
    seed: int = 0,
    max_iter: int = 100,
    n_restarts: int = 10,
    standardize: bool = True,
) -> KPrototypesModel:
    n = points.n_rows
    if not 1 <= k <= n:
        raise KOutOfRange(f"k={k} must lie in [1, {n}]")
    if n_restarts < 1 or max_iter < 1:
        raise SurveySegError("n_restarts and max_iter must be positive")
    if gamma is None:
        gamma = default_gamma(points, standardize)
    if gamma < 0:
        raise SurveySegError("gamma must be non-negative")
    num, means, stds = _prepare(points, standardize)
    scale = (means, stds) if standardize and points.p else (None, None)

    if points.p == 0:
        km = fit_kmodes(points.categorical, k, "random_points", seed, max_iter, n_restarts)
        return KPrototypesModel(
            k=k,
            numeric_protos=np.zeros((k, 0)),
            categorical_protos=km.modes,
            assignments=km.assignments,
            gamma=float(gamma),
            cost=gamma * km.cost,
            seed=seed,
            cost_trace=[gamma * c for c in km.cost_trace],
            categorical_names=points.categorical_names,
            standardize=standardize,
            iterations=km.iterations,
            converged=km.converged,
            restart=km.restart,
        )

    codec = _Dense(points.categorical)
    best = None
    for r in range(n_restarts):
        init_rows = _distinct_rows(num, codec.dense, k, make_rng(seed, r))
        st, trace, iters, conv = _run_restart(num, codec, k, gamma, init_rows, max_iter)
        if best is None or trace[-1] < best[1][-1]:
            best = (st, trace, iters, conv, r)
    return _to_model(points, best, gamma, seed, standardize, scale, stds, means)


def _to_model(points, best, gamma, seed, standardize, scale, stds, means) -> KPrototypesModel:
    st, trace, iters, conv, r = best
    k = st.k
    pnum = st.pnum * stds + means
    # report exact member means in original units
    for l in range(k):
        members = st.assign == l
        if members.any():
            pnum[l] = points.numeric[members].mean(axis=0)
    return KPrototypesModel(
        k=k,
        numeric_protos=pnum,
        categorical_protos=st.codec.decode(st.pcat),
        assignments=st.assign.copy(),
        gamma=float(gamma),
        cost=trace[-1],
        seed=seed,
        cost_trace=list(trace),
        numeric_names=points.numeric_names,
        categorical_names=points.categorical_names,
        scale_means=scale[0],
        scale_stds=scale[1],
        standardize=standardize,
        iterations=iters,
        converged=conv,
        restart=r,
    )


def sweep_kprototypes(
    points: MixedMatrix,
    k_range: Sequence[int],
    gamma: float | None = None,
    seed: int = 0,
    max_iter: int = 100,
    n_restarts: int = 10,
    standardize: bool = True,
) -> list[KPrototypesModel]:
    """Fit each k; k also tries the (k-1) partition with its worst-fit row split off."""
    if gamma is None:
        gamma = default_gamma(points, standardize)
    models = []
    prev = None
    for k in k_range:
        model = fit_kprototypes(points, k, gamma, seed, max_iter, n_restarts, standardize)
        if prev is not None and prev.k == k - 1 and points.p:
            num, means, stds = _prepare(points, standardize)
            codec = _Dense(points.categorical)
            st = _State(num, codec, k, gamma)
            for i, l in enumerate(prev.assignments):
                st.add(i, int(l))
            st.exact_refresh()
            d = st.dist_all()
            own = d[np.arange(points.n_rows), st.assign]
            own[st.size[st.assign] <= 1] = -1.0
            st.move(int(np.argmax(own)), k - 1)
            st.exact_refresh()
            trace = [st.cost()]
            iters, conv = _optimize(st, max_iter, trace)
            if trace[-1] < model.cost:
                scale = (means, stds) if standardize else (None, None)
                model = _to_model(points, (st, trace, iters, conv, -1), gamma, seed, standardize, scale, stds, means)
        models.append(model)
        prev = model
    return models


@dataclass
class CentroidTable:
    header: list[str]
    rows: list[list[str]]
    flags: list[tuple[int, str]] = field(default_factory=list)

    def to_text(self) -> str:
        cells = [self.header] + self.rows
        widths = [max(len(r[j]) for r in cells) for j in range(len(self.header))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
        for l, name in self.flags:
            lines.append(f"* cluster {l}, {name}: centroid far from the cluster median (skewed or outlying values)")
        return "\n".join(lines) + "\n"

    def to_csv(self, delimiter: str = ",") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
        w.writerow(self.header)
        w.writerows(self.rows)
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"header": self.header, "rows": self.rows, "flags": [list(f) for f in self.flags]}


# a numeric centroid is flagged when |mean - median| exceeds this many robust
# (MAD-based) standard deviations of the cluster's values
ANOMALY_SCALE = 3.0


def centroid_table(
    model: KPrototypesModel,
    schema: Sequence[ColumnSchema],
    points: MixedMatrix | None = None,
) -> CentroidTable:
    """k rows of numeric means (2 decimals, original units) and ``code (label)`` modes.

    When ``points`` is given, numeric centroids pulled away from the cluster
    median by skew or outliers get a ``*`` marker and a footnote.
    """
    lookup = {c.name: c for c in schema}
    for name in model.numeric_names:
        if name not in lookup or lookup[name].is_categorical:
            raise SchemaMismatch(f"numeric column {name!r} not numeric in schema")
    for name in model.categorical_names:
        if name not in lookup or not lookup[name].is_categorical:
            raise SchemaMismatch(f"categorical column {name!r} not categorical in schema")
    flags = []
    rows = []
    for l in range(model.k):
        row = [str(l)]
        for j, name in enumerate(model.numeric_names):
            cell = f"{model.numeric_protos[l, j]:.2f}"
            if points is not None:
                vals = points.numeric[model.assignments == l, j]
                if vals.size:
                    med = float(np.median(vals))
                    robust_sd = 1.4826 * float(np.median(np.abs(vals - med)))
                    if abs(float(vals.mean()) - med) > ANOMALY_SCALE * robust_sd:
                        cell += "*"
                        flags.append((l, name))
            row.append(cell)
        for j, name in enumerate(model.categorical_names):
            code = int(model.categorical_protos[l, j])
            row.append(f"{code} ({lookup[name].label(code)})")
        rows.append(row)
    header = ["cluster", *model.numeric_names, *model.categorical_names]
    return CentroidTable(header, rows, flags)
