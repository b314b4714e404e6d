"""K-Modes clustering for purely categorical code matrices.

Batch Lloyd-style iteration: assign every row to its nearest mode under
Hamming distance, then recompute each cluster's per-column mode, until the
assignment vector stops changing.

Deterministic tie rules: nearest-mode ties go to the lowest cluster index and
mode ties go to the smallest code. A cluster that ends up empty is re-seeded
with the row that is currently worst fit (largest distance to its own mode).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyCluster, KOutOfRange, LengthMismatch, MissingData, SurveySegError
from .ingest import ColumnSchema
from .rng import RNG_ALGORITHM, make_rng

INITS = ("random_points", "huang_density")


def hamming(x, y) -> int:
    x, y = np.asarray(x), np.asarray(y)
    if x.shape != y.shape:
        raise LengthMismatch(f"vectors of length {x.shape} and {y.shape}")
    return int(np.count_nonzero(x != y))


def column_modes(points, members) -> np.ndarray:
    """Per-column most frequent code among ``points[members]``; ties -> smallest code."""
    points = np.asarray(points)
    members = np.asarray(members, dtype=np.intp)
    if members.size == 0:
        raise EmptyCluster("cannot take the mode of an empty cluster")
    sub = points[members]
    out = np.empty(points.shape[1], dtype=points.dtype)
    for j in range(points.shape[1]):
        codes, counts = np.unique(sub[:, j], return_counts=True)
        out[j] = codes[np.argmax(counts)]
    return out


def hamming_matrix(points: np.ndarray, modes: np.ndarray) -> np.ndarray:
    """n x k matrix of Hamming distances."""
    d = np.zeros((points.shape[0], modes.shape[0]), dtype=np.int64)
    for j in range(points.shape[1]):
        d += points[:, j, None] != modes[None, :, j]
    return d


@dataclass
class KModesModel:
    k: int
    modes: np.ndarray
    assignments: np.ndarray
    cost: int
    iterations: int
    seed: int
    cost_trace: list[int] = field(default_factory=list)
    converged: bool = True
    columns: tuple[str, ...] = ()
    init: str = "random_points"
    restart: int = 0

    def recompute_cost(self, points) -> int:
        points = np.asarray(points)
        return int(np.count_nonzero(points != self.modes[self.assignments]))

    def to_dict(self, schema: Sequence[ColumnSchema] | None = None) -> dict:
        lookup = {c.name: c for c in schema or ()}
        modes = []
        for row in self.modes:
            entry = {}
            for j, code in enumerate(row):
                name = self.columns[j] if j < len(self.columns) else f"col{j}"
                col = lookup.get(name)
                entry[name] = {"code": int(code), "label": col.label(int(code)) if col else None}
            modes.append(entry)
        return {
            "algorithm": "kmodes",
            "k": self.k,
            "columns": list(self.columns),
            "modes": modes,
            "assignments": self.assignments.tolist(),
            "cost": int(self.cost),
            "cost_trace": [int(c) for c in self.cost_trace],
            "iterations": self.iterations,
            "converged": self.converged,
            "seed": self.seed,
            "init": self.init,
            "rng": RNG_ALGORITHM,
        }


class _Dense:
    """Codes re-indexed per column to 0..L_j-1 in increasing code order.

    Counting modes on dense indices keeps the smallest-code tie-break (argmax
    picks the first maximum) while avoiding per-cluster ``np.unique`` calls.
    """

    def __init__(self, points: np.ndarray):
        self.points = points
        self.levels = []
        cols = []
        for j in range(points.shape[1]):
            lev, inv = np.unique(points[:, j], return_inverse=True)
            self.levels.append(lev)
            cols.append(inv.reshape(-1))
        self.dense = np.column_stack(cols) if cols else np.zeros((points.shape[0], 0), dtype=np.intp)

    def modes_for(self, assign: np.ndarray, k: int) -> np.ndarray:
        modes = np.empty((k, self.dense.shape[1]), dtype=np.intp)
        for j, lev in enumerate(self.levels):
            counts = np.zeros((k, len(lev)), dtype=np.int64)
            np.add.at(counts, (assign, self.dense[:, j]), 1)
            modes[:, j] = np.argmax(counts, axis=1)
        return modes

    def decode(self, modes: np.ndarray) -> np.ndarray:
        out = np.empty(modes.shape, dtype=self.points.dtype)
        for j, lev in enumerate(self.levels):
            out[:, j] = lev[modes[:, j]]
        return out


def _fill_empty(dense: np.ndarray, modes: np.ndarray, assign: np.ndarray, dist: np.ndarray) -> bool:
    """Re-seed empty clusters in place with the worst-fit rows. Returns True if any were empty."""
    k = modes.shape[0]
    changed = False
    while True:
        sizes = np.bincount(assign, minlength=k)
        empty = np.flatnonzero(sizes == 0)
        if empty.size == 0:
            return changed
        e = int(empty[0])
        own = dist[np.arange(len(assign)), assign].astype(float)
        own[sizes[assign] <= 1] = -1.0
        i = int(np.argmax(own))
        modes[e] = dense[i]
        dist[:, e] = hamming_matrix(dense, modes[e : e + 1])[:, 0]
        assign[i] = e
        changed = True


def _iterate(codec: _Dense, modes: np.ndarray, max_iter: int):
    """Run batch k-modes from dense initial modes. Returns (assign, modes, cost, trace, iters, converged)."""
    dense = codec.dense
    k = modes.shape[0]
    modes = modes.copy()
    dist = hamming_matrix(dense, modes)
    assign = np.argmin(dist, axis=1)
    _fill_empty(dense, modes, assign, dist)
    trace = []
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        modes = codec.modes_for(assign, k)
        dist = hamming_matrix(dense, modes)
        trace.append(int(dist[np.arange(len(assign)), assign].sum()))
        new = np.argmin(dist, axis=1)
        reseeded = _fill_empty(dense, modes, new, dist)
        if not reseeded and np.array_equal(new, assign):
            converged = True
            break
        assign = new
    if not converged:
        modes = codec.modes_for(assign, k)
        cost = int(np.count_nonzero(dense != modes[assign]))
        if not trace or cost != trace[-1]:
            trace.append(cost)
    return assign, modes, trace[-1], trace, it, converged


def _unique_rows_first_seen(points: np.ndarray) -> np.ndarray:
    seen = {}
    for i, row in enumerate(map(tuple, points)):
        seen.setdefault(row, i)
    return np.fromiter(seen.values(), dtype=np.intp)


def _init_modes(codec: _Dense, k: int, init: str, rng: np.random.Generator) -> np.ndarray:
    dense = codec.dense
    n = dense.shape[0]
    if init == "random_points":
        uniq = _unique_rows_first_seen(dense)
        if len(uniq) >= k:
            idx = uniq[rng.choice(len(uniq), size=k, replace=False)]
        else:
            rest = np.setdiff1d(np.arange(n), uniq)
            idx = np.concatenate([uniq, rng.choice(rest, size=k - len(uniq), replace=False)])
        return dense[idx].copy()
    if init == "huang_density":
        chosen: list[int] = []
        modes = np.empty((k, dense.shape[1]), dtype=dense.dtype)
        for l in range(k):
            draw = np.array(
                [rng.choice(len(lev), p=np.bincount(dense[:, j], minlength=len(lev)) / n)
                 for j, lev in enumerate(codec.levels)],
                dtype=dense.dtype,
            )
            d = hamming_matrix(dense, draw[None, :])[:, 0].astype(float)
            d[chosen] = np.inf
            i = int(np.argmin(d))
            chosen.append(i)
            modes[l] = dense[i]
        return modes
    raise SurveySegError(f"init must be one of {INITS}")


def _validate(points, k: int) -> np.ndarray:
    points = np.asarray(points)
    if points.ndim != 2:
        raise SurveySegError("points must be an n x m code matrix")
    if points.dtype.kind == "f":
        if not np.isfinite(points).all():
            raise MissingData("points contain missing cells")
        points = points.astype(np.int64)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise KOutOfRange(f"k={k} must lie in [1, {n}]")
    return points


def fit_kmodes(
    points,
    k: int,
    init: str = "random_points",
    seed: int = 0,
    max_iter: int = 100,
    n_restarts: int = 10,
    columns: Sequence[str] = (),
) -> KModesModel:
    """Best-of-restarts K-Modes. Restart ``r`` draws from stream ``(seed, r)``."""
    points = _validate(points, k)
    if n_restarts < 1 or max_iter < 1:
        raise SurveySegError("n_restarts and max_iter must be positive")
    codec = _Dense(points)
    best = None
    for r in range(n_restarts):
        start = _init_modes(codec, k, init, make_rng(seed, r))
        res = _iterate(codec, start, max_iter)
        if best is None or res[2] < best[0][2]:
            best = (res, r)
    return _to_model(codec, k, best[0], seed, tuple(columns), init, best[1])


def _to_model(codec, k, res, seed, columns, init, restart) -> KModesModel:
    assign, modes, cost, trace, iters, conv = res
    return KModesModel(
        k=k,
        modes=codec.decode(modes),
        assignments=assign.astype(np.intp),
        cost=int(cost),
        iterations=iters,
        seed=seed,
        cost_trace=list(trace),
        converged=conv,
        columns=columns,
        init=init,
        restart=restart,
    )


def sweep_kmodes(
    points,
    k_range: Sequence[int],
    seed: int = 0,
    n_restarts: int = 10,
    init: str = "random_points",
    max_iter: int = 100,
    columns: Sequence[str] = (),
) -> list[KModesModel]:
    """Fit every k in ``k_range``; each k also tries a warm start from k-1.

    The warm start reuses the previous modes plus the worst-fit row as a new
    mode, so its starting cost is at most the previous optimum and the
    resulting curve is non-increasing for consecutive k.
    """
    ks = list(k_range)
    points = np.asarray(points)
    for k in ks:
        _validate(points, k)
    codec = _Dense(points)
    models: list[KModesModel] = []
    prev = None
    for k in ks:
        model = fit_kmodes(points, k, init, seed, max_iter, n_restarts, columns)
        if prev is not None and prev.k == k - 1:
            dense_prev = _encode(codec, prev.modes)
            own = hamming_matrix(codec.dense, dense_prev)[np.arange(points.shape[0]), prev.assignments]
            worst = int(np.argmax(own))
            start = np.vstack([dense_prev, codec.dense[worst]])
            res = _iterate(codec, start, max_iter)
            if res[2] < model.cost:
                model = _to_model(codec, k, res, seed, tuple(columns), "warm_start", -1)
        models.append(model)
        prev = model
    return models


def _encode(codec: _Dense, modes: np.ndarray) -> np.ndarray:
    out = np.empty(modes.shape, dtype=np.intp)
    for j, lev in enumerate(codec.levels):
        out[:, j] = np.searchsorted(lev, modes[:, j])
    return out


def elbow_sweep(
    points,
    k_range: Sequence[int],
    seed: int = 0,
    n_restarts: int = 10,
    init: str = "random_points",
    max_iter: int = 100,
) -> list[tuple[int, int]]:
    return [(m.k, m.cost) for m in sweep_kmodes(points, k_range, seed, n_restarts, init, max_iter)]
