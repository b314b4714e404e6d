"""Exact t-SNE (O(n^2) per iteration) for visualizing clustered survey data.

High-dimensional affinities are Gaussian conditionals calibrated per point to a
target perplexity, symmetrized into a joint distribution. Low-dimensional
affinities use the Student-t (Cauchy) kernel. The map is found by full-batch
gradient descent on KL(P || Q) with momentum, per-coordinate adaptive gains and
early exaggeration.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConstantColumnWarning, PerplexityTooLarge, SurveySegError, TooManyPoints
from .ingest import Dataset
from .rng import make_rng

MAX_POINTS = 5000
FLOOR = 1e-12
# bisection bracket for log(beta * median distance)
_LOG_BETA_RANGE = 40.0
_MAX_SEARCH = 50


class PerplexityRangeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    early_exaggeration: float = 4.0
    exaggeration_iters: int = 100
    adaptive_gains: bool = True
    min_gain: float = 0.01
    init_std: float = 1e-4
    record_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.perplexity <= 0:
            raise SurveySegError("perplexity must be positive")
        if self.iterations < 1:
            raise SurveySegError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise SurveySegError("learning_rate must be positive")
        if not 5 <= self.perplexity <= 50:
            warnings.warn(
                f"perplexity {self.perplexity:g} is outside the 5-50 recommended range",
                PerplexityRangeWarning,
                stacklevel=3,
            )


@dataclass(eq=False)
class AffinityMatrix:
    conditional: np.ndarray  # row i holds p_{j|i}
    sigmas: np.ndarray
    perplexity: float

    def realized_perplexity(self) -> np.ndarray:
        p = self.conditional
        with np.errstate(divide="ignore", invalid="ignore"):
            h = -np.where(p > 0, p * np.log2(p), 0.0).sum(axis=1)
        return 2.0**h

    @property
    def degenerate(self) -> np.ndarray:
        """Rows whose neighbours are all equidistant, so no bandwidth changes them."""
        return np.isinf(self.sigmas)


@dataclass(eq=False)
class Embedding:
    coords: np.ndarray
    final_kl: float
    kl_trace: list[tuple[int, float]]
    config: TsneConfig
    seed: int
    sigmas: np.ndarray = field(repr=False, default=None)

    @property
    def initial_kl(self) -> float:
        return self.kl_trace[0][1]

    def to_csv(self, labels: Sequence[int] | None = None) -> str:
        lines = ["row_id,y1,y2,cluster"]
        for i, (a, b) in enumerate(self.coords):
            lab = "" if labels is None else str(int(labels[i]))
            lines.append(f"{i},{a!r},{b!r},{lab}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "final_kl": self.final_kl,
            "kl_trace": [[i, v] for i, v in self.kl_trace],
            "config": asdict(self.config),
            "seed": self.seed,
        }


def pairwise_sq_dists(points) -> np.ndarray:
    """Squared Euclidean distances, computed from explicit differences in row blocks."""
    x = np.asarray(points, dtype=float)
    if x.ndim != 2 or x.shape[1] < 1:
        raise SurveySegError("points must be an n x d matrix with d >= 1")
    n, d = x.shape
    if d <= 32:
        out = np.zeros((n, n))
        for j in range(d):
            out += (x[:, j, None] - x[None, :, j]) ** 2
    else:
        out = np.empty((n, n))
        step = max(1, 2_000_000 // max(1, n * d))
        for start in range(0, n, step):
            blk = x[start : start + step]
            out[start : start + step] = ((blk[:, None, :] - x[None, :, :]) ** 2).sum(axis=2)
    out = 0.5 * (out + out.T)
    np.fill_diagonal(out, 0.0)
    return out


def _row_probs(d: np.ndarray, beta: np.ndarray):
    """Conditional probabilities and natural-log entropy for each row at precision ``beta``."""
    shifted = d - d.min(axis=1, keepdims=True)
    w = np.exp(-beta[:, None] * shifted)
    z = w.sum(axis=1)
    p = w / z[:, None]
    h = np.log(z) + beta * (p * shifted).sum(axis=1)
    return p, h


def calibrate_affinities(dists, perplexity: float) -> AffinityMatrix:
    """Per-row bandwidth search so that 2**H(P_i) equals ``perplexity``.

    Bisection runs on log(beta) with beta = 1/(2 sigma^2), for at most 50 steps
    per row. A row stops early once its perplexity is within 1e-5 of target
    (an entropy tolerance of 1e-5/perplexity nats).
    """
    dists = np.asarray(dists, dtype=float)
    n = dists.shape[0]
    if not perplexity < n - 1:
        raise PerplexityTooLarge(f"perplexity {perplexity} must be < n - 1 = {n - 1}")
    off = ~np.eye(n, dtype=bool)
    d = dists[off].reshape(n, n - 1)
    spread = d.max(axis=1) - d.min(axis=1)
    degenerate = spread <= 1e-12 * np.maximum(1.0, d.max(axis=1))
    scale = np.median(d, axis=1)
    scale = np.where(scale > 0, scale, np.where(d.max(axis=1) > 0, d.max(axis=1), 1.0))

    target = math.log(perplexity)
    tol = 1e-5 / perplexity
    lo = np.full(n, -_LOG_BETA_RANGE)
    hi = np.full(n, _LOG_BETA_RANGE)
    t = np.zeros(n)
    done = degenerate.copy()
    for _ in range(_MAX_SEARCH):
        _, h = _row_probs(d, np.exp(t) / scale)
        err = h - target
        done |= np.abs(err) < tol
        active = ~done
        if not active.any():
            break
        # entropy falls as beta grows
        lo = np.where(active & (err > 0), t, lo)
        hi = np.where(active & (err <= 0), t, hi)
        t = np.where(active, 0.5 * (lo + hi), t)
    beta = np.exp(t) / scale
    p, _ = _row_probs(d, beta)
    p[degenerate] = 1.0 / (n - 1)
    cond = np.zeros((n, n))
    cond[off] = p.reshape(-1)
    sigmas = np.where(degenerate, np.inf, np.sqrt(1.0 / (2.0 * beta)))
    return AffinityMatrix(cond, sigmas, float(perplexity))


def _floor_normalize(m: np.ndarray) -> np.ndarray:
    out = np.maximum(m, FLOOR)
    np.fill_diagonal(out, 0.0)
    return out / out.sum()


def symmetrize(aff: AffinityMatrix) -> np.ndarray:
    p = aff.conditional
    n = p.shape[0]
    return _floor_normalize((p + p.T) / (2.0 * n))


def low_dim_affinities(coords):
    y = np.asarray(coords, dtype=float)
    num = 1.0 / (1.0 + pairwise_sq_dists(y))
    np.fill_diagonal(num, 0.0)
    return _floor_normalize(num), num


def kl_and_gradient(P, coords):
    """KL(P||Q) in nats and its gradient 4 sum_j (P_ij - Q_ij) num_ij (y_i - y_j)."""
    y = np.asarray(coords, dtype=float)
    q, num = low_dim_affinities(y)
    mask = P > 0
    kl = float((P[mask] * np.log(P[mask] / q[mask])).sum())
    w = (P - q) * num
    grad = 4.0 * (w.sum(axis=1)[:, None] * y - w @ y)
    return kl, grad


def _kl(P, y) -> float:
    q, _ = low_dim_affinities(y)
    mask = P > 0
    return float((P[mask] * np.log(P[mask] / q[mask])).sum())


def fit_tsne(points, config: TsneConfig | None = None, init=None) -> Embedding:
    """Embed ``points`` in 2-D. ``init`` overrides the seeded Gaussian start."""
    config = config or TsneConfig()
    x = np.asarray(points, dtype=float)
    n = x.shape[0]
    if n < 3:
        raise SurveySegError("t-SNE needs at least 3 points")
    if n > MAX_POINTS:
        raise TooManyPoints(f"{n} points exceeds the exact t-SNE cap of {MAX_POINTS}; subsample first")
    aff = calibrate_affinities(pairwise_sq_dists(x), config.perplexity)
    P = symmetrize(aff)

    if init is None:
        y = make_rng(config.seed).normal(0.0, config.init_std, size=(n, 2))
    else:
        y = np.array(init, dtype=float)
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    trace = [(0, _kl(P, y))]
    for it in range(config.iterations):
        exag = config.early_exaggeration if it < config.exaggeration_iters else 1.0
        _, grad = kl_and_gradient(P * exag, y)
        mom = config.momentum if it < config.momentum_switch else config.final_momentum
        if config.adaptive_gains:
            same = (grad > 0) == (update > 0)
            gains = np.where(same, gains * 0.8, gains + 0.2)
            np.maximum(gains, config.min_gain, out=gains)
        update = mom * update - config.learning_rate * gains * grad
        y = y + update
        if (it + 1) % config.record_every == 0 and it + 1 < config.iterations:
            trace.append((it + 1, _kl(P, y)))
    final = _kl(P, y)
    trace.append((config.iterations, final))
    return Embedding(y, final, trace, config, config.seed, aff.sigmas)


def encoded_feature_names(data: Dataset, columns: Sequence[str]) -> list[str]:
    names = []
    for c in columns:
        col = data.column_schema(c)
        if col.is_categorical:
            names.extend(f"{c}={code}" for code in col.codes)
        else:
            names.append(c)
    return names


def encode_mixed_for_tsne(data: Dataset, columns: Sequence[str]) -> np.ndarray:
    """One-hot categorical columns (schema code order), z-score numeric ones, in ``columns`` order."""
    blocks = []
    for c in columns:
        col = data.column_schema(c)
        if data.missing(c).any():
            raise SurveySegError(f"column {c!r} has missing cells; run complete_cases first")
        v = data.column(c)
        if col.is_categorical:
            blocks.append(np.column_stack([(v == code).astype(float) for code in col.codes]))
        else:
            sd = v.std()
            if sd == 0:
                warnings.warn(f"column {c!r} is constant; encoded as zeros", ConstantColumnWarning, stacklevel=2)
                blocks.append(np.zeros((data.n_rows, 1)))
            else:
                blocks.append(((v - v.mean()) / sd)[:, None])
    if not blocks:
        return np.zeros((data.n_rows, 0))
    return np.hstack(blocks)
