"""Chi-square independence test and two-proportion z-test on count tables.

Condition checks (random sample, large expected counts, the 10% rule for
sampling without replacement) never block a computation; they are attached to
the result so that a caller can warn or refuse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateMargins,
    DegeneratePool,
    EmptyTable,
    MissingData,
    NotCategorical,
    SurveySegError,
)
from .ingest import Dataset
from .special import chi_square_sf, normal_sf

ALTERNATIVES = ("greater", "less", "two_sided")

MIN_EXPECTED = 5.0
MIN_SUCCESS_FAILURE = 10.0
MAX_SAMPLING_FRACTION = 0.10


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    observed: np.ndarray
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]

    def __post_init__(self):
        obs = np.asarray(self.observed, dtype=float)
        if obs.ndim != 2 or obs.shape[0] < 2 or obs.shape[1] < 2:
            raise SurveySegError("contingency table must be at least 2x2")
        if (obs < 0).any() or not np.all(obs == np.round(obs)):
            raise SurveySegError("counts must be non-negative integers")
        obs = obs.astype(np.int64)
        obs.setflags(write=False)
        object.__setattr__(self, "observed", obs)
        rl = tuple(self.row_labels) if self.row_labels else tuple(f"row{i}" for i in range(obs.shape[0]))
        cl = tuple(self.col_labels) if self.col_labels else tuple(f"col{j}" for j in range(obs.shape[1]))
        if len(rl) != obs.shape[0] or len(cl) != obs.shape[1]:
            raise SurveySegError("label count does not match table shape")
        object.__setattr__(self, "row_labels", rl)
        object.__setattr__(self, "col_labels", cl)

    @classmethod
    def from_counts(cls, counts, row_labels=(), col_labels=()) -> "ContingencyTable":
        return cls(np.asarray(counts), tuple(row_labels), tuple(col_labels))

    @property
    def total(self) -> int:
        return int(self.observed.sum())

    def to_dict(self) -> dict:
        return {
            "observed": self.observed.tolist(),
            "row_labels": list(self.row_labels),
            "col_labels": list(self.col_labels),
        }


@dataclass
class ConditionReport:
    random_ok: bool
    counts_ok: bool
    offending: list = field(default_factory=list)
    independence_ok: bool | None = None
    details: list[str] = field(default_factory=list)

    @property
    def all_ok(self) -> bool:
        return self.random_ok and self.counts_ok and self.independence_ok is not False

    def to_dict(self) -> dict:
        return {
            "random_ok": self.random_ok,
            "counts_ok": self.counts_ok,
            "offending": self.offending,
            "independence_ok": self.independence_ok,
            "details": self.details,
        }


def verdict(p_value: float, alpha: float) -> str:
    if p_value < alpha:
        return f"reject H0 at alpha={alpha:g}"
    return f"fail to reject H0 at alpha={alpha:g}"


@dataclass
class ChiSquareResult:
    statistic: float
    df: int
    p_value: float
    expected: np.ndarray
    conditions: ConditionReport
    alpha: float = 0.05

    @property
    def reject(self) -> bool:
        return self.p_value < self.alpha

    @property
    def verdict(self) -> str:
        return verdict(self.p_value, self.alpha)

    def to_dict(self) -> dict:
        return {
            "test": "chi_square_independence",
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "alpha": self.alpha,
            "expected": self.expected.tolist(),
            "expected_rounded": np.round(self.expected).astype(int).tolist(),
            "conditions": self.conditions.to_dict(),
            "verdict": self.verdict,
        }


@dataclass
class TwoPropZResult:
    p1: float
    p2: float
    pooled: float
    z: float
    p_value: float
    alternative: str
    conditions: ConditionReport
    alpha: float = 0.05

    @property
    def reject(self) -> bool:
        return self.p_value < self.alpha

    @property
    def verdict(self) -> str:
        return verdict(self.p_value, self.alpha)

    def to_dict(self) -> dict:
        return {
            "test": "two_proportion_z",
            "p1": self.p1,
            "p2": self.p2,
            "pooled": self.pooled,
            "z": self.z,
            "p_value": self.p_value,
            "alternative": self.alternative,
            "alpha": self.alpha,
            "conditions": self.conditions.to_dict(),
            "verdict": self.verdict,
        }


def crosstab(data: Dataset, row_col: str, col_col: str) -> ContingencyTable:
    rs, cs = data.column_schema(row_col), data.column_schema(col_col)
    for s in (rs, cs):
        if not s.is_categorical:
            raise NotCategorical(f"column {s.name!r} is not categorical")
    if data.missing(row_col).any() or data.missing(col_col).any():
        raise MissingData(f"missing cells in {row_col!r}/{col_col!r}; run complete_cases first")
    rpos = {c: i for i, c in enumerate(rs.codes)}
    cpos = {c: j for j, c in enumerate(cs.codes)}
    ri = np.array([rpos[c] for c in data.column(row_col)], dtype=np.intp)
    ci = np.array([cpos[c] for c in data.column(col_col)], dtype=np.intp)
    counts = np.zeros((len(rpos), len(cpos)), dtype=np.int64)
    np.add.at(counts, (ri, ci), 1)
    return ContingencyTable(
        counts,
        tuple(lab for _, lab in rs.categories),
        tuple(lab for _, lab in cs.categories),
    )


def expected_counts(table: ContingencyTable) -> np.ndarray:
    obs = table.observed.astype(float)
    total = obs.sum()
    if total <= 0:
        raise EmptyTable("table has no observations")
    return np.outer(obs.sum(axis=1), obs.sum(axis=0)) / total


def chi_square_independence(
    table: ContingencyTable,
    alpha: float = 0.05,
    population_n: int | None = None,
    random_sample: bool = True,
) -> ChiSquareResult:
    """Pearson chi-square test of independence, without continuity correction."""
    expected = expected_counts(table)
    obs = table.observed.astype(float)
    if (obs.sum(axis=1) == 0).any() or (obs.sum(axis=0) == 0).any():
        raise DegenerateMargins("a row or column total is zero; that variable is constant in-sample")
    statistic = float(((obs - expected) ** 2 / expected).sum())
    r, c = obs.shape
    df = (r - 1) * (c - 1)
    p_value = chi_square_sf(statistic, df)

    details = []
    offending = [
        [i, j, float(expected[i, j])]
        for i in range(r)
        for j in range(c)
        if expected[i, j] < MIN_EXPECTED
    ]
    counts_ok = not offending
    details.append(
        "expected counts all >= 5" if counts_ok else f"{len(offending)} expected count(s) below 5"
    )
    independence_ok = None
    n = table.total
    if population_n is not None:
        independence_ok = n <= MAX_SAMPLING_FRACTION * population_n
        details.append(
            f"n={n} {'<=' if independence_ok else '>'} 10% of N={population_n} ({MAX_SAMPLING_FRACTION * population_n:g})"
        )
    if not random_sample:
        details.append("sample not asserted random")
    cond = ConditionReport(random_sample, counts_ok, offending, independence_ok, details)
    return ChiSquareResult(statistic, df, p_value, expected, cond, alpha)


def two_prop_z(
    x1: int,
    n1: int,
    x2: int,
    n2: int,
    alternative: str = "greater",
    alpha: float = 0.05,
    population_n: int | None = None,
    random_sample: bool = True,
) -> TwoPropZResult:
    """Pooled two-proportion z-test of H0: p1 = p2."""
    if alternative not in ALTERNATIVES:
        raise SurveySegError(f"alternative must be one of {ALTERNATIVES}")
    if n1 <= 0 or n2 <= 0 or not (0 <= x1 <= n1) or not (0 <= x2 <= n2):
        raise SurveySegError("need 0 <= x_i <= n_i and n_i > 0")
    p1, p2 = x1 / n1, x2 / n2
    pooled = (x1 + x2) / (n1 + n2)
    if pooled in (0.0, 1.0):
        raise DegeneratePool("pooled proportion is 0 or 1; the standard error vanishes")
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2))
    z = (p1 - p2) / se
    if alternative == "greater":
        p_value = normal_sf(z)
    elif alternative == "less":
        p_value = normal_sf(-z)
    else:
        p_value = min(1.0, 2.0 * normal_sf(abs(z)))

    offending = []
    details = []
    for name, n in (("n1", n1), ("n2", n2)):
        succ, fail = n * pooled, n * (1.0 - pooled)
        details.append(f"{name}*p_c={succ:.1f}, {name}*(1-p_c)={fail:.1f}")
        if succ < MIN_SUCCESS_FAILURE:
            offending.append([name, "success", succ])
        if fail < MIN_SUCCESS_FAILURE:
            offending.append([name, "failure", fail])
    independence_ok = None
    if population_n is not None:
        independence_ok = (n1 + n2) <= MAX_SAMPLING_FRACTION * population_n
        details.append(f"n={n1 + n2} {'<=' if independence_ok else '>'} 10% of N={population_n}")
    cond = ConditionReport(random_sample, not offending, offending, independence_ok, details)
    return TwoPropZResult(p1, p2, pooled, z, p_value, alternative, cond, alpha)
