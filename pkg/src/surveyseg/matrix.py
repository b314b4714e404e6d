"""Dense views of a Dataset used by the clustering and boosting code."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, MissingData, NoNumericAndNoCategorical, NotCategorical
from .ingest import Dataset


def _check_complete(data: Dataset, columns: Sequence[str]) -> None:
    idx = [data.index(c) for c in columns]
    if idx and data.mask[:, idx].any():
        bad = [c for c in columns if data.missing(c).any()]
        raise MissingData(f"missing cells in {bad}; run complete_cases first")


def categorical_matrix(data: Dataset, columns: Sequence[str]) -> np.ndarray:
    """n x m int64 code matrix for purely categorical clustering."""
    for c in columns:
        if not data.column_schema(c).is_categorical:
            raise NotCategorical(f"column {c!r} is numeric; k-modes needs categorical columns")
    _check_complete(data, columns)
    if not columns:
        return np.zeros((data.n_rows, 0), dtype=np.int64)
    return np.column_stack([data.column(c) for c in columns]).astype(np.int64)


@dataclass(frozen=True, eq=False)
class MixedMatrix:
    """Numeric block (n x p floats) next to a categorical block (n x q codes)."""

    numeric: np.ndarray
    categorical: np.ndarray
    numeric_names: tuple[str, ...] = ()
    categorical_names: tuple[str, ...] = ()

    def __post_init__(self):
        num = np.asarray(self.numeric, dtype=float)
        cat = np.asarray(self.categorical, dtype=np.int64)
        if num.ndim != 2 or cat.ndim != 2:
            raise DimensionMismatch("numeric and categorical blocks must be 2-D")
        if num.shape[0] != cat.shape[0]:
            raise DimensionMismatch("numeric and categorical blocks have different row counts")
        if num.shape[1] + cat.shape[1] == 0:
            raise NoNumericAndNoCategorical("no numeric and no categorical columns")
        if not np.isfinite(num).all():
            raise MissingData("numeric block has non-finite values")
        object.__setattr__(self, "numeric", num)
        object.__setattr__(self, "categorical", cat)
        nn = tuple(self.numeric_names) or tuple(f"num{j}" for j in range(num.shape[1]))
        cn = tuple(self.categorical_names) or tuple(f"cat{j}" for j in range(cat.shape[1]))
        if len(nn) != num.shape[1] or len(cn) != cat.shape[1]:
            raise DimensionMismatch("column names do not match block widths")
        object.__setattr__(self, "numeric_names", nn)
        object.__setattr__(self, "categorical_names", cn)

    @classmethod
    def from_dataset(cls, data: Dataset, columns: Sequence[str]) -> "MixedMatrix":
        _check_complete(data, columns)
        num = [c for c in columns if not data.column_schema(c).is_categorical]
        cat = [c for c in columns if data.column_schema(c).is_categorical]
        n = data.n_rows
        nblock = np.column_stack([data.column(c) for c in num]) if num else np.zeros((n, 0))
        cblock = np.column_stack([data.column(c) for c in cat]) if cat else np.zeros((n, 0), dtype=np.int64)
        return cls(nblock, cblock, tuple(num), tuple(cat))

    @property
    def n_rows(self) -> int:
        return self.numeric.shape[0]

    @property
    def p(self) -> int:
        return self.numeric.shape[1]

    @property
    def q(self) -> int:
        return self.categorical.shape[1]

    @property
    def names(self) -> tuple[str, ...]:
        return self.numeric_names + self.categorical_names

    @property
    def means(self) -> np.ndarray:
        return self.numeric.mean(axis=0) if self.n_rows else np.zeros(self.p)

    @property
    def stds(self) -> np.ndarray:
        return self.numeric.std(axis=0) if self.n_rows else np.zeros(self.p)

    def take(self, rows) -> "MixedMatrix":
        rows = np.asarray(rows, dtype=np.intp)
        return MixedMatrix(self.numeric[rows], self.categorical[rows], self.numeric_names, self.categorical_names)
