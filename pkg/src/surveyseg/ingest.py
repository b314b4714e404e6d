"""Schema-driven loading of delimiter-separated survey files.

Categorical cells are kept as the survey's own integer codes and numeric cells
as float64. Cells whose value is one of the column's ``missing_codes`` (or an
empty field) are flagged in a boolean ``mask`` but keep their raw value, so a
load/write round trip reproduces the file.

Schema files are JSON::

    {"columns": [
        {"name": "CITZNSTP_A", "kind": "categorical",
         "categories": [{"code": 1, "label": "Yes"}, {"code": 2, "label": "No"}],
         "missing_codes": [7, 8, 9]},
        {"name": "EMPWKHRS3_A", "kind": "numeric", "missing_codes": [97, 98, 99]}
    ]}
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadCode,
    MalformedRow,
    NumericParse,
    SampleTooLarge,
    SchemaError,
    UnknownColumn,
)
from .rng import RNG_ALGORITHM, make_rng

log = logging.getLogger(__name__)

CATEGORICAL = "categorical"
NUMERIC = "numeric"

# stored in place of a categorical code when the field was empty
EMPTY_CODE = np.iinfo(np.int64).min


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str
    categories: tuple[tuple[int, str], ...] = ()
    missing_codes: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, NUMERIC):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        object.__setattr__(
            self, "categories", tuple((int(c), str(l)) for c, l in self.categories)
        )
        object.__setattr__(self, "missing_codes", frozenset(int(c) for c in self.missing_codes))
        codes = [c for c, _ in self.categories]
        if len(set(codes)) != len(codes):
            raise SchemaError(f"column {self.name!r}: duplicate category codes")
        if self.missing_codes & set(codes):
            raise SchemaError(f"column {self.name!r}: missing codes overlap categories")
        if self.kind == CATEGORICAL and not codes:
            raise SchemaError(f"column {self.name!r}: categorical column without categories")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    @property
    def codes(self) -> tuple[int, ...]:
        return tuple(c for c, _ in self.categories)

    def label(self, code: int) -> str:
        for c, lab in self.categories:
            if c == code:
                return lab
        raise BadCode(f"column {self.name!r}: code {code} not in categories")

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.is_categorical:
            d["categories"] = [{"code": c, "label": l} for c, l in self.categories]
        d["missing_codes"] = sorted(self.missing_codes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSchema":
        try:
            cats = tuple((c["code"], c["label"]) for c in d.get("categories", ()))
            return cls(d["name"], d["kind"], cats, frozenset(d.get("missing_codes", ())))
        except KeyError as exc:
            raise SchemaError(f"schema entry missing key {exc}") from None


def schema_from_dict(doc: dict) -> list[ColumnSchema]:
    return [ColumnSchema.from_dict(c) for c in doc["columns"]]


def schema_to_dict(schema: Sequence[ColumnSchema]) -> dict:
    return {"columns": [c.to_dict() for c in schema]}


def load_schema(path) -> list[ColumnSchema]:
    with open(path, encoding="utf-8") as fh:
        return schema_from_dict(json.load(fh))


def dump_schema(schema: Sequence[ColumnSchema], path) -> None:
    Path(path).write_text(json.dumps(schema_to_dict(schema), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable column-typed table.

    ``values`` maps column name to a length-n array (int64 codes for categorical
    columns, float64 for numeric ones); ``mask[i, j]`` is True when cell
    ``(i, j)`` is missing.
    """

    schema: tuple[ColumnSchema, ...]
    values: dict[str, np.ndarray]
    mask: np.ndarray
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "schema", tuple(self.schema))
        object.__setattr__(self, "_index", {c.name: j for j, c in enumerate(self.schema)})
        n = self.mask.shape[0]
        if self.mask.shape != (n, len(self.schema)):
            raise MalformedRow("mask shape does not match schema")
        vals = {}
        for col in self.schema:
            dtype = np.int64 if col.is_categorical else np.float64
            arr = np.array(self.values[col.name], dtype=dtype)
            if arr.shape != (n,):
                raise MalformedRow(f"column {col.name!r} has {arr.shape[0]} cells, expected {n}")
            arr.setflags(write=False)
            vals[col.name] = arr
        mask = np.array(self.mask, dtype=bool)
        mask.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "mask", mask)

    @property
    def n_rows(self) -> int:
        return self.mask.shape[0]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.schema]

    def column_schema(self, name: str) -> ColumnSchema:
        return self.schema[self.index(name)]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownColumn(f"unknown column {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        self.index(name)
        return self.values[name]

    def missing(self, name: str) -> np.ndarray:
        return self.mask[:, self.index(name)]

    def missing_counts(self) -> dict[str, int]:
        return {c.name: int(self.mask[:, j].sum()) for j, c in enumerate(self.schema)}

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.intp)
        return Dataset(self.schema, {k: v[rows] for k, v in self.values.items()}, self.mask[rows])

    @property
    def rows(self) -> list[list]:
        """Row-major view; missing cells are ``None``."""
        out = []
        for i in range(self.n_rows):
            row = []
            for j, col in enumerate(self.schema):
                if self.mask[i, j]:
                    row.append(None)
                elif col.is_categorical:
                    row.append(int(self.values[col.name][i]))
                else:
                    row.append(float(self.values[col.name][i]))
            out.append(row)
        return out


def _format_number(x: float) -> str:
    if math.isnan(x):
        return ""
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _parse_cell(col: ColumnSchema, text: str, row_no: int):
    """Return (value, is_missing) for one raw field."""
    text = text.strip()
    if text == "":
        return (EMPTY_CODE if col.is_categorical else math.nan), True
    if col.is_categorical:
        try:
            code = int(text)
        except ValueError:
            raise BadCode(f"row {row_no}, column {col.name!r}: {text!r} is not an integer code") from None
        if code in col.missing_codes:
            return code, True
        if code not in col.codes:
            raise BadCode(f"row {row_no}, column {col.name!r}: code {code} is neither a category nor a missing code")
        return code, False
    try:
        x = float(text)
    except ValueError:
        raise NumericParse(f"row {row_no}, column {col.name!r}: {text!r} is not numeric") from None
    if not math.isfinite(x):
        raise NumericParse(f"row {row_no}, column {col.name!r}: non-finite value {text!r}")
    return x, x.is_integer() and int(x) in col.missing_codes


def read_csv_text(text_lines: Iterable[str], schema: Sequence[ColumnSchema], delimiter: str = ",") -> Dataset:
    schema = list(schema)
    reader = csv.reader(text_lines, delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise MalformedRow("file has no header row") from None
    by_name = {c.name: c for c in schema}
    unknown = [h for h in header if h not in by_name]
    absent = [c.name for c in schema if c.name not in header]
    if unknown or absent or len(set(header)) != len(header):
        raise UnknownColumn(f"header/schema mismatch: unknown={unknown} missing={absent}")
    position = [header.index(c.name) for c in schema]

    cols = {c.name: [] for c in schema}
    mask_rows = []
    for row_no, fields in enumerate(reader, start=1):
        if not fields:
            continue
        if len(fields) != len(header):
            raise MalformedRow(f"row {row_no}: {len(fields)} cells, expected {len(header)}")
        mrow = []
        for col, pos in zip(schema, position):
            value, miss = _parse_cell(col, fields[pos], row_no)
            cols[col.name].append(value)
            mrow.append(miss)
        mask_rows.append(mrow)
    mask = np.array(mask_rows, dtype=bool).reshape(len(mask_rows), len(schema))
    data = Dataset(tuple(schema), cols, mask)
    log.info("read %d rows; missing per column: %s", data.n_rows, data.missing_counts())
    return data


def load_csv(path, schema: Sequence[ColumnSchema], delimiter: str = ",") -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        return read_csv_text(fh, schema, delimiter)


def to_csv_text(data: Dataset, delimiter: str = ",") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(data.names)
    cols = []
    for col in data.schema:
        v = data.values[col.name]
        if col.is_categorical:
            cols.append(["" if c == EMPTY_CODE else str(int(c)) for c in v])
        else:
            cols.append([_format_number(float(x)) for x in v])
    for i in range(data.n_rows):
        w.writerow([c[i] for c in cols])
    return buf.getvalue()


def write_csv(data: Dataset, path, delimiter: str = ",") -> None:
    Path(path).write_text(to_csv_text(data, delimiter), encoding="utf-8")


@dataclass(frozen=True)
class SampleSpec:
    size: int
    seed: int

    def __post_init__(self):
        if self.size < 0:
            raise SampleTooLarge("sample size must be non-negative")


def sample_indices(n: int, size: int, seed: int) -> np.ndarray:
    """Sorted indices of a uniform sample without replacement.

    Partial Fisher-Yates over ``range(n)``; only swapped slots are stored, so the
    extra memory is O(size).
    """
    if size > n:
        raise SampleTooLarge(f"sample size {size} exceeds {n} rows")
    rng = make_rng(seed)
    swapped: dict[int, int] = {}
    picked = np.empty(size, dtype=np.intp)
    for i in range(size):
        j = int(rng.integers(i, n))
        picked[i] = swapped.get(j, j)
        swapped[j] = swapped.get(i, i)
    picked.sort()
    return picked


def sample_rows(data: Dataset, spec: SampleSpec) -> Dataset:
    idx = sample_indices(data.n_rows, spec.size, spec.seed)
    log.info("sampled %d of %d rows (seed=%d, rng=%s)", spec.size, data.n_rows, spec.seed, RNG_ALGORITHM)
    return data.take(idx)


def complete_cases(data: Dataset, columns: Sequence[str]) -> Dataset:
    """Listwise deletion over ``columns``."""
    idx = [data.index(c) for c in columns]
    if not idx:
        return data
    keep = ~data.mask[:, idx].any(axis=1)
    dropped = int(data.n_rows - keep.sum())
    log.info("complete_cases: dropped %d of %d rows", dropped, data.n_rows)
    if dropped == 0:
        return data
    return data.take(np.flatnonzero(keep))


def dataset_from_rows(schema: Sequence[ColumnSchema], rows: Sequence[Sequence]) -> Dataset:
    """Build a Dataset from python rows; ``None`` marks a missing cell.

    Codes are validated exactly as :func:`load_csv` would.
    """
    lines = [[c.name for c in schema]]
    for r in rows:
        lines.append(["" if v is None else _format_number(float(v)) for v in r])
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(lines)
    return read_csv_text(io.StringIO(buf.getvalue()), schema)
