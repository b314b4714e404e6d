"""Seeded generator of survey-like tables with planted cluster structure.

A generator spec is JSON::

    {"n_rows": 29500, "noise_rate": 0.05, "missing_rate": 0.0, "seed": 0,
     "numeric_bounds": {"EMPWKHRS3_A": [1, 95]},
     "blueprints": [
        {"name": "...", "weight": 0.25,
         "categorical": {"EDUCP_A": {"1": 0.9, "2": 0.1}},
         "numeric": {"EMPWKHRS3_A": {"mean": 37.9, "std": 6.0}}}]}

Numeric draws are Gaussian, clipped to ``numeric_bounds`` (when given) and
rounded to whole numbers, the way the survey records hours and days.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Sequence

import numpy as np

from .errors import SchemaMismatch, SurveySegError
from .ingest import ColumnSchema, Dataset, schema_from_dict
from .rng import make_rng


@dataclass(frozen=True)
class Blueprint:
    weight: float
    categorical: dict[str, dict[int, float]]
    numeric: dict[str, tuple[float, float]]  # name -> (mean, std)
    name: str = ""


@dataclass(frozen=True)
class GeneratorSpec:
    n_rows: int
    blueprints: tuple[Blueprint, ...]
    noise_rate: float = 0.0
    missing_rate: float = 0.0
    seed: int = 0
    numeric_bounds: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "blueprints", tuple(self.blueprints))
        if self.n_rows < 0:
            raise SurveySegError("n_rows must be non-negative")
        if not self.blueprints:
            raise SurveySegError("at least one blueprint is required")
        total = sum(b.weight for b in self.blueprints)
        if abs(total - 1.0) > 1e-9 or any(b.weight < 0 for b in self.blueprints):
            raise SurveySegError(f"blueprint weights must be non-negative and sum to 1, got {total}")
        for rate in (self.noise_rate, self.missing_rate):
            if not 0.0 <= rate <= 1.0:
                raise SurveySegError("noise_rate and missing_rate must lie in [0, 1]")

    @property
    def weights(self) -> np.ndarray:
        return np.array([b.weight for b in self.blueprints])


def spec_from_dict(doc: dict) -> GeneratorSpec:
    blueprints = []
    for b in doc["blueprints"]:
        cat = {name: {int(code): float(p) for code, p in dist.items()} for name, dist in b.get("categorical", {}).items()}
        num = {name: (float(v["mean"]), float(v["std"])) for name, v in b.get("numeric", {}).items()}
        blueprints.append(Blueprint(float(b["weight"]), cat, num, b.get("name", "")))
    bounds = {k: (float(lo), float(hi)) for k, (lo, hi) in doc.get("numeric_bounds", {}).items()}
    return GeneratorSpec(
        n_rows=int(doc["n_rows"]),
        blueprints=tuple(blueprints),
        noise_rate=float(doc.get("noise_rate", 0.0)),
        missing_rate=float(doc.get("missing_rate", 0.0)),
        seed=int(doc.get("seed", 0)),
        numeric_bounds=bounds,
    )


def spec_to_dict(spec: GeneratorSpec) -> dict:
    return {
        "n_rows": spec.n_rows,
        "noise_rate": spec.noise_rate,
        "missing_rate": spec.missing_rate,
        "seed": spec.seed,
        "numeric_bounds": {k: list(v) for k, v in spec.numeric_bounds.items()},
        "blueprints": [
            {
                "name": b.name,
                "weight": b.weight,
                "categorical": {k: {str(c): p for c, p in d.items()} for k, d in b.categorical.items()},
                "numeric": {k: {"mean": m, "std": s} for k, (m, s) in b.numeric.items()},
            }
            for b in spec.blueprints
        ],
    }


def load_spec(path) -> GeneratorSpec:
    with open(path, encoding="utf-8") as fh:
        return spec_from_dict(json.load(fh))


def _check(spec: GeneratorSpec, schema: Sequence[ColumnSchema]) -> None:
    names = {c.name for c in schema}
    for i, b in enumerate(spec.blueprints):
        given = set(b.categorical) | set(b.numeric)
        if given != names:
            extra, absent = sorted(given - names), sorted(names - given)
            raise SchemaMismatch(f"blueprint {i}: unknown variables {extra}, unspecified variables {absent}")
        for col in schema:
            if col.is_categorical:
                dist = b.categorical.get(col.name)
                if dist is None:
                    raise SchemaMismatch(f"blueprint {i}: {col.name!r} is categorical in the schema")
                bad = set(dist) - set(col.codes)
                if bad:
                    raise SchemaMismatch(f"blueprint {i}: {col.name!r} has codes {sorted(bad)} outside the schema")
                if abs(sum(dist.values()) - 1.0) > 1e-9 or min(dist.values()) < 0:
                    raise SchemaMismatch(f"blueprint {i}: {col.name!r} probabilities must sum to 1")
            elif col.name not in b.numeric:
                raise SchemaMismatch(f"blueprint {i}: {col.name!r} is numeric in the schema")
    if spec.missing_rate > 0:
        lacking = [c.name for c in schema if not c.missing_codes]
        if lacking:
            raise SchemaMismatch(f"missing_rate > 0 but columns {lacking} declare no missing codes")
    for name in spec.numeric_bounds:
        if name not in names:
            raise SchemaMismatch(f"numeric_bounds names unknown column {name!r}")


def generate(spec: GeneratorSpec, schema: Sequence[ColumnSchema]) -> tuple[Dataset, np.ndarray]:
    """Draw ``spec.n_rows`` rows; returns the dataset and the true blueprint index per row."""
    schema = tuple(schema)
    _check(spec, schema)
    rng = make_rng(spec.seed, 0)
    n = spec.n_rows
    labels = rng.choice(len(spec.blueprints), size=n, p=spec.weights).astype(np.intp)
    members = [np.flatnonzero(labels == l) for l in range(len(spec.blueprints))]
    values: dict[str, np.ndarray] = {}
    for col in schema:
        lo, hi = spec.numeric_bounds.get(col.name, (-np.inf, np.inf))
        if col.is_categorical:
            v = np.empty(n, dtype=np.int64)
            for b, rows in zip(spec.blueprints, members):
                dist = b.categorical[col.name]
                codes = np.array(col.codes)
                probs = np.array([dist.get(c, 0.0) for c in codes])
                v[rows] = rng.choice(codes, size=len(rows), p=probs / probs.sum())
        else:
            v = np.empty(n)
            for b, rows in zip(spec.blueprints, members):
                mean, std = b.numeric[col.name]
                v[rows] = rng.normal(mean, std, size=len(rows))
            v = np.round(np.clip(v, lo, hi))
        values[col.name] = v

    noise = rng.random((n, len(schema))) < spec.noise_rate
    for j, col in enumerate(schema):
        rows = np.flatnonzero(noise[:, j])
        if col.is_categorical:
            values[col.name][rows] = rng.choice(np.array(col.codes), size=len(rows))
        else:
            lo, hi = spec.numeric_bounds.get(col.name, (None, None))
            if lo is None:
                v = values[col.name]
                lo, hi = (float(v.min()), float(v.max())) if n else (0.0, 0.0)
            values[col.name][rows] = np.round(rng.uniform(lo, hi, size=len(rows)))

    mask = rng.random((n, len(schema))) < spec.missing_rate
    for j, col in enumerate(schema):
        if mask[:, j].any():
            values[col.name][mask[:, j]] = min(col.missing_codes)
    return Dataset(schema, values, mask), labels


def _data_text(name: str) -> str:
    return resources.files("surveyseg").joinpath("data").joinpath(name).read_text(encoding="utf-8")


def demo_schema() -> list[ColumnSchema]:
    """Schema of the bundled demo: three numeric and eight yes/no-style survey items."""
    return schema_from_dict(json.loads(_data_text("demo_schema.json")))


def demo_spec(seed: int | None = None, n_rows: int | None = None) -> GeneratorSpec:
    """Five-profile spec shaped like a segmented immigrant labour-force survey."""
    spec = spec_from_dict(json.loads(_data_text("demo_spec.json")))
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if n_rows is not None:
        changes["n_rows"] = n_rows
    return replace(spec, **changes) if changes else spec


def fixture_tables() -> dict:
    """Published population and sample count tables used as fixtures."""
    return json.loads(_data_text("fixtures.json"))
