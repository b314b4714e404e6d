"""End-to-end demo run and the run manifest.

Artifacts are written through :class:`ArtifactWriter`, which records a SHA-256
digest for each file. The manifest leaves out anything that changes between
otherwise identical runs: the output directory appears as ``$OUT`` and the
timestamp is ``SOURCE_DATE_EPOCH`` when set, otherwise null.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .gbdt import GbdtConfig, fit_gbdt
from .inference import ContingencyTable, chi_square_independence, crosstab, two_prop_z
from .ingest import complete_cases, dump_schema, sample_indices, to_csv_text
from .kmodes import fit_kmodes, sweep_kmodes
from .kprototypes import centroid_table, fit_kprototypes, sweep_kprototypes
from .matrix import MixedMatrix, categorical_matrix
from .metrics import adjusted_rand_index
from .report import (
    cluster_profiles,
    elbow_chart,
    profiles_table,
    scatter_chart,
    segmented_bar,
    typical_member_table,
)
from .rng import RNG_ALGORITHM
from .synth import demo_schema, demo_spec, fixture_tables, generate, spec_to_dict
from .tsne import TsneConfig, encode_mixed_for_tsne, fit_tsne

log = logging.getLogger(__name__)

OUT_ENV = "SURVEYSEG_OUT"
DEFAULT_OUT = "surveyseg_out"

# clustering columns follow the centroid-table layout: two numeric, eight categorical
CLUSTER_COLUMNS = (
    "EMPWKHRS3_A",
    "EMPDYSMSS3_A",
    "EDUCP_A",
    "NOTCOV_A",
    "EMPWRKLSW1_A",
    "CITZNSTP_A",
    "NATUSBORN_A",
    "EMPLASTWK_A",
    "EMPHEALINS_A",
    "EMPSICKLV_A",
)
VALIDATION_COLUMNS = CLUSTER_COLUMNS + ("EMPWRKFT1_A",)


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dumps_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"


@dataclass
class ArtifactWriter:
    root: Path
    outputs: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.root = Path(self.root)
        self.root.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, content) -> Path:
        data = content.encode("utf-8") if isinstance(content, str) else bytes(content)
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self.outputs[name] = sha256_bytes(data)
        return path

    def write_json(self, name: str, doc) -> Path:
        return self.write(name, dumps_json(doc))


@dataclass
class RunManifest:
    command: list[str]
    seeds: dict[str, int]
    inputs: dict[str, str]
    outputs: dict[str, str]
    versions: dict[str, str] = field(default_factory=dict)
    timestamp: str | None = None

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": dict(sorted(self.outputs.items())),
            "versions": self.versions,
            "rng": RNG_ALGORITHM,
            "timestamp": self.timestamp,
        }


def versions() -> dict[str, str]:
    return {"surveyseg": __version__, "numpy": np.__version__, "python": platform.python_version()}


def normalized_command(argv: Sequence[str], out_dir) -> list[str]:
    out = str(out_dir)
    return ["$OUT" if a == out or Path(a) == Path(out) else a.replace(f"={out}", "=$OUT") for a in argv]


def write_manifest(writer: ArtifactWriter, argv: Sequence[str], seeds: dict, inputs: dict | None = None) -> RunManifest:
    manifest = RunManifest(
        command=normalized_command(argv, writer.root),
        seeds=dict(seeds),
        inputs=dict(sorted((inputs or {}).items())),
        outputs=dict(writer.outputs),
        versions=versions(),
        timestamp=os.environ.get("SOURCE_DATE_EPOCH"),
    )
    path = writer.root / "manifest.json"
    path.write_text(dumps_json(manifest.to_dict()), encoding="utf-8")
    return manifest


def assignments_csv(row_ids, labels) -> str:
    lines = ["row_id,cluster"]
    lines += [f"{int(i)},{int(l)}" for i, l in zip(row_ids, labels)]
    return "\n".join(lines) + "\n"


def fixture_bars(writer: ArtifactWriter) -> None:
    """Segmented bars for the bundled published population tables."""
    fx = fixture_tables()
    for key, title in (
        ("population_worked_last_week", "Worked for pay last week, by citizenship"),
        ("population_employer_insurance", "Health insurance offered by last job, by citizenship"),
    ):
        t = fx[key]
        table = ContingencyTable.from_counts(t["counts"], t["rows"], t["cols"])
        spec, svg = segmented_bar(table, title=title)
        writer.write(f"fixture_{key}.svg", svg)
        writer.write(f"fixture_{key}.csv", spec.to_csv())


@dataclass(frozen=True)
class DemoConfig:
    seed: int = 2023
    population: int = 29500
    sample_size: int = 1500
    k: int = 5
    k_max: int = 8
    restarts: int = 10
    tsne_points: int = 500
    tsne_iterations: int = 1000
    perplexity: float = 30.0
    gbdt_rounds: int = 200


def run_demo(out_dir, config: DemoConfig = DemoConfig(), argv: Sequence[str] = ()) -> dict:
    """Generate, sample, test, cluster, embed, validate and report into ``out_dir``."""
    cfg = config
    w = ArtifactWriter(Path(out_dir))
    schema = demo_schema()
    spec = demo_spec(seed=cfg.seed, n_rows=cfg.population)
    population, truth = generate(spec, schema)
    log.info("generated %d rows", population.n_rows)
    dump_path = w.root / "schema.json"
    dump_schema(schema, dump_path)
    w.outputs["schema.json"] = sha256_file(dump_path)
    w.write_json("generator_spec.json", spec_to_dict(spec))
    w.write("population.csv", to_csv_text(population))
    w.write("population_labels.csv", assignments_csv(range(population.n_rows), truth))

    # population descriptives
    fixture_bars(w)
    for outcome, stem in (("EMPLASTWK_A", "worked_last_week"), ("EMPHEALINS_A", "employer_insurance")):
        sub = complete_cases(population, ["CITZNSTP_A", outcome])
        spec_bar, svg = segmented_bar(crosstab(sub, "CITZNSTP_A", outcome), title=f"{outcome} by CITZNSTP_A")
        w.write(f"population_{stem}.svg", svg)
        w.write(f"population_{stem}.csv", spec_bar.to_csv())

    # sample and inference
    idx = sample_indices(population.n_rows, cfg.sample_size, cfg.seed)
    sample = population.take(idx)
    w.write("sample.csv", to_csv_text(sample))
    ct_sub = complete_cases(sample, ["CITZNSTP_A", "EMPLASTWK_A"])
    chi = chi_square_independence(crosstab(ct_sub, "CITZNSTP_A", "EMPLASTWK_A"), population_n=population.n_rows)
    ins = crosstab(complete_cases(sample, ["CITZNSTP_A", "EMPHEALINS_A"]), "CITZNSTP_A", "EMPHEALINS_A").observed
    z = two_prop_z(
        int(ins[0, 0]), int(ins[0].sum()), int(ins[1, 0]), int(ins[1].sum()),
        "greater", population_n=population.n_rows,
    )
    w.write_json("inference.json", {"chi_square": chi.to_dict(), "two_proportion_z": z.to_dict()})

    # clustering
    clean = complete_cases(sample, VALIDATION_COLUMNS)
    kept = idx[~sample.mask[:, [sample.index(c) for c in VALIDATION_COLUMNS]].any(axis=1)]
    mixed = MixedMatrix.from_dataset(clean, CLUSTER_COLUMNS)
    ks = range(1, cfg.k_max + 1)
    kp_sweep = sweep_kprototypes(mixed, ks, seed=cfg.seed, n_restarts=cfg.restarts)
    spec_e, svg = elbow_chart([(m.k, m.cost) for m in kp_sweep], title="K-Prototypes cost versus k")
    w.write("elbow_kprototypes.svg", svg)
    w.write("elbow_kprototypes.csv", spec_e.to_csv())
    kp = fit_kprototypes(mixed, cfg.k, seed=cfg.seed, n_restarts=cfg.restarts)
    w.write_json("model_kprototypes.json", kp.to_dict(schema))
    table = centroid_table(kp, schema, mixed)
    w.write("centroids.txt", table.to_text())
    w.write("centroids.csv", table.to_csv())
    w.write("assignments_kprototypes.csv", assignments_csv(kept, kp.assignments))
    cats = [c for c in CLUSTER_COLUMNS if clean.column_schema(c).is_categorical]
    profiles = cluster_profiles(clean, kp.assignments, CLUSTER_COLUMNS)
    w.write("profiles_kprototypes.csv", profiles_table(profiles))
    w.write("typical_members_kprototypes.txt", typical_member_table(profiles, schema))

    codes = categorical_matrix(clean, cats)
    km_sweep = sweep_kmodes(codes, ks, seed=cfg.seed, n_restarts=cfg.restarts, columns=cats)
    spec_e, svg = elbow_chart([(m.k, m.cost) for m in km_sweep], title="K-Modes cost versus k")
    w.write("elbow_kmodes.svg", svg)
    w.write("elbow_kmodes.csv", spec_e.to_csv())
    km = fit_kmodes(codes, cfg.k, seed=cfg.seed, n_restarts=cfg.restarts, columns=cats)
    w.write_json("model_kmodes.json", km.to_dict(schema))
    w.write("assignments_kmodes.csv", assignments_csv(kept, km.assignments))
    km_profiles = cluster_profiles(clean, km.assignments, cats)
    w.write("profiles_kmodes.csv", profiles_table(km_profiles))
    w.write("typical_members_kmodes.txt", typical_member_table(km_profiles, schema))

    # embedding of a seeded subsample
    m = min(cfg.tsne_points, clean.n_rows)
    sub_idx = sample_indices(clean.n_rows, m, cfg.seed + 1)
    feats = encode_mixed_for_tsne(clean.take(sub_idx), CLUSTER_COLUMNS)
    emb = fit_tsne(feats, TsneConfig(perplexity=cfg.perplexity, iterations=cfg.tsne_iterations, seed=cfg.seed))
    sub_labels = kp.assignments[sub_idx]
    w.write("embedding.csv", emb.to_csv(sub_labels))
    _, svg = scatter_chart(emb.coords, sub_labels, title="t-SNE map coloured by K-Prototypes cluster")
    w.write("embedding.svg", svg)
    w.write_json("embedding.json", emb.to_dict())

    # boosted-tree validation of the K-Prototypes labels
    features = MixedMatrix.from_dataset(clean, VALIDATION_COLUMNS)
    _, report = fit_gbdt(features, kp.assignments, GbdtConfig(n_rounds=cfg.gbdt_rounds, seed=cfg.seed))
    w.write_json("validation.json", report.to_dict())
    w.write("importance.txt", report.importance_table())

    truth_kept = truth[kept]
    summary = {
        "population_rows": population.n_rows,
        "sample_rows": sample.n_rows,
        "complete_rows": clean.n_rows,
        "chi_square": {"statistic": chi.statistic, "p_value": chi.p_value, "verdict": chi.verdict},
        "two_proportion_z": {"z": z.z, "p_value": z.p_value, "verdict": z.verdict},
        "kprototypes": {"k": cfg.k, "cost": kp.cost, "gamma": kp.gamma,
                        "ari_vs_truth": adjusted_rand_index(truth_kept, kp.assignments)},
        "kmodes": {"k": cfg.k, "cost": km.cost, "ari_vs_truth": adjusted_rand_index(truth_kept, km.assignments)},
        "elbow_knee": {
            "kprototypes": elbow_chart([(m.k, m.cost) for m in kp_sweep])[0].annotations["knee"],
            "kmodes": elbow_chart([(m.k, m.cost) for m in km_sweep])[0].annotations["knee"],
        },
        "tsne": {"points": m, "final_kl": emb.final_kl},
        "validation_accuracy": report.test_accuracy,
    }
    w.write_json("summary.json", summary)
    seeds = {"generator": cfg.seed, "sample": cfg.seed, "clustering": cfg.seed,
             "tsne_subsample": cfg.seed + 1, "tsne": cfg.seed, "gbdt": cfg.seed}
    write_manifest(w, argv or ["surveyseg", "report", "--all", "--out", str(w.root)], seeds)
    return summary
