"""Command-line entry point: ``surveyseg <subcommand> [flags]``.

Exit codes: 0 success, 1 error, 2 failed condition check under ``--strict``,
64 usage error. Every subcommand takes ``--seed`` and ``--out`` (default: the
``SURVEYSEG_OUT`` environment variable, else ``./surveyseg_out``) and writes a
``manifest.json`` listing each artifact with its SHA-256 digest.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import SurveySegError
from .gbdt import GbdtConfig, fit_gbdt
from .inference import ContingencyTable, chi_square_independence, crosstab, two_prop_z
from .ingest import Dataset, complete_cases, dump_schema, load_csv, load_schema, sample_indices, to_csv_text
from .kmodes import INITS, fit_kmodes, sweep_kmodes
from .kprototypes import centroid_table, fit_kprototypes, sweep_kprototypes
from .matrix import MixedMatrix, categorical_matrix
from .pipeline import (
    ArtifactWriter,
    DemoConfig,
    assignments_csv,
    default_out_dir,
    dumps_json,
    run_demo,
    sha256_file,
    write_manifest,
)
from .report import cluster_profiles, elbow_chart, profiles_table, scatter_chart, typical_member_table
from .synth import demo_schema, demo_spec, generate, load_spec, spec_to_dict
from .tsne import TsneConfig, encode_mixed_for_tsne, fit_tsne

EXIT_OK, EXIT_ERROR, EXIT_CONDITIONS, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- helpers


def _k_range(text: str) -> list[int]:
    try:
        if ".." in text:
            lo, hi = text.split("..")
            ks = list(range(int(lo), int(hi) + 1))
        else:
            ks = [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k range {text!r}; use LO..HI or a comma list") from None
    if not ks:
        raise argparse.ArgumentTypeError("empty k range")
    return ks


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _table(text: str) -> list[list[int]]:
    try:
        return [[int(v) for v in row.split(",")] for row in text.split(";")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected rows like '1,2;3,4', got {text!r}") from None


def _load(args) -> tuple[Dataset, list]:
    if not args.data:
        raise UsageError("--data is required")
    schema = load_schema(args.schema) if args.schema else demo_schema()
    return load_csv(args.data, schema, delimiter=args.delimiter), schema


def _inputs(args) -> dict[str, str]:
    out = {}
    for attr in ("data", "schema", "labels", "spec"):
        path = getattr(args, attr, None)
        if path:
            out[Path(path).name] = sha256_file(path)
    return out


def _columns(args, data: Dataset) -> list[str]:
    if args.columns:
        cols = [c.strip() for c in args.columns.split(",") if c.strip()]
        for c in cols:
            data.index(c)
        return cols
    return data.names


def _read_labels(path) -> dict[int, int]:
    labels = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["row_id", "cluster"]:
            raise SurveySegError(f"{path}: expected a 'row_id,cluster' header")
        for line in fh:
            if line.strip():
                rid, lab = line.strip().split(",")[:2]
                labels[int(rid)] = int(lab)
    return labels


def _labelled_rows(data: Dataset, columns, labels_path):
    """Complete rows over ``columns``, restricted to labelled rows when a label file is given."""
    keep = ~data.mask[:, [data.index(c) for c in columns]].any(axis=1)
    row_ids = np.flatnonzero(keep)
    if labels_path is None:
        return data.take(row_ids), row_ids, None
    labels = _read_labels(labels_path)
    row_ids = np.array([i for i in row_ids if i in labels], dtype=np.intp)
    if len(row_ids) == 0:
        raise SurveySegError("no complete rows carry a label")
    return data.take(row_ids), row_ids, np.array([labels[i] for i in row_ids])


def _emit(writer: ArtifactWriter, name: str, doc: dict) -> None:
    writer.write_json(name, doc)
    sys.stdout.write(dumps_json(doc))


# ---------------------------------------------------------------- commands


def cmd_chi2(args) -> int:
    w = ArtifactWriter(args.out)
    population_n = args.population_n
    if args.counts:
        table = ContingencyTable.from_counts(args.counts)
    else:
        if not (args.row and args.col):
            raise UsageError("chi2 needs --counts or --data with --row and --col")
        data, _ = _load(args)
        if args.sample:
            population_n = population_n or data.n_rows
            data = data.take(sample_indices(data.n_rows, args.sample, args.seed))
        table = crosstab(complete_cases(data, [args.row, args.col]), args.row, args.col)
    res = chi_square_independence(table, args.alpha, population_n, not args.not_random)
    doc = res.to_dict()
    doc["observed"] = table.observed.tolist()
    _emit(w, "chi2.json", doc)
    print(f"chi2={res.statistic:.4f} df={res.df} p={res.p_value:.4g}: {res.verdict}")
    write_manifest(w, args.argv, {"sample": args.seed}, _inputs(args))
    return _condition_exit(args, res.conditions)


def cmd_twoprop(args) -> int:
    w = ArtifactWriter(args.out)
    population_n = args.population_n
    if args.counts:
        if len(args.counts) != 4:
            raise UsageError("--counts takes x1,n1,x2,n2")
        x1, n1, x2, n2 = args.counts
    else:
        if not (args.group and args.outcome):
            raise UsageError("twoprop needs --counts or --data with --group and --outcome")
        data, _ = _load(args)
        if args.sample:
            population_n = population_n or data.n_rows
            data = data.take(sample_indices(data.n_rows, args.sample, args.seed))
        table = crosstab(complete_cases(data, [args.group, args.outcome]), args.group, args.outcome).observed
        codes = data.column_schema(args.outcome).codes
        j = codes.index(args.success) if args.success is not None else 0
        x1, n1, x2, n2 = int(table[0, j]), int(table[0].sum()), int(table[1, j]), int(table[1].sum())
    res = two_prop_z(x1, n1, x2, n2, args.alternative, args.alpha, population_n, not args.not_random)
    _emit(w, "twoprop.json", res.to_dict())
    print(f"z={res.z:.4f} p={res.p_value:.4g} pooled={res.pooled:.4f}: {res.verdict}")
    write_manifest(w, args.argv, {"sample": args.seed}, _inputs(args))
    return _condition_exit(args, res.conditions)


def _condition_exit(args, conditions) -> int:
    if not conditions.all_ok:
        for d in conditions.details:
            print(f"condition check: {d}", file=sys.stderr)
        if args.strict:
            return EXIT_CONDITIONS
    return EXIT_OK


def cmd_cluster(args) -> int:
    data, schema = _load(args)
    columns = _columns(args, data)
    clean, row_ids, _ = _labelled_rows(data, columns, None)
    w = ArtifactWriter(args.out)
    if args.algo == "kmodes":
        points = categorical_matrix(clean, columns)
        fit = lambda k: fit_kmodes(points, k, args.init, args.seed, args.max_iter, args.restarts, columns)
        sweep = lambda ks: sweep_kmodes(points, ks, args.seed, args.restarts, args.init, args.max_iter, columns)
    else:
        points = MixedMatrix.from_dataset(clean, columns)
        std = not args.no_standardize
        fit = lambda k: fit_kprototypes(points, k, args.gamma, args.seed, args.max_iter, args.restarts, std)
        sweep = lambda ks: sweep_kprototypes(points, ks, args.gamma, args.seed, args.max_iter, args.restarts, std)

    if args.k_range:
        models = sweep(args.k_range)
        spec, svg = elbow_chart([(m.k, m.cost) for m in models], title=f"{args.algo} cost versus k")
        w.write("elbow.csv", spec.to_csv())
        w.write("elbow.svg", svg)
        knee = spec.annotations["knee"]
        for m in models:
            print(f"k={m.k} cost={m.cost:g}")
        if knee:
            print(f"knee at k={knee['k']} (second difference {knee['score']:.4g})")
    else:
        model = fit(args.k)
        w.write_json("model.json", model.to_dict(schema))
        w.write("assignments.csv", assignments_csv(row_ids, model.assignments))
        cats = [c for c in columns if clean.column_schema(c).is_categorical]
        profiles = cluster_profiles(clean, model.assignments, columns)
        w.write("profiles.csv", profiles_table(profiles))
        if cats:
            w.write("typical_members.txt", typical_member_table(profiles, schema))
        if args.algo == "kproto":
            table = centroid_table(model, schema, points)
            w.write("centroids.txt", table.to_text())
            w.write("centroids.csv", table.to_csv())
            sys.stdout.write(table.to_text())
        else:
            sys.stdout.write(typical_member_table(profiles, schema))
        print(f"k={model.k} cost={model.cost:g}")
    write_manifest(w, args.argv, {"clustering": args.seed}, _inputs(args))
    return EXIT_OK


def cmd_embed(args) -> int:
    data, _ = _load(args)
    columns = _columns(args, data)
    clean, row_ids, labels = _labelled_rows(data, columns, args.labels)
    if clean.n_rows > args.max_points:
        pick = sample_indices(clean.n_rows, args.max_points, args.seed)
        clean, row_ids = clean.take(pick), row_ids[pick]
        labels = None if labels is None else labels[pick]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        config = TsneConfig(perplexity=args.perplexity, iterations=args.iterations, seed=args.seed)
        feats = encode_mixed_for_tsne(clean, columns)
    for wmsg in caught:
        print(f"warning: {wmsg.message}", file=sys.stderr)
    emb = fit_tsne(feats, config)
    w = ArtifactWriter(args.out)
    lines = emb.to_csv(labels).splitlines()
    lines[1:] = [f"{rid},{ln.split(',', 1)[1]}" for rid, ln in zip(row_ids, lines[1:])]
    w.write("embedding.csv", "\n".join(lines) + "\n")
    _, svg = scatter_chart(emb.coords, labels, title="t-SNE map", centroids=labels is not None)
    w.write("embedding.svg", svg)
    w.write_json("embedding.json", emb.to_dict())
    print(f"embedded {clean.n_rows} rows: KL {emb.initial_kl:.4f} -> {emb.final_kl:.4f}")
    write_manifest(w, args.argv, {"tsne": args.seed, "subsample": args.seed}, _inputs(args))
    return EXIT_OK


def cmd_validate(args) -> int:
    data, _ = _load(args)
    columns = _columns(args, data)
    clean, _, labels = _labelled_rows(data, columns, args.labels)
    features = MixedMatrix.from_dataset(clean, columns)
    config = GbdtConfig(
        n_rounds=args.rounds,
        learning_rate=args.learning_rate,
        max_depth=args.max_depth,
        min_samples_leaf=args.min_samples_leaf,
        seed=args.seed,
        test_fraction=args.test_fraction,
    )
    _, report = fit_gbdt(features, labels, config)
    w = ArtifactWriter(args.out)
    w.write_json("validation.json", report.to_dict())
    w.write("importance.txt", report.importance_table())
    sys.stdout.write(report.importance_table())
    print(f"test accuracy: {report.test_accuracy:.4f}")
    write_manifest(w, args.argv, {"gbdt": args.seed}, _inputs(args))
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.all:
        raise UsageError("report currently supports only --all (the full demo pipeline)")
    cfg = DemoConfig(
        seed=args.seed,
        population=args.population,
        sample_size=args.sample_size,
        tsne_points=args.tsne_points,
        tsne_iterations=args.tsne_iterations,
    )
    summary = run_demo(args.out, cfg, args.argv)
    sys.stdout.write(dumps_json(summary))
    print(f"artifacts written to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    schema = load_schema(args.schema) if args.schema else demo_schema()
    spec = load_spec(args.spec) if args.spec else demo_spec()
    changes = {"seed": args.seed}
    if args.n_rows is not None:
        changes["n_rows"] = args.n_rows
    spec = replace(spec, **changes)
    data, labels = generate(spec, schema)
    w = ArtifactWriter(args.out)
    w.write("data.csv", to_csv_text(data))
    dump_schema(schema, w.root / "schema.json")
    w.outputs["schema.json"] = sha256_file(w.root / "schema.json")
    w.write("labels.csv", assignments_csv(range(data.n_rows), labels))
    w.write_json("generator_spec.json", spec_to_dict(spec))
    print(f"wrote {data.n_rows} rows to {w.root / 'data.csv'}")
    write_manifest(w, args.argv, {"generator": args.seed}, _inputs(args))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="surveyseg", description="Survey inference, clustering, embedding and validation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed_default=0):
        p.add_argument("--seed", type=int, default=seed_default, help=f"random seed (default {seed_default})")
        p.add_argument("--out", type=Path, default=None, help="output directory")

    def data_flags(p, columns=True):
        p.add_argument("--data", help="survey CSV file")
        p.add_argument("--schema", help="schema JSON (default: bundled demo schema)")
        p.add_argument("--delimiter", default=",")
        if columns:
            p.add_argument("--columns", help="comma-separated analysis columns (default: all)")

    def test_flags(p):
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--population-n", type=int, default=None, help="population size for the 10%% check")
        p.add_argument("--sample", type=int, default=None, help="draw a seeded sample of this size first")
        p.add_argument("--not-random", action="store_true", help="do not assert a random sample")
        p.add_argument("--strict", action="store_true", help="exit 2 when a condition check fails")

    p = sub.add_parser("chi2", help="chi-square test of independence")
    common(p)
    data_flags(p, columns=False)
    test_flags(p)
    p.add_argument("--counts", type=_table, help="contingency counts, e.g. '1217,164;109,10'")
    p.add_argument("--row")
    p.add_argument("--col")
    p.set_defaults(func=cmd_chi2)

    p = sub.add_parser("twoprop", help="pooled two-proportion z-test")
    common(p)
    data_flags(p, columns=False)
    test_flags(p)
    p.add_argument("--counts", type=_int_list, help="x1,n1,x2,n2")
    p.add_argument("--group", help="two-level grouping column (first code is group 1)")
    p.add_argument("--outcome", help="outcome column")
    p.add_argument("--success", type=int, default=None, help="outcome code counted as success (default: first)")
    p.add_argument("--alternative", choices=("greater", "less", "two_sided"), default="greater")
    p.set_defaults(func=cmd_twoprop)

    p = sub.add_parser("cluster", help="K-Modes or K-Prototypes clustering")
    common(p)
    data_flags(p)
    p.add_argument("--algo", choices=("kmodes", "kproto"), required=True)
    ks = p.add_mutually_exclusive_group(required=True)
    ks.add_argument("--k", type=int)
    ks.add_argument("--k-range", type=_k_range, help="LO..HI or comma list; writes an elbow chart")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--init", choices=INITS, default="random_points")
    p.add_argument("--no-standardize", action="store_true")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("embed", help="t-SNE embedding and scatter plot")
    common(p)
    data_flags(p)
    p.add_argument("--labels", help="row_id,cluster CSV written by 'cluster'")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--max-points", type=int, default=1000, help="seeded subsample above this size")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("validate", help="boosted-tree cluster validation")
    common(p)
    data_flags(p)
    p.add_argument("--labels", required=True, help="row_id,cluster CSV written by 'cluster'")
    p.add_argument("--rounds", type=int, default=200)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--max-depth", type=int, default=4)
    p.add_argument("--min-samples-leaf", type=int, default=5)
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="run the full demo pipeline")
    common(p, seed_default=2023)
    p.add_argument("--all", action="store_true", help="generate, test, cluster, embed, validate and report")
    p.add_argument("--population", type=int, default=29500)
    p.add_argument("--sample-size", type=int, default=1500)
    p.add_argument("--tsne-points", type=int, default=500)
    p.add_argument("--tsne-iterations", type=int, default=1000)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="generate a synthetic survey with planted clusters")
    common(p, seed_default=2023)
    p.add_argument("--spec", help="generator spec JSON (default: bundled demo spec)")
    p.add_argument("--schema", help="schema JSON (default: bundled demo schema)")
    p.add_argument("--n-rows", type=int, default=None)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    args.argv = ["surveyseg", *argv]
    if args.out is None:
        args.out = default_out_dir()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"surveyseg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SurveySegError, OSError, json.JSONDecodeError) as exc:
        print(f"surveyseg: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
