"""Command-line interface.

Subcommands cover the full workflow: generate synthetic data, apply the
sparsity filters, cross-validate with grid search, refit and export a
model bundle, predict from a bundle, and rank feature importance. Errors
exit nonzero with a machine-parsable `category: message` line on stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import cart, svm
from .dataio import (
    Sidecar,
    apply_hscrp_rule,
    blood_schema,
    filter_features,
    filter_subjects,
    gen_synthetic,
    generic_schema,
    load_csv,
    load_feature_rows,
    load_sidecar,
    read_raw_column,
    save_csv,
    save_sidecar,
    separated_gaussians,
)
from .errors import ContractError, TriageError, UnsupportedOperationError
from .evaluation import default_jobs, grid_search, refit, write_trace_jsonl
from .families import get_family
from .modelstore import load_bundle, predict_bundle, save_bundle
from .report import (
    METRICS_HEADER,
    metrics_row,
    save_importance_chart,
    save_search_surface,
    write_importance_table,
    write_metrics_table,
)

LABEL_COLUMN = "diagnosis"
CLASS_NAMES = {1: "moderate", -1: "viral"}


def _load_dataset(args):
    sidecar = load_sidecar(args.schema)
    data = load_csv(args.data, sidecar.schema, sidecar.label_column, sidecar.class_names)
    return data, sidecar


def cmd_synth(args) -> int:
    if args.dim == 15:
        schema = blood_schema()
    elif args.dim == 13:
        schema = blood_schema(include_demographics=False)
    else:
        schema = generic_schema(args.dim)
    data = separated_gaussians(
        d=args.dim,
        n_pos=args.n_pos,
        n_neg=args.n_neg,
        separation=args.separation,
        missing_rate=args.missing_rate,
        seed=args.seed,
        schema=schema,
    )
    save_csv(data, args.out, LABEL_COLUMN)
    save_sidecar(Sidecar(schema, LABEL_COLUMN, CLASS_NAMES), args.schema_out)
    print(f"wrote {data.n} samples x {data.d} features to {args.out}")
    print(f"wrote schema sidecar to {args.schema_out}")
    return 0


def cmd_preprocess(args) -> int:
    data, sidecar = _load_dataset(args)
    if args.hscrp_column:
        crp_candidates = [f.id for f in sidecar.schema.features if f.name == args.crp_feature]
        if not crp_candidates:
            raise ContractError(f"schema has no feature named {args.crp_feature!r}")
        hscrp = read_raw_column(args.data, args.hscrp_column)
        data = apply_hscrp_rule(data, crp_candidates[0], hscrp)
        print(f"substituted {args.hscrp_column!r} into {args.crp_feature!r} where measured")
    filtered, kept_features = filter_features(data, data.labels)
    dropped = [f.name for f in data.schema.features if f.id not in kept_features]
    print(f"dropped features ({len(dropped)}): {', '.join(dropped) if dropped else 'none'}")
    filtered, kept_rows = filter_subjects(filtered)
    dropped_rows = sorted(set(range(data.n)) - set(kept_rows))
    print(f"dropped subjects ({len(dropped_rows)}): {dropped_rows if dropped_rows else 'none'}")
    save_csv(filtered, args.out, sidecar.label_column)
    save_sidecar(
        Sidecar(filtered.schema, sidecar.label_column, sidecar.class_names), args.schema_out
    )
    print(f"kept {filtered.n} samples x {filtered.d} features -> {args.out}")
    return 0


def cmd_cv(args) -> int:
    data, _ = _load_dataset(args)
    family = get_family(args.family)
    result = grid_search(data, family, base_seed=args.seed, n_jobs=args.jobs)
    if args.trace:
        write_trace_jsonl(result.trace, args.trace)
        print(f"wrote search trace ({len(result.trace)} points) to {args.trace}")
    row = metrics_row(family.name, result.best_params, result.best_result.metrics)
    widths = [max(len(h), len(v)) for h, v in zip(METRICS_HEADER, row)]
    print("  ".join(h.ljust(w) for h, w in zip(METRICS_HEADER, widths)))
    print("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    if args.report_dir:
        outdir = Path(args.report_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        write_metrics_table(outdir / "cv_metrics.tsv", [row])
        save_search_surface(result.trace, outdir / "search_surface.png")
        print(f"wrote report files to {outdir}")
    return 0


def _hyperparams_from_flags(args) -> dict:
    params = {}
    if args.C is not None:
        params["C"] = args.C
    if args.gamma is not None:
        params["gamma"] = args.gamma
    if args.max_depth is not None:
        params["max_depth"] = args.max_depth
    if args.n_tree is not None:
        params["n_tree"] = args.n_tree
    if args.max_features is not None:
        params["max_features"] = args.max_features
    if args.min_impurity is not None:
        params["min_impurity"] = args.min_impurity
    if args.min_pool is not None:
        params["min_pool"] = args.min_pool
    return params


def cmd_train(args) -> int:
    data, _ = _load_dataset(args)
    family = get_family(args.family)
    params = _hyperparams_from_flags(args)
    bundle = refit(data, family, params, seed=args.seed, task=args.task)
    save_bundle(bundle, args.out)
    print(f"wrote {family.classifier_kind} bundle ({data.d} features) to {args.out}")
    return 0


def cmd_predict(args) -> int:
    bundle = load_bundle(args.bundle)
    rows = load_feature_rows(args.data, bundle.schema)
    lines = ["row\tlabel\tclass\tscore"]
    for i, x in enumerate(rows):
        label, score = predict_bundle(bundle, x)
        score_text = "n/a" if score is None else f"{score:.6f}"
        lines.append(f"{i}\t{label:+d}\t{bundle.class_names[label]}\t{score_text}")
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"wrote {len(rows)} predictions to {args.out}")
    else:
        print(text)
    return 0


def cmd_importance(args) -> int:
    bundle = load_bundle(args.bundle)
    if bundle.classifier_kind == "svm":
        scores = svm.svm_importance(bundle.classifier)
        title = "linear SVM |weight| importance"
    elif bundle.classifier_kind == "tree":
        scores = cart.tree_importance(bundle.classifier)
        title = "decision tree impurity-decrease importance"
    else:
        raise UnsupportedOperationError(
            "importance ranking covers linear SVM and tree bundles only"
        )
    names = list(bundle.schema.names)
    delta = bundle.metadata.get("class_mean_delta")
    if delta is not None and len(delta) == len(names):
        directions = ["higher" if d > 0 else "lower" if d < 0 else "n/a" for d in delta]
    else:
        directions = ["n/a"] * len(names)
    order = np.argsort(scores)[::-1]
    ranks = np.empty(len(names), int)
    ranks[order] = np.arange(1, len(names) + 1)
    print("feature id\tfeature name\timportance\trank\tchange in positive class")
    for i, name in enumerate(names):
        print(f"{i}\t{name}\t{scores[i]:.3f}\t{ranks[i]}\t{directions[i]}")
    print(f"importance sum: {scores.sum():.9f}")
    if args.report_dir:
        outdir = Path(args.report_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        write_importance_table(outdir / "importance.tsv", names, scores, directions)
        save_importance_chart(names, scores, outdir / "importance.png", title)
        print(f"wrote report files to {outdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bloodtriage",
        description="Blood-test triage models: train, cross-validate, export, predict.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic two-class dataset CSV")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--schema-out", required=True, help="output schema sidecar JSON path")
    p.add_argument("--n-pos", type=int, default=150)
    p.add_argument("--n-neg", type=int, default=150)
    p.add_argument("--dim", type=int, default=15)
    p.add_argument("--separation", type=float, default=3.0, help="class mean gap in std units")
    p.add_argument("--missing-rate", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="apply the sparsity filtering rules")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--schema-out", required=True)
    p.add_argument("--hscrp-column", help="raw CSV column holding high-sensitivity CRP")
    p.add_argument("--crp-feature", default="CRP", help="schema feature the hsCRP value overwrites")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("cv", help="LOOCV grid search; prints the metrics row")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--family", required=True, choices=["svm-linear", "svm-rbf", "tree", "forest"])
    p.add_argument("--trace", help="write the search trace as JSON lines")
    p.add_argument("--report-dir", help="write metrics TSV and search-surface figure here")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=default_jobs())
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("train", help="refit with explicit hyperparameters; write a bundle")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--family", required=True, choices=["svm-linear", "svm-rbf", "tree", "forest"])
    p.add_argument("--out", required=True, help="output bundle JSON path")
    p.add_argument("--task", default="")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--C", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--n-tree", type=int)
    p.add_argument("--max-features", choices=["all", "sqrt", "log2"])
    p.add_argument("--min-impurity", type=float)
    p.add_argument("--min-pool", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict rows of a CSV from a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--data", required=True, help="CSV with schema feature columns; cells may be empty")
    p.add_argument("--out", help="write TSV here instead of stdout")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("importance", help="rank features of a linear-SVM or tree bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--report-dir", help="write importance TSV and bar chart here")
    p.set_defaults(func=cmd_importance)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TriageError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"io-error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
