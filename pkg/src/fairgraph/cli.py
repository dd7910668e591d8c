"""Command-line entry point: ``fairgraph <subcommand> ...``.

Exit codes: 0 success, 2 invalid input or missing artifact, 3 audit failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import jsonschema

from . import reporting
from .evaluation import LeakageError, SelectionError
from .features import FeatureError
from .graph_data import DataFormatError, GraphDataset, dataset_stats, parse_tu_dataset
from .grid import GridError
from .scheduler import ExperimentConfig, run_experiment
from .splits import SplitError, make_split_plan, save_split_plan

EXIT_OK, EXIT_INVALID, EXIT_AUDIT = 0, 2, 3
OUTPUT_ROOT_ENV = "FAIRGRAPH_OUTPUT_ROOT"

log = logging.getLogger("fairgraph")


def _out_path(path):
    """Relative output paths resolve under $FAIRGRAPH_OUTPUT_ROOT when set."""
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _write_or_print(text, path):
    if path:
        _out_path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _require(path, what):
    if not Path(path).exists():
        raise FileNotFoundError(f"{what} not found: {path}")


def cmd_prepare_data(args):
    ds = parse_tu_dataset(args.tu_root, args.name)
    out = _out_path(args.out or f"{args.name}.json")
    ds.save(out)
    st = dataset_stats(ds)
    print(f"wrote {out}")
    print(st.as_row())
    return EXIT_OK


def cmd_stats(args):
    _require(args.dataset, "dataset")
    print(dataset_stats(GraphDataset.load(args.dataset)).as_row())
    return EXIT_OK


def cmd_make_splits(args):
    _require(args.dataset, "dataset")
    ds = GraphDataset.load(args.dataset)
    plan = make_split_plan(ds, args.k, args.seed, args.runs, strict=args.strict)
    out = _out_path(args.out)
    save_split_plan(plan, out)
    print(f"wrote {out}: {plan.k} folds over {plan.n} graphs (seed {plan.seed})")
    return EXIT_OK


def cmd_run(args):
    _require(args.config, "experiment config")
    cfg = ExperimentConfig.load(args.config)
    if args.workers:
        cfg.workers = args.workers
    outcome = run_experiment(cfg, max_new_jobs=args.max_jobs)
    counts = outcome.counts()
    print(f"{cfg.output_dir}: started {len(outcome.executed)} jobs; ledger "
          + ", ".join(f"{k}={v}" for k, v in counts.items()))
    if outcome.report:
        print(reporting.format_cell(outcome.report), f"({cfg.name} on {outcome.report['dataset']})")
    else:
        print("incomplete; rerun the same command to resume")
    return EXIT_OK


def _reports(paths):
    for p in paths:
        _require(p, "report")
    return [reporting.load_report(p) for p in paths]


def cmd_report(args):
    if args.verify:
        bad = 0
        for run_dir in args.runs:
            diffs = reporting.verify_run_dir(run_dir)
            for d in diffs:
                print(f"{run_dir}: {d}")
            bad += bool(diffs)
        if bad:
            return EXIT_INVALID
        print(f"verified {len(args.runs)} run(s): reports match their ledgers")
    table = reporting.results_table(_reports(args.runs))
    sys.stdout.write(table.render_text())
    if args.csv:
        _out_path(args.csv).write_text(table.render_csv())
    return EXIT_OK


def cmd_audit(args):
    status = EXIT_OK
    for run_dir in args.runs:
        ok, violations = reporting.audit_run_dir(run_dir)
        print(json.dumps({"run": str(run_dir), "passed": ok, "violations": violations}))
        if not ok:
            status = EXIT_AUDIT
    return status


def cmd_depth(args):
    _write_or_print(reporting.depth_csv(_reports(args.runs)), args.out)
    return EXIT_OK


def cmd_compare(args):
    published = reporting.read_published(args.published) if args.published else None
    rows = reporting.compare_rows(_reports(args.runs), published)
    _write_or_print(reporting.compare_csv(rows), args.out)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="fairgraph", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prepare-data", help="parse TU text files into canonical JSON")
    s.add_argument("--tu-root", required=True, help="directory holding NAME_*.txt")
    s.add_argument("--name", required=True)
    s.add_argument("--out", help="output JSON (default NAME.json)")
    s.set_defaults(func=cmd_prepare_data)

    s = sub.add_parser("stats", help="print dataset statistics")
    s.add_argument("dataset", help="canonical dataset JSON")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("make-splits", help="write a stratified split plan")
    s.add_argument("--dataset", required=True)
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--runs", type=int, default=3, help="final retraining runs per fold")
    s.add_argument("--strict", action="store_true", help="require every class to have >= k members")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_splits)

    s = sub.add_parser("run", help="run (or resume) an experiment config")
    s.add_argument("config", help="experiment file (.json or .yaml)")
    s.add_argument("--workers", type=int)
    s.add_argument("--max-jobs", type=int, help="start at most this many new jobs")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="render the results table")
    s.add_argument("runs", nargs="+", help="run directories or report.json files")
    s.add_argument("--csv", help="also write full-precision CSV here")
    s.add_argument("--verify", action="store_true", help="recompute reports from ledgers first")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("audit", help="replay access logs for test-fold leakage")
    s.add_argument("runs", nargs="+")
    s.set_defaults(func=cmd_audit)

    s = sub.add_parser("depth-analysis", help="median selected layers per run")
    s.add_argument("runs", nargs="+")
    s.add_argument("--out")
    s.set_defaults(func=cmd_depth)

    s = sub.add_parser("compare", help="validation vs test (vs published) CSV")
    s.add_argument("runs", nargs="+")
    s.add_argument("--published", help="CSV with model,dataset[,feature_regime],accuracy")
    s.add_argument("--out")
    s.set_defaults(func=cmd_compare)
    return p


_INVALID = (DataFormatError, SplitError, GridError, FeatureError, SelectionError,
            FileNotFoundError, KeyError, ValueError, json.JSONDecodeError,
            jsonschema.ValidationError)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except LeakageError as exc:
        print(json.dumps({"passed": False, "violations": exc.violations}), file=sys.stderr)
        return EXIT_AUDIT
    except _INVALID as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
