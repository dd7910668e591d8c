"""Results tables, depth analysis and validation-versus-test comparison data.

Every number here is derived from ``report.json`` files, which are in turn
re-derivable from a run directory's ledger (see :func:`verify_run_dir`).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from .evaluation import audit_access
from .models import ModelConfig
from .scheduler import GRID_NAME, LEDGER_NAME, PLAN_NAME, REPORT_NAME, Ledger, report_from_ledger
from .splits import load_split_plan

OOR_MARK = "OOR"


def load_report(path):
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_NAME
    return json.loads(path.read_text())


def _column(report):
    regime = report.get("feature_regime")
    return report["dataset"] if not regime else f"{report['dataset']} [{regime}]"


def format_cell(report):
    """Percent with one decimal, e.g. ``70.0 ± 14.1``; ``OOR`` for whole-grid OOR."""
    if report.get("oor"):
        return OOR_MARK
    return f"{100 * report['mean']:.1f} ± {100 * report['std']:.1f}"


@dataclass
class ResultsTable:
    rows: list = field(default_factory=list)  # model names, first-seen order
    columns: list = field(default_factory=list)  # dataset [regime] labels
    cells: dict = field(default_factory=dict)  # (row, column) -> report

    def add(self, report):
        row, col = report["model"], _column(report)
        if row not in self.rows:
            self.rows.append(row)
        if col not in self.columns:
            self.columns.append(col)
        if (row, col) in self.cells:
            raise ValueError(f"two reports for {row} on {col}")
        self.cells[(row, col)] = report

    def render_text(self):
        header = [""] + self.columns
        body = [[r] + [format_cell(self.cells[(r, c)]) if (r, c) in self.cells else "-"
                       for c in self.columns] for r in self.rows]
        widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
        lines = ["  ".join(str(x).ljust(w) for x, w in zip(line, widths)).rstrip()
                 for line in [header] + body]
        return "\n".join(lines) + "\n"

    def render_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "dataset", "feature_regime", "mean", "std", "oor", "k", "R"])
        for r in self.rows:
            for c in self.columns:
                rep = self.cells.get((r, c))
                if rep is None:
                    continue
                w.writerow([r, rep["dataset"], rep.get("feature_regime") or "",
                            "" if rep["mean"] is None else repr(rep["mean"]),
                            "" if rep["std"] is None else repr(rep["std"]),
                            int(bool(rep["oor"])), rep["k"], rep["R"]])
        return buf.getvalue()


def results_table(reports):
    table = ResultsTable()
    for rep in reports:
        table.add(rep)
    return table


def depth_rows(reports):
    """(model, dataset, feature regime, median selected layers) per report."""
    return [(r["model"], r["dataset"], r.get("feature_regime") or "", r["median_depth"])
            for r in reports if r.get("median_depth") is not None]


def depth_csv(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "dataset", "feature_regime", "median_layers"])
    w.writerows(depth_rows(reports))
    return buf.getvalue()


def read_published(path):
    """User-supplied CSV with columns model, dataset[, feature_regime], accuracy."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["model"], row["dataset"], row.get("feature_regime") or "")
            out[key] = float(row["accuracy"])
    return out


def compare_rows(reports, published=None):
    published = published or {}
    rows = []
    for r in reports:
        if r.get("oor"):
            continue
        key = (r["model"], r["dataset"], r.get("feature_regime") or "")
        rows.append({
            "model": key[0],
            "dataset": key[1],
            "feature_regime": key[2],
            "published": published.get(key),
            "validation_mean": r["valid_mean"],
            "test_mean": r["mean"],
            "gap": r["valid_mean"] - r["mean"],
        })
    return rows


def compare_csv(rows):
    buf = io.StringIO()
    cols = ["model", "dataset", "feature_regime", "published", "validation_mean", "test_mean", "gap"]
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: ("" if row[k] is None else row[k]) for k in cols})
    return buf.getvalue()


def _run_parts(run_dir):
    run_dir = Path(run_dir)
    plan = load_split_plan(run_dir / PLAN_NAME)
    grid = [ModelConfig.from_dict(c) for c in json.loads((run_dir / GRID_NAME).read_text())]
    return plan, grid


def verify_run_dir(run_dir):
    """Recompute a run's report from its ledger; returns the list of differences."""
    run_dir = Path(run_dir)
    stored = load_report(run_dir)
    plan, grid = _run_parts(run_dir)
    fresh = report_from_ledger(run_dir / LEDGER_NAME, plan, grid, stored["model"],
                               stored.get("feature_regime"))
    return _diff(stored, json.loads(json.dumps(fresh)))


def _diff(a, b, path=""):
    if isinstance(a, dict) and isinstance(b, dict):
        out = []
        for k in sorted(set(a) | set(b)):
            out += _diff(a.get(k), b.get(k), f"{path}.{k}" if path else k)
        return out
    if isinstance(a, list) and isinstance(b, list) and len(a) == len(b):
        out = []
        for i, (x, y) in enumerate(zip(a, b)):
            out += _diff(x, y, f"{path}[{i}]")
        return out
    return [] if a == b else [f"{path}: stored {a!r} != recomputed {b!r}"]


def audit_run_dir(run_dir):
    """Replay every access log in a run's ledger against its split plan."""
    run_dir = Path(run_dir)
    plan = load_split_plan(run_dir / PLAN_NAME)
    records = []
    for entry in Ledger(run_dir / LEDGER_NAME).terminal().values():
        if entry["status"] in ("done", "diverged"):
            records.append(entry.get("record") or {"run_id": entry["job_id"], "fold": entry["fold"]})
    return audit_access(records, plan)


__all__ = [
    "ResultsTable",
    "audit_run_dir",
    "compare_csv",
    "compare_rows",
    "depth_csv",
    "depth_rows",
    "format_cell",
    "load_report",
    "read_published",
    "results_table",
    "verify_run_dir",
]
