"""Parallel execution of the (fold x config x run) job matrix.

Each job runs in its own forked process so a wall-clock budget can be
enforced even on code that never yields. Results reach the parent through a
pipe and are appended to a newline-delimited JSON ledger by the parent
alone; the ledger is also what makes a rerun resume where it stopped.
"""

from __future__ import annotations

import json
import logging
import multiprocessing as mp
import os
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .evaluation import (
    EarlyStopPolicy,
    RunRecord,
    audit_access,
    build_report,
    execute_run,
    final_specs,
    fold_outcome,
    selection_specs,
    LeakageError,
)
from .features import FeatureSpec, build_features
from .graph_data import GraphDataset, parse_tu_dataset
from .grid import expand_grid
from .splits import load_split_plan, make_split_plan, save_split_plan

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 600.0
DEFAULT_GRACE = 5.0
KILL_MARGIN = 0.5
POLL_INTERVAL = 0.02
TERMINAL = ("done", "oor", "diverged", "failed")
_ORDER = {"pending": 0, "running": 1, **{s: 2 for s in TERMINAL}}
LEDGER_NAME = "ledger.jsonl"
REPORT_NAME = "report.json"
PLAN_NAME = "splits.json"
GRID_NAME = "grid.json"


@dataclass
class Job:
    spec: object  # evaluation.RunSpec
    budget_seconds: float
    status: str = "pending"
    attempt: int = 0

    @property
    def job_id(self):
        return self.spec.run_id

    def advance(self, status):
        if status not in _ORDER:
            raise ValueError(f"unknown job status {status!r}")
        if _ORDER[status] < _ORDER[self.status] or self.status in TERMINAL:
            raise ValueError(f"job {self.job_id}: illegal transition {self.status} -> {status}")
        self.status = status


class Ledger:
    """Append-only NDJSON job ledger; the last terminal line per job wins."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def entries(self):
        if not self.path.exists():
            return []
        out = []
        with open(self.path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError:
                    # a torn final line from an interrupted writer
                    log.warning("%s:%d: skipping unreadable ledger line", self.path, lineno)
        return out

    def terminal(self):
        done = {}
        for e in self.entries():
            if e["status"] in TERMINAL and not e.get("retrying"):
                done[e["job_id"]] = e
        return done

    def append(self, entry):
        with open(self.path, "a") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())


# state inherited by forked workers
_CTX = {}


def _child(spec, conn):
    try:
        rec = execute_run(spec, _CTX["fds"], _CTX["policy"], _CTX["budget"], _CTX["trainer"],
                          _CTX["dtype"])
        conn.send({"ok": True, "record": rec.to_dict()})
    except BaseException:
        conn.send({"ok": False, "error": traceback.format_exc()})
    finally:
        conn.close()


def _execute(jobs, workers, kill_after, on_result):
    """Run ``jobs`` with at most ``workers`` live processes.

    ``on_result(job, status, record_dict, wall, error, retrying)`` is called in
    the parent for every finished attempt. Returns the number of jobs started.
    """
    ctx = mp.get_context("fork")
    queue = list(jobs)
    running = []
    started = 0
    while queue or running:
        while queue and len(running) < workers:
            job = queue.pop(0)
            if job.status == "pending":
                job.advance("running")
            job.attempt += 1
            parent, child = ctx.Pipe(duplex=False)
            proc = ctx.Process(target=_child, args=(job.spec, child), daemon=True)
            proc.start()
            child.close()
            running.append((job, proc, parent, time.monotonic()))
            if job.attempt == 1:
                started += 1
        if not running:
            break
        time.sleep(POLL_INTERVAL)
        still = []
        for job, proc, conn, t0 in running:
            wall = time.monotonic() - t0
            msg = None
            if conn.poll():
                try:
                    msg = conn.recv()
                except EOFError:
                    msg = None
            if msg is not None:
                proc.join()
                conn.close()
                if msg["ok"]:
                    rec = msg["record"]
                    on_result(job, rec["status"], rec, wall, rec.get("error"), False)
                else:
                    _crashed(job, queue, on_result, wall, msg["error"])
            elif not proc.is_alive():
                proc.join()
                conn.close()
                _crashed(job, queue, on_result, wall, f"worker exited with code {proc.exitcode}")
            elif wall > kill_after:
                proc.kill()
                proc.join()
                conn.close()
                on_result(job, "oor", None, time.monotonic() - t0, "killed after budget", False)
            else:
                still.append((job, proc, conn, t0))
        running = still
    return started


def _crashed(job, queue, on_result, wall, error):
    if job.attempt < 2:
        on_result(job, "failed", None, wall, error, True)
        queue.insert(0, job)
    else:
        on_result(job, "failed", None, wall, error, False)


@dataclass
class RunOutcome:
    complete: bool
    report: Optional[dict]
    executed: list = field(default_factory=list)  # job ids started in this call
    ledger_path: Optional[Path] = None

    def counts(self, ledger=None):
        ledger = ledger or Ledger(self.ledger_path)
        out = {s: 0 for s in TERMINAL}
        for e in ledger.terminal().values():
            out[e["status"]] += 1
        return out


def _record_from(entry, job):
    if entry.get("record"):
        return RunRecord.from_dict(entry["record"])
    s = job.spec
    return RunRecord(run_id=s.run_id, fold=s.fold, purpose=s.purpose,
                     config_index=s.config_index, run_index=s.run_index,
                     config=s.config.to_dict(), seeds=s.seeds, status=entry["status"],
                     error=entry.get("error"))


def run_jobs(fds, plan, grid, policy, output_dir, budget=DEFAULT_BUDGET, workers=1,
             trainer=None, model_name=None, feature_regime=None, max_new_jobs=None,
             kill_margin=KILL_MARGIN, dtype=np.float64):
    """Execute selection then final jobs for every fold; resume from the ledger.

    Returns a :class:`RunOutcome`; ``report`` is set once every job is
    terminal. ``max_new_jobs`` caps how many not-yet-done jobs are started.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    plan.check_dataset(fds.dataset)
    out_dir = Path(output_dir)
    ledger = Ledger(out_dir / LEDGER_NAME)
    if not (out_dir / PLAN_NAME).exists():
        save_split_plan(plan, out_dir / PLAN_NAME)
    (out_dir / GRID_NAME).write_text(json.dumps([c.to_dict() for c in grid], indent=1))
    done = ledger.terminal()
    executed = []
    budget_left = [max_new_jobs]

    _CTX.update(fds=fds, policy=policy, budget=budget, trainer=trainer, dtype=dtype)

    def record(job, status, rec, wall, error, retrying):
        if not retrying:
            job.advance(status)
        s = job.spec
        entry = {
            "job_id": job.job_id, "dataset": s.dataset, "fold": s.fold, "purpose": s.purpose,
            "config_index": s.config_index, "run_index": s.run_index, "status": status,
            "attempt": job.attempt, "retrying": retrying, "budget_seconds": budget,
            "wall_seconds": round(wall, 3), "error": error, "record": rec,
        }
        ledger.append(entry)
        if not retrying:
            done[job.job_id] = entry

    def run_batch(specs):
        jobs = [Job(s, budget) for s in specs if s.run_id not in done]
        if budget_left[0] is not None:
            jobs = jobs[: max(budget_left[0], 0)]
        if not jobs:
            return
        _execute(jobs, workers, budget + kill_margin, record)
        executed.extend(j.job_id for j in jobs)
        if budget_left[0] is not None:
            budget_left[0] -= len(jobs)

    sel_specs = {f: selection_specs(plan, f, grid) for f in range(plan.k)}
    run_batch([s for f in range(plan.k) for s in sel_specs[f]])

    entries, all_finals, complete = [], {}, True
    for f in range(plan.k):
        if any(s.run_id not in done for s in sel_specs[f]):
            complete = False
            continue
        selection = [_record_from(done[s.run_id], Job(s, budget)) for s in sel_specs[f]]
        entry = fold_outcome(f, grid, selection, None)
        if not entry["oor"]:
            all_finals[f] = (selection, final_specs(plan, f, entry["selected_index"],
                                                    grid[entry["selected_index"]]))
        else:
            entries.append(entry)
    run_batch([s for f in sorted(all_finals) for s in all_finals[f][1]])

    for f, (selection, specs) in sorted(all_finals.items()):
        if any(s.run_id not in done for s in specs):
            complete = False
            continue
        finals = [_record_from(done[s.run_id], Job(s, budget)) for s in specs]
        failed = [r.run_id for r in finals if r.status == "failed"]
        if failed:
            raise RuntimeError(f"fold {f}: final runs failed terminally: {failed}")
        used = [r for r in selection + finals if r.status in ("done", "diverged")]
        ok, violations = audit_access(used, plan)
        if not ok:
            raise LeakageError(violations)
        entries.append(fold_outcome(f, grid, selection, finals))

    outcome = RunOutcome(complete=complete, report=None, executed=executed,
                         ledger_path=ledger.path)
    if complete:
        entries.sort(key=lambda e: e["fold"])
        name = model_name or grid[0].model_kind
        report = build_report(name, plan, grid, entries, feature_regime)
        (out_dir / REPORT_NAME).write_text(json.dumps(report, sort_keys=True, indent=1))
        outcome.report = report
    return outcome


def report_from_ledger(ledger_path, plan, grid, model_name=None, feature_regime=None):
    """Recompute the assessment report from ledger records alone."""
    terminal = Ledger(ledger_path).terminal()
    by_id = {jid: e for jid, e in terminal.items()}
    entries = []
    for f in range(plan.k):
        selection = []
        for s in selection_specs(plan, f, grid):
            if s.run_id not in by_id:
                raise KeyError(f"ledger lacks selection job {s.run_id} (fold {f})")
            selection.append(_record_from(by_id[s.run_id], Job(s, 0)))
        entry = fold_outcome(f, grid, selection, None)
        if entry["oor"]:
            entries.append(entry)
            continue
        specs = final_specs(plan, f, entry["selected_index"], grid[entry["selected_index"]])
        finals = []
        for s in specs:
            if s.run_id not in by_id:
                raise KeyError(f"ledger lacks final job {s.run_id} (fold {f})")
            finals.append(_record_from(by_id[s.run_id], Job(s, 0)))
        entries.append(fold_outcome(f, grid, selection, finals))
    return build_report(model_name or grid[0].model_kind, plan, grid, entries, feature_regime)


# ---------------------------------------------------------------------------
# declarative experiment files
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    name: str
    dataset: dict  # {"json": path} or {"tu_root": dir, "name": NAME}
    features: FeatureSpec
    grid: object  # preset name or grid definition mapping
    k: int = 10
    seed: int = 0
    R: int = 3
    policy: EarlyStopPolicy = field(default_factory=EarlyStopPolicy)
    budget_seconds: float = DEFAULT_BUDGET
    workers: int = 1
    output_dir: str = "runs"
    splits: Optional[str] = None
    feature_regime: Optional[str] = None

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not expand_grid(self.grid):
            raise ValueError("grid must contain at least one configuration")

    @classmethod
    def from_dict(cls, d, base_dir="."):
        d = dict(d)
        base = Path(base_dir)
        ds = d.pop("dataset")
        if isinstance(ds, str):
            ds = {"json": ds}
        ds = {k: (str(base / v) if k in ("json", "tu_root") else v) for k, v in ds.items()}
        out = d.pop("output_dir", "runs")
        splits = d.pop("splits", None)
        root = os.environ.get("FAIRGRAPH_OUTPUT_ROOT")
        out_path = Path(root) / out if root and not Path(out).is_absolute() else base / out
        return cls(
            dataset=ds,
            features=FeatureSpec.from_dict(d.pop("features")),
            policy=EarlyStopPolicy.from_dict(d.pop("policy", {})),
            output_dir=str(out_path),
            splits=None if splits is None else str(base / splits),
            **d,
        )

    @classmethod
    def load(cls, path):
        path = Path(path)
        text = path.read_text()
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        return cls.from_dict(doc, base_dir=path.parent)


def load_dataset(spec):
    if "json" in spec:
        return GraphDataset.load(spec["json"])
    return parse_tu_dataset(spec["tu_root"], spec["name"])


def run_experiment(cfg, trainer=None, max_new_jobs=None):
    ds = load_dataset(cfg.dataset)
    fds = build_features(ds, cfg.features)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    plan_path = Path(cfg.splits) if cfg.splits else out / PLAN_NAME
    if plan_path.exists():
        plan = load_split_plan(plan_path, ds)
    else:
        plan = make_split_plan(ds, cfg.k, cfg.seed, cfg.R)
        save_split_plan(plan, plan_path)
    grid = expand_grid(cfg.grid)
    return run_jobs(fds, plan, grid, cfg.policy, out, budget=cfg.budget_seconds,
                    workers=cfg.workers, trainer=trainer, model_name=cfg.name,
                    feature_regime=cfg.feature_regime, max_new_jobs=max_new_jobs)
