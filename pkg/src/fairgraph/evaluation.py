"""Model assessment by outer k-fold CV with inner holdout model selection.

For each outer fold the grid is searched on that fold's inner train/valid
split only; the winning configuration is retrained ``R`` times on the full
training portion (each run holding out its own pre-materialised 10% for
early stopping) and each retrained model is evaluated once on the test
fold. The fold score is the mean of the ``R`` test accuracies and the
assessment is the mean and sample standard deviation over folds.

All data reaches a training run through a :class:`DataAccess` object that
logs every index set handed out and the purpose it was requested for.
:func:`audit_access` replays those logs and rejects any run in which a test
index was used for training or validation.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .models import ModelConfig, build_model, make_batch, selected_depth
from .neural import Optimizer, Tape
from .neural.tape import softmax_cross_entropy

PURPOSES = ("train", "validate", "test")
CRITERIA = ("validation_loss", "validation_accuracy")
STD_CONVENTION = "sample (ddof=1)"
REPORT_FORMAT = "fairgraph.report/1"
EVAL_CHUNK = 512


class SelectionError(RuntimeError):
    pass


class LeakageError(RuntimeError):
    def __init__(self, violations):
        self.violations = violations
        super().__init__("leakage audit failed:\n  " + "\n  ".join(violations))


class BudgetExceeded(Exception):
    pass


@dataclass(frozen=True)
class EarlyStopPolicy:
    patience: int = 500
    criterion: str = "validation_loss"
    max_epochs: int = 1000

    def __post_init__(self):
        if self.patience < 1 or self.max_epochs < 1:
            raise ValueError("patience and max_epochs must be >= 1")
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")

    def for_config(self, config):
        """Apply per-configuration overrides (stop criterion, epochs, patience)."""
        return EarlyStopPolicy(
            patience=config.patience or self.patience,
            criterion=config.stop_criterion or self.criterion,
            max_epochs=config.epochs or self.max_epochs,
        )

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class EarlyStopper:
    """Tracks the monitored value; training stops once ``patience`` epochs
    pass without a strict improvement."""

    def __init__(self, policy):
        self.policy = policy
        self.minimize = policy.criterion == "validation_loss"
        self.best = math.inf if self.minimize else -math.inf
        self.best_epoch = 0
        self.epoch = 0

    def update(self, value):
        """Record the value for the next epoch; True if it is a new best."""
        self.epoch += 1
        better = value < self.best if self.minimize else value > self.best
        if better:
            self.best, self.best_epoch = value, self.epoch
        return better

    @property
    def should_stop(self):
        return (self.epoch - self.best_epoch >= self.policy.patience
                or self.epoch >= self.policy.max_epochs)


class IndexSet(NamedTuple):
    set_id: str
    indices: tuple


class View:
    """The slice of a featurised dataset granted for one purpose."""

    def __init__(self, fds, indices, dtype):
        self._fds = fds
        self.indices = tuple(int(i) for i in indices)
        self._allowed = set(self.indices)
        self.dtype = dtype
        self._cache = None

    def __len__(self):
        return len(self.indices)

    @property
    def labels(self):
        return self._fds.dataset.labels[list(self.indices)]

    def batch(self, indices=None):
        if indices is None:
            if self._cache is None:
                self._cache = make_batch(self._fds.features, self._fds.dataset.graphs,
                                         self.indices, self.dtype)
            return self._cache
        if not set(indices) <= self._allowed:
            raise PermissionError("batch requested outside the granted index set")
        return make_batch(self._fds.features, self._fds.dataset.graphs, list(indices), self.dtype)

    def chunks(self, size=EVAL_CHUNK):
        if len(self.indices) <= size:
            yield self.batch()
            return
        for lo in range(0, len(self.indices), size):
            yield self.batch(self.indices[lo : lo + size])


class DataAccess:
    """Hands out :class:`View` objects and logs every request."""

    def __init__(self, fds, dtype=np.float64):
        self.fds = fds
        self.dtype = dtype
        self.log = []

    @property
    def num_classes(self):
        return self.fds.dataset.num_classes

    @property
    def in_dim(self):
        return self.fds.width

    def view(self, index_set, purpose):
        if purpose not in PURPOSES:
            raise ValueError(f"unknown purpose {purpose!r}")
        self.log.append({"set_id": index_set.set_id, "purpose": purpose,
                         "indices": sorted(int(i) for i in index_set.indices)})
        return View(self.fds, index_set.indices, self.dtype)


@dataclass
class RunRecord:
    run_id: str
    fold: int
    purpose: str  # "selection" or "final"
    config_index: int
    run_index: int
    config: dict
    seeds: dict
    status: str = "done"  # done | oor | diverged
    epoch_metrics: list = field(default_factory=list)
    stop_epoch: int = 0
    best_epoch: int = 0
    final_valid_score: Optional[float] = None
    final_valid_loss: Optional[float] = None
    final_test_score: Optional[float] = None
    elapsed_seconds: float = 0.0
    access_log: Optional[list] = None
    error: Optional[str] = None

    @property
    def usable(self):
        return self.status == "done"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def derive_seeds(plan_seed, dataset, fold, purpose, config, run_index):
    """Per-run (init, shuffle, dropout) seeds from the run's identity."""
    ident = json.dumps([int(plan_seed), dataset, fold, purpose, config, run_index], sort_keys=True)
    digest = hashlib.sha256(ident.encode()).digest()
    words = [int.from_bytes(digest[i : i + 8], "little") for i in (0, 8, 16)]
    return {"init": words[0], "shuffle": words[1], "dropout": words[2]}


def run_id_for(dataset, fold, purpose, config, run_index):
    ident = json.dumps([dataset, fold, purpose, config, run_index], sort_keys=True)
    return hashlib.sha256(ident.encode()).hexdigest()[:16]


def _philox(seed):
    return np.random.Generator(np.random.Philox(key=int(seed)))


def evaluate(model, view):
    """(mean cross-entropy, accuracy) of ``model`` on ``view``."""
    total_loss, correct, n = 0.0, 0, 0
    for batch in view.chunks():
        logits = model.logits(batch)
        loss, probs = softmax_cross_entropy(logits, batch.labels)
        total_loss += loss * batch.num_graphs
        correct += int((probs.argmax(axis=1) == batch.labels).sum())
        n += batch.num_graphs
    return total_loss / n, correct / n


def train_with_early_stopping(access, config, train, valid, policy, seeds, budget=None,
                              test=None, dtype=np.float64, keep_model=False):
    """Train one model with early stopping on ``valid``.

    ``train``/``valid``/``test`` are :class:`IndexSet` values. Returns a dict
    with the status, the per-epoch trace, the best epoch and the scores of
    the restored best model.
    """
    start = time.monotonic()
    deadline = None if budget is None else start + budget
    policy = policy.for_config(config)
    train_view = access.view(train, "train")
    valid_view = access.view(valid, "validate")

    model = build_model(config, access.in_dim, access.num_classes, seeds["init"], dtype)
    opt = Optimizer(model.params, config.optim)
    shuffle_rng, dropout_rng = _philox(seeds["shuffle"]), _philox(seeds["dropout"])
    stopper = EarlyStopper(policy)
    best_state = model.params.state()
    best_scores = (None, None)
    metrics, status, error = [], "done", None
    idx = np.asarray(train_view.indices)

    # overflow shows up as a non-finite loss, which is reported as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            while not stopper.should_stop:
                order = idx[shuffle_rng.permutation(len(idx))]
                ep_loss = ep_correct = 0.0
                for lo in range(0, len(order), config.batch_size):
                    if deadline is not None and time.monotonic() > deadline:
                        raise BudgetExceeded
                    batch = train_view.batch(order[lo : lo + config.batch_size].tolist())
                    tape = Tape(train=True, rng=dropout_rng, dtype=dtype)
                    model.params.zero_grad()
                    logits = model.forward(tape, batch)
                    loss, probs = tape.softmax_cross_entropy(logits, batch.labels)
                    tape.backward(loss)
                    opt.step()
                    ep_loss += loss.data[0, 0] * batch.num_graphs
                    ep_correct += int((probs.argmax(axis=1) == batch.labels).sum())
                opt.end_epoch()
                v_loss, v_acc = evaluate(model, valid_view)
                if not math.isfinite(v_loss):
                    raise FloatingPointError("non-finite validation loss")
                metrics.append([ep_loss / len(idx), ep_correct / len(idx), v_loss, v_acc])
                value = v_loss if stopper.minimize else v_acc
                if stopper.update(value):
                    best_state = model.params.state()
                    best_scores = (v_acc, v_loss)
        except BudgetExceeded:
            status = "oor"
        except FloatingPointError as exc:
            status, error = "diverged", str(exc)

    model.params.load_state(best_state)
    out = {
        "status": status,
        "error": error,
        "epoch_metrics": metrics,
        "stop_epoch": len(metrics),
        "best_epoch": stopper.best_epoch,
        "final_valid_score": best_scores[0],
        "final_valid_loss": best_scores[1],
        "final_test_score": None,
    }
    if test is not None and status != "oor":
        _, out["final_test_score"] = evaluate(model, access.view(test, "test"))
    out["elapsed_seconds"] = time.monotonic() - start
    if keep_model:
        out["model"] = model
    return out


def default_trainer(access, config, train, valid, policy, seeds, budget, test=None):
    return train_with_early_stopping(access, config, train, valid, policy, seeds, budget, test)


# ---------------------------------------------------------------------------
# runs, selection and assessment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunSpec:
    """Everything needed to execute one training run, independent of where."""

    dataset: str
    plan_seed: int
    fold: int
    purpose: str
    config_index: int
    config: ModelConfig
    run_index: int
    train: IndexSet
    valid: IndexSet
    test: Optional[IndexSet]

    @property
    def run_id(self):
        return run_id_for(self.dataset, self.fold, self.purpose, self.config.to_dict(),
                          self.run_index)

    @property
    def seeds(self):
        return derive_seeds(self.plan_seed, self.dataset, self.fold, self.purpose,
                            self.config.to_dict(), self.run_index)


def selection_specs(plan, fold, grid):
    inner = plan.inner[fold]
    train = IndexSet(f"fold{fold}/inner/train", inner["train"])
    valid = IndexSet(f"fold{fold}/inner/valid", inner["valid"])
    return [RunSpec(plan.dataset_name, plan.seed, fold, "selection", c, cfg, 0, train, valid, None)
            for c, cfg in enumerate(grid)]


def final_specs(plan, fold, config_index, config):
    test = IndexSet(f"fold{fold}/test", plan.folds[fold])
    specs = []
    for r in range(plan.r_runs):
        tr, hold = plan.final_split(fold, r)
        specs.append(RunSpec(plan.dataset_name, plan.seed, fold, "final", config_index, config, r,
                             IndexSet(f"fold{fold}/final{r}/train", tr),
                             IndexSet(f"fold{fold}/final{r}/holdout", hold), test))
    return specs


def execute_run(spec, fds, policy, budget=None, trainer=None, dtype=np.float64):
    """Run one :class:`RunSpec` through ``trainer`` and wrap it in a RunRecord."""
    trainer = trainer or default_trainer
    access = DataAccess(fds, dtype)
    seeds = spec.seeds
    start = time.monotonic()
    out = trainer(access, spec.config, spec.train, spec.valid, policy, seeds, budget, spec.test)
    rec = RunRecord(
        run_id=spec.run_id,
        fold=spec.fold,
        purpose=spec.purpose,
        config_index=spec.config_index,
        run_index=spec.run_index,
        config=spec.config.to_dict(),
        seeds=seeds,
        access_log=access.log,
    )
    for key in ("status", "error", "epoch_metrics", "stop_epoch", "best_epoch",
                "final_valid_score", "final_valid_loss", "final_test_score"):
        if key in out:
            setattr(rec, key, out[key])
    rec.elapsed_seconds = out.get("elapsed_seconds", time.monotonic() - start)
    return rec


def select_best(records):
    """Index (grid position) of the best usable selection record.

    Highest validation score wins; ties go to the earliest grid position;
    OOR and diverged runs are excluded.
    """
    if not records:
        raise SelectionError("empty grid")
    best, best_score = None, -math.inf
    for rec in sorted(records, key=lambda r: r.config_index):
        if not rec.usable or rec.final_valid_score is None:
            continue
        if best is None or rec.final_valid_score > best_score:
            best, best_score = rec.config_index, rec.final_valid_score
    if best is None:
        raise SelectionError("every configuration was OOR or diverged")
    return best


def model_select(fds, plan, fold, grid, policy, budget=None, trainer=None, dtype=np.float64):
    """Train every configuration on the fold's inner split; return (best, records)."""
    if not grid:
        raise SelectionError("empty grid")
    records = [execute_run(s, fds, policy, budget, trainer, dtype)
               for s in selection_specs(plan, fold, grid)]
    return select_best(records), records


def _mean(xs):
    return sum(xs) / len(xs)


def _sample_std(xs):
    if len(xs) < 2:
        return 0.0
    m = _mean(xs)
    return math.sqrt(sum((x - m) ** 2 for x in xs) / (len(xs) - 1))


def fold_outcome(fold, grid, selection, finals):
    """Summarise one fold from its selection and final records (no I/O)."""
    sel = sorted(selection, key=lambda r: r.config_index)
    scores = [r.final_valid_score if r.usable else None for r in sel]
    oor = [r.config_index for r in sel if r.status == "oor"]
    diverged = [r.config_index for r in sel if r.status == "diverged"]
    entry = {
        "fold": fold,
        "selection_scores": scores,
        "oor_configs": oor,
        "diverged_configs": diverged,
        "selected_index": None,
        "selected_config": None,
        "selected_valid_score": None,
        "run_scores": None,
        "fold_score": None,
        "oor": False,
    }
    if len(oor) == len(grid):
        entry["oor"] = True
        return entry
    best = select_best(sel)
    entry.update(selected_index=best, selected_config=grid[best].to_dict(),
                 selected_valid_score=scores[best])
    if finals is None:
        return entry
    finals = sorted(finals, key=lambda r: r.run_index)
    if any(r.status == "oor" for r in finals):
        entry["oor"] = True
        return entry
    runs = [r.final_test_score for r in finals]
    entry.update(run_scores=runs, fold_score=_mean(runs))
    return entry


def build_report(model_name, plan, grid, fold_entries, feature_regime=None):
    report = {
        "format": REPORT_FORMAT,
        "model": model_name,
        "dataset": plan.dataset_name,
        "feature_regime": feature_regime,
        "k": plan.k,
        "R": plan.r_runs,
        "plan_seed": plan.seed,
        "grid_size": len(grid),
        "std_convention": STD_CONVENTION,
        "folds": fold_entries,
        "oor": any(f["oor"] for f in fold_entries),
        "mean": None,
        "std": None,
        "valid_mean": None,
        "median_depth": None,
    }
    if report["oor"]:
        return report
    scores = [f["fold_score"] for f in fold_entries]
    report["mean"] = _mean(scores)
    report["std"] = _sample_std(scores)
    report["valid_mean"] = _mean([f["selected_valid_score"] for f in fold_entries])
    if grid and grid[0].model_kind in ("gin", "graphsage"):
        report["median_depth"] = selected_depth(f["selected_config"]["layers"] for f in fold_entries)
    return report


def assess(fds, plan, grid, policy, R=None, budget=None, trainer=None, model_name=None,
           feature_regime=None, dtype=np.float64):
    """Outer k-fold assessment of ``grid`` on ``fds`` following ``plan``.

    Returns ``(report, records)``. Aborts with :class:`LeakageError` as soon
    as an audited run touched test data outside the final evaluation.
    """
    plan.check_dataset(fds.dataset)
    if R is not None and R != plan.r_runs:
        if not 1 <= R <= plan.r_runs:
            raise ValueError(f"plan pre-materialises {plan.r_runs} final runs; cannot use R={R}")
        plan = _truncate_runs(plan, R)
    if not grid:
        raise SelectionError("empty grid")
    entries, all_records = [], []
    for fold in range(plan.k):
        selection = [execute_run(s, fds, policy, budget, trainer, dtype)
                     for s in selection_specs(plan, fold, grid)]
        all_records += selection
        _raise_on_leak(selection, plan)
        entry = fold_outcome(fold, grid, selection, None)
        finals = None
        if not entry["oor"]:
            finals = [execute_run(s, fds, policy, budget, trainer, dtype)
                      for s in final_specs(plan, fold, entry["selected_index"],
                                           grid[entry["selected_index"]])]
            all_records += finals
            _raise_on_leak(finals, plan)
        entries.append(fold_outcome(fold, grid, selection, finals))
    name = model_name or grid[0].model_kind
    return build_report(name, plan, grid, entries, feature_regime), all_records


def _truncate_runs(plan, R):
    from dataclasses import replace

    return replace(plan, r_runs=R, final_holdouts=tuple(h[:R] for h in plan.final_holdouts))


def _raise_on_leak(records, plan):
    ok, violations = audit_access(records, plan)
    if not ok:
        raise LeakageError(violations)


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------


def audit_access(records, plan):
    """Replay access logs; returns ``(passed, violations)``.

    Fails closed on missing or malformed logs.
    """
    violations = []
    for rec in records:
        d = rec.to_dict() if isinstance(rec, RunRecord) else dict(rec)
        rid = d.get("run_id", "<unknown>")
        fold = d.get("fold")
        log = d.get("access_log")
        if not isinstance(fold, int) or not 0 <= fold < plan.k:
            violations.append(f"{rid}: record carries no valid fold")
            continue
        if not isinstance(log, list) or not log:
            violations.append(f"{rid}: missing access log")
            continue
        test = set(plan.folds[fold])
        test_pos = []
        for pos, entry in enumerate(log):
            if (not isinstance(entry, dict) or entry.get("purpose") not in PURPOSES
                    or not isinstance(entry.get("indices"), list)):
                violations.append(f"{rid}: malformed access log entry {pos}")
                continue
            leaked = test & set(entry["indices"])
            if entry["purpose"] == "test":
                test_pos.append(pos)
                if d.get("purpose") != "final":
                    violations.append(f"{rid}: test fold accessed during model selection")
                elif set(entry["indices"]) != test:
                    violations.append(f"{rid}: test access does not match fold {fold} test set")
            elif leaked:
                violations.append(
                    f"{rid}: {len(leaked)} test index(es) of fold {fold} used for "
                    f"{entry['purpose']} ({entry.get('set_id')})")
        if len(test_pos) > 1:
            violations.append(f"{rid}: test fold evaluated {len(test_pos)} times")
        if test_pos and test_pos[-1] != len(log) - 1:
            violations.append(f"{rid}: data accessed after the test evaluation")
        if test_pos and test_pos[0] != len(log) - 1:
            violations.append(f"{rid}: test fold accessed before training finished")
    return not violations, violations
