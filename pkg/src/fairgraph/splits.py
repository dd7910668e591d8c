"""Deterministic stratified outer k-fold partitions with inner holdout splits.

Each class is shuffled with a seeded Philox stream and dealt round-robin
over the folds; the deal for class ``c`` continues at the fold after the one
where class ``c - 1`` stopped, so fold sizes also differ by at most one. Inside every outer
training portion a stratified 90/10 train/validation split is drawn for
model selection, and ``r_runs`` further 90/10 splits are pre-materialised
as early-stopping holdouts for the final retraining runs.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

PLAN_FORMAT = "fairgraph.splits/1"
HOLDOUT_FRACTION = 0.1

# stream tags for the independent random draws of a plan
_FOLDS, _INNER, _FINAL = 0, 1, 2

_SCHEMA = {
    "type": "object",
    "required": ["format", "dataset", "seed", "k", "r_runs", "n", "labels_sha256",
                 "folds", "inner", "final_holdouts"],
    "properties": {
        "format": {"const": PLAN_FORMAT},
        "dataset": {"type": "string"},
        "seed": {"type": "integer"},
        "k": {"type": "integer", "minimum": 2},
        "r_runs": {"type": "integer", "minimum": 1},
        "n": {"type": "integer", "minimum": 0},
        "labels_sha256": {"type": "string"},
        "folds": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
        "inner": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["train", "valid"],
                "properties": {
                    "train": {"type": "array", "items": {"type": "integer"}},
                    "valid": {"type": "array", "items": {"type": "integer"}},
                },
            },
        },
        "final_holdouts": {
            "type": "array",
            "items": {"type": "array",
                      "items": {"type": "array", "items": {"type": "integer"}}},
        },
    },
}


class SplitError(ValueError):
    pass


def labels_digest(labels):
    data = ",".join(str(int(x)) for x in labels).encode()
    return hashlib.sha256(data).hexdigest()


def _rng(seed, *stream):
    ss = np.random.SeedSequence(entropy=int(seed) % 2**64, spawn_key=stream)
    return np.random.Generator(np.random.Philox(ss))


def _nearest(x):
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class SplitPlan:
    dataset_name: str
    seed: int
    k: int
    r_runs: int
    n: int
    labels_sha256: str
    folds: tuple  # k sorted tuples of test indices
    inner: tuple  # k dicts {"train": tuple, "valid": tuple}
    final_holdouts: tuple  # k x r_runs sorted tuples

    def test_indices(self, fold):
        return self.folds[fold]

    def train_indices(self, fold):
        """Outer training portion: every index outside ``fold``."""
        held = set(self.folds[fold])
        return tuple(i for i in range(self.n) if i not in held)

    def final_split(self, fold, run):
        """(train, early-stopping holdout) for final run ``run`` of ``fold``."""
        hold = set(self.final_holdouts[fold][run])
        train = tuple(i for i in self.train_indices(fold) if i not in hold)
        return train, self.final_holdouts[fold][run]

    def to_dict(self):
        return {
            "format": PLAN_FORMAT,
            "dataset": self.dataset_name,
            "seed": self.seed,
            "k": self.k,
            "r_runs": self.r_runs,
            "n": self.n,
            "labels_sha256": self.labels_sha256,
            "folds": [list(f) for f in self.folds],
            "inner": [{"train": list(s["train"]), "valid": list(s["valid"])} for s in self.inner],
            "final_holdouts": [[list(h) for h in runs] for runs in self.final_holdouts],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        try:
            jsonschema.validate(d, _SCHEMA)
        except jsonschema.ValidationError as exc:
            raise SplitError(f"split file schema violation: {exc.message}") from None
        plan = cls(
            dataset_name=d["dataset"],
            seed=d["seed"],
            k=d["k"],
            r_runs=d["r_runs"],
            n=d["n"],
            labels_sha256=d["labels_sha256"],
            folds=tuple(tuple(f) for f in d["folds"]),
            inner=tuple({"train": tuple(s["train"]), "valid": tuple(s["valid"])} for s in d["inner"]),
            final_holdouts=tuple(tuple(tuple(h) for h in runs) for runs in d["final_holdouts"]),
        )
        plan.validate()
        return plan

    def validate(self, labels=None):
        """Check partition and disjointness invariants; optionally stratification."""
        if len(self.folds) != self.k or len(self.inner) != self.k or len(self.final_holdouts) != self.k:
            raise SplitError("plan must carry exactly k folds, inner splits and holdout sets")
        seen = set()
        for f in self.folds:
            fs = set(f)
            if len(fs) != len(f) or fs & seen:
                raise SplitError("folds overlap")
            seen |= fs
        if seen != set(range(self.n)):
            raise SplitError("folds do not cover [0, n)")
        for i in range(self.k):
            test = set(self.folds[i])
            train, valid = set(self.inner[i]["train"]), set(self.inner[i]["valid"])
            if train & valid:
                raise SplitError(f"fold {i}: inner train and valid overlap")
            if (train | valid) & test:
                raise SplitError(f"fold {i}: inner split touches the test fold")
            if train | valid != set(range(self.n)) - test:
                raise SplitError(f"fold {i}: inner split does not cover the training portion")
            if len(self.final_holdouts[i]) != self.r_runs:
                raise SplitError(f"fold {i}: expected {self.r_runs} final holdouts")
            for h in self.final_holdouts[i]:
                if set(h) & test or not h:
                    raise SplitError(f"fold {i}: final holdout empty or touches the test fold")
        if labels is not None:
            check_stratified(self, labels)

    def check_dataset(self, ds):
        if ds.name != self.dataset_name:
            raise SplitError(f"plan is for {self.dataset_name!r}, not {ds.name!r}")
        if len(ds) != self.n:
            raise SplitError(f"plan covers {self.n} graphs but {ds.name} has {len(ds)}")
        if labels_digest(ds.labels) != self.labels_sha256:
            raise SplitError(f"label checksum mismatch between plan and {ds.name}")


def _stratified_holdout(indices, labels, rng):
    """Per-class seeded shuffle; the first round(10%) (at least 1) go to holdout."""
    indices = np.asarray(indices, dtype=np.int64)
    keep, hold = [], []
    for c in np.unique(labels[indices]):
        members = indices[labels[indices] == c]
        members = members[rng.permutation(len(members))]
        size = max(1, _nearest(HOLDOUT_FRACTION * len(members)))
        hold.extend(members[:size].tolist())
        keep.extend(members[size:].tolist())
    return tuple(sorted(keep)), tuple(sorted(hold))


def make_split_plan(ds, k, seed, r_runs=3, strict=False):
    """Build a plan; with ``strict`` every class must have at least ``k`` members.

    Without ``strict`` a class smaller than ``k`` simply leaves some test
    folds without members of that class (its ideal per-fold share is < 1).
    """
    labels = np.asarray(ds.labels, dtype=np.int64)
    n = len(labels)
    if k < 2:
        raise SplitError("k must be at least 2")
    if k > n:
        raise SplitError(f"k={k} exceeds dataset size {n}")
    if r_runs < 1:
        raise SplitError("r_runs must be at least 1")
    counts = np.bincount(labels, minlength=ds.num_classes)
    for c, cnt in enumerate(counts):
        if strict and cnt < k:
            raise SplitError(f"class {c} has {cnt} members, fewer than k={k}")

    folds = [[] for _ in range(k)]
    rng = _rng(seed, _FOLDS)
    dealt = 0
    for c in range(ds.num_classes):
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(len(members))]
        for idx in members:
            folds[dealt % k].append(int(idx))
            dealt += 1
    folds = tuple(tuple(sorted(f)) for f in folds)

    inner, holdouts = [], []
    for i in range(k):
        held = set(folds[i])
        train_k = [j for j in range(n) if j not in held]
        tr, va = _stratified_holdout(train_k, labels, _rng(seed, _INNER, i))
        inner.append({"train": tr, "valid": va})
        holdouts.append(tuple(
            _stratified_holdout(train_k, labels, _rng(seed, _FINAL, i, r))[1]
            for r in range(r_runs)
        ))

    plan = SplitPlan(
        dataset_name=ds.name,
        seed=int(seed),
        k=k,
        r_runs=r_runs,
        n=n,
        labels_sha256=labels_digest(labels),
        folds=folds,
        inner=tuple(inner),
        final_holdouts=tuple(holdouts),
    )
    plan.validate()
    return plan


def check_stratified(plan, labels):
    """Each class count per fold must be the floor or ceil of its ideal share."""
    labels = np.asarray(labels, dtype=np.int64)
    totals = np.bincount(labels)
    for i, f in enumerate(plan.folds):
        got = np.bincount(labels[list(f)], minlength=len(totals))
        for c, total in enumerate(totals):
            share = total / plan.k
            if not math.floor(share) <= got[c] <= math.ceil(share):
                raise SplitError(f"fold {i}: class {c} has {got[c]} members, ideal share {share:.2f}")


def save_split_plan(plan, path):
    Path(path).write_text(plan.to_json())


def load_split_plan(path, ds=None):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SplitError(f"{path}: not valid JSON ({exc})") from None
    plan = SplitPlan.from_dict(doc)
    if ds is not None:
        plan.check_dataset(ds)
        check_stratified(plan, ds.labels)
    return plan
