"""Stub trainers that follow the access protocol but skip real training."""

import time

from fairgraph.evaluation import IndexSet


def fold_of(index_set):
    return int(index_set.set_id.split("/")[0][len("fold"):])


def _base(access, train, valid, test):
    access.view(train, "train")
    access.view(valid, "validate")
    out = {"status": "done", "epoch_metrics": [[0.5, 0.5, 0.5, 0.5]], "stop_epoch": 1,
           "best_epoch": 1, "final_valid_loss": 0.5}
    return out


def fixed_scores(fold_scores, valid_scores=None):
    """Test accuracy depends only on the fold; validation score on the config."""

    def trainer(access, config, train, valid, policy, seeds, budget, test):
        out = _base(access, train, valid, test)
        out["final_valid_score"] = (valid_scores or {}).get(config.hidden_units, 0.9)
        if test is not None:
            access.view(test, "test")
            out["final_test_score"] = fold_scores[fold_of(test)]
        return out

    return trainer


def per_run_scores(run_scores):
    """Test accuracy chosen per final run (keyed by the holdout set id)."""

    def trainer(access, config, train, valid, policy, seeds, budget, test):
        out = _base(access, train, valid, test)
        out["final_valid_score"] = 0.9
        if test is not None:
            access.view(test, "test")
            run = int(valid.set_id.split("/")[1][len("final"):])
            out["final_test_score"] = run_scores[run]
        return out

    return trainer


def sleepy(seconds_by_hidden):
    """Stub that sleeps, honouring the budget only when the caller enforces it."""

    def trainer(access, config, train, valid, policy, seeds, budget, test):
        out = _base(access, train, valid, test)
        time.sleep(seconds_by_hidden.get(config.hidden_units, 0.0))
        out["final_valid_score"] = config.hidden_units / 1000
        if test is not None:
            access.view(test, "test")
            out["final_test_score"] = 0.5
        return out

    return trainer


def leaky(plan):
    """Adversarial: peeks at the test fold while being model-selected."""

    def trainer(access, config, train, valid, policy, seeds, budget, test):
        out = _base(access, train, valid, test)
        fold = fold_of(valid)
        access.view(IndexSet(f"fold{fold}/test", plan.folds[fold]), "validate")
        out["final_valid_score"] = 0.9
        if test is not None:
            access.view(test, "test")
            out["final_test_score"] = 0.5
        return out

    return trainer


# Each scenario names the record kind it tampers with ("selection" or
# "final") and maps the record's train/validate log entries plus the fold's
# test indices to a tampered log. A final record's clean log ends with one
# test entry, so final scenarios add it themselves.
def _test_entry(test):
    return {"set_id": "t", "purpose": "test", "indices": sorted(test)}


def _with_index(entry, i):
    return dict(entry, indices=sorted(set(entry["indices"]) | {i}))


LEAK_SCENARIOS = {
    "test_as_validate": ("selection", lambda log, test: log + [
        {"set_id": "x", "purpose": "validate", "indices": sorted(test)}]),
    "test_as_train": ("final", lambda log, test: log + [
        {"set_id": "x", "purpose": "train", "indices": sorted(test)}, _test_entry(test)]),
    "one_test_index_in_train": ("selection", lambda log, test: [
        _with_index(log[0], min(test)), log[1]]),
    "one_test_index_in_holdout": ("final", lambda log, test: [
        log[0], _with_index(log[1], max(test)), _test_entry(test)]),
    "test_eval_during_selection": ("selection", lambda log, test: log + [_test_entry(test)]),
    "evaluated_twice": ("final", lambda log, test: log + [_test_entry(test), _test_entry(test)]),
    "train_after_test": ("final", lambda log, test: [_test_entry(test)] + log),
    "missing_log": ("selection", lambda log, test: None),
    "empty_log": ("final", lambda log, test: []),
    "malformed_entry": ("selection", lambda log, test: log + [{"purpose": "spy"}]),
}
