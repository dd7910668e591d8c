"""Hyper-parameter grids: Cartesian expansion and preset search spaces.

A grid definition is a mapping with the model kind, optional fixed values
and an ordered ``axes`` mapping. An axis value may itself be a mapping, in
which case its keys are merged into the configuration; this expresses
coupled settings such as GIN's (hidden units, layers) pairs.
"""

from __future__ import annotations

import itertools

from .models import ModelConfig

# Search spaces of the reference benchmark protocol. Axes
# that do not map onto an in-scope model (DGCNN, DiffPool, ECC) are absent.
PRESETS = {
    "baseline_chemical": {
        "model_kind": "baseline_fingerprint",
        "fixed": {"epochs": 5000, "patience": 500},
        "axes": {
            "learning_rate": [1e-1, 1e-3, 1e-6],
            "hidden_units": [32, 128, 256],
            "batch_size": [32, 128],
            "l2": [1e-2, 1e-3, 1e-4],
            "stop_criterion": ["validation_loss", "validation_accuracy"],
        },
    },
    "baseline_imdb": {
        "model_kind": "baseline_deepsets",
        "fixed": {"epochs": 3000, "patience": 500},
        "axes": {
            "learning_rate": [1e-1, 1e-3, 1e-6],
            "hidden_units": [32, 128, 256],
            "batch_size": [32, 128],
            "l2": [1e-2, 1e-3, 1e-4],
            "stop_criterion": ["validation_loss", "validation_accuracy"],
        },
    },
    "baseline_collab_reddit": {
        "model_kind": "baseline_deepsets",
        "fixed": {"epochs": 3000, "patience": 500},
        "axes": {
            "learning_rate": [1e-1, 1e-3],
            "hidden_units": [32, 128],
            "batch_size": [32, 128],
            "l2": [1e-2, 1e-3, 1e-4],
            "stop_criterion": ["validation_loss", "validation_accuracy"],
        },
    },
    "baseline_enzymes": {
        "model_kind": "baseline_deepsets",
        "fixed": {"epochs": 5000, "patience": 1000, "batch_size": 32},
        "axes": {
            "learning_rate": [1e-1, 1e-3, 1e-6],
            "hidden_units": [32, 64, 128, 256],
            "l2": [1e-2, 1e-3, 1e-4],
            "stop_criterion": ["validation_loss", "validation_accuracy"],
        },
    },
    "gin": {
        "model_kind": "gin",
        "fixed": {"epochs": 1000, "patience": 500, "learning_rate": 1e-2,
                  "scheduler": "step_lr", "step_size": 50, "gamma": 0.5},
        "axes": {
            "batch_size": [32, 128],
            "arch": [
                {"hidden_units": 32, "layers": 5},
                {"hidden_units": 64, "layers": 5},
                {"hidden_units": 64, "layers": 2},
                {"hidden_units": 32, "layers": 3},
            ],
            "dropout": [0.0, 0.5],
            "stop_criterion": ["validation_loss", "validation_accuracy"],
        },
    },
    "graphsage": {
        "model_kind": "graphsage",
        "fixed": {"epochs": 1000, "patience": 500, "batch_size": 32},
        "axes": {
            "layers": [3, 5],
            "learning_rate": [1e-2, 1e-3, 1e-4],
            "hidden_units": [32, 64],
            "aggregation": ["mean", "max", "sum"],
            "stop_criterion": ["validation_loss", "validation_accuracy"],
        },
    },
}


class GridError(ValueError):
    pass


def expand_grid(grid_def):
    """List of :class:`ModelConfig`, first axis varying slowest."""
    if isinstance(grid_def, str):
        if grid_def not in PRESETS:
            raise GridError(f"unknown grid preset {grid_def!r}; known: {sorted(PRESETS)}")
        grid_def = PRESETS[grid_def]
    axes = grid_def.get("axes", {})
    for name, values in axes.items():
        if not isinstance(values, (list, tuple)) or not values:
            raise GridError(f"axis {name!r} must be a non-empty list")
    base = {"model_kind": grid_def["model_kind"], **grid_def.get("fixed", {})}
    names = list(axes)
    configs = []
    for combo in itertools.product(*(axes[n] for n in names)):
        cfg = dict(base)
        for name, value in zip(names, combo):
            if isinstance(value, dict):
                cfg.update(value)
            else:
                cfg[name] = value
        try:
            configs.append(ModelConfig.from_dict(cfg))
        except (TypeError, ValueError) as exc:
            raise GridError(f"invalid configuration {cfg}: {exc}") from None
    return configs


def grid_size(grid_def):
    if isinstance(grid_def, str):
        grid_def = PRESETS[grid_def]
    size = 1
    for values in grid_def.get("axes", {}).values():
        size *= len(values)
    return size
