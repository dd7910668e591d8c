"""Fair, leakage-audited evaluation of graph classifiers.

Nested model assessment (outer stratified k-fold, inner holdout selection),
structure-agnostic baselines, GIN and GraphSAGE on a small numpy kernel,
and a resumable job scheduler with per-run wall-clock budgets.
"""

from .evaluation import EarlyStopPolicy, assess, audit_access, model_select
from .features import FeatureSpec, build_features
from .graph_data import Graph, GraphDataset, dataset_stats, parse_tu_dataset
from .grid import expand_grid
from .models import ModelConfig, build_model, selected_depth
from .splits import SplitPlan, load_split_plan, make_split_plan, save_split_plan

__version__ = "0.1.0"

__all__ = [
    "EarlyStopPolicy",
    "FeatureSpec",
    "Graph",
    "GraphDataset",
    "ModelConfig",
    "SplitPlan",
    "assess",
    "audit_access",
    "build_features",
    "build_model",
    "dataset_stats",
    "expand_grid",
    "load_split_plan",
    "make_split_plan",
    "model_select",
    "parse_tu_dataset",
    "save_split_plan",
    "selected_depth",
]
