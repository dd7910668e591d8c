"""Node-feature matrices for the chemical and social input regimes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

MODES = (
    "one_hot_label",
    "uninformative",
    "degree",
    "degree_one_hot",
    "attributes",
    "attributes_plus_label",
)


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    mode: str
    max_degree: Optional[int] = None
    normalize_degree: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise FeatureError(f"unknown feature mode {self.mode!r}; choose from {MODES}")
        if self.mode == "degree_one_hot" and (self.max_degree is None or self.max_degree < 0):
            raise FeatureError("degree_one_hot needs a non-negative max_degree")

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, str):
            return cls(d)
        return cls(**d)

    def to_dict(self):
        return {"mode": self.mode, "max_degree": self.max_degree,
                "normalize_degree": self.normalize_degree}

    def derived_width(self, ds):
        """Feature width this spec produces on ``ds``."""
        if self.mode in ("uninformative", "degree"):
            return 1
        if self.mode == "degree_one_hot":
            return self.max_degree + 1
        if self.mode == "one_hot_label":
            return len(ds.node_label_values())
        attr_width = len(ds.graphs[0].node_attributes[0]) if ds.graphs[0].node_count else 0
        if self.mode == "attributes":
            return attr_width
        return attr_width + len(ds.node_label_values())


@dataclass(frozen=True)
class FeaturizedDataset:
    dataset: object
    spec: FeatureSpec
    features: tuple  # one (node_count, width) float array per graph
    width: int

    def __len__(self):
        return len(self.features)


def _check_compatible(ds, spec):
    needs_labels = spec.mode in ("one_hot_label", "attributes_plus_label")
    needs_attrs = spec.mode in ("attributes", "attributes_plus_label")
    if needs_labels and not ds.has_node_labels:
        raise FeatureError(f"mode {spec.mode!r} needs node labels; {ds.name} has none")
    if needs_attrs and not ds.has_node_attributes:
        raise FeatureError(f"mode {spec.mode!r} needs node attributes; {ds.name} has none")


def _one_hot(values, vocab):
    index = {v: k for k, v in enumerate(vocab)}
    out = np.zeros((len(values), len(vocab)))
    out[np.arange(len(values)), [index[v] for v in values]] = 1.0
    return out


def build_features(ds, spec):
    _check_compatible(ds, spec)
    vocab = ds.node_label_values() if spec.mode in ("one_hot_label", "attributes_plus_label") else None
    max_deg = None
    if spec.mode == "degree" and spec.normalize_degree:
        max_deg = max((int(g.degrees.max()) for g in ds.graphs if g.node_count), default=0) or 1

    feats = []
    for g in ds.graphs:
        n = g.node_count
        if spec.mode == "uninformative":
            x = np.ones((n, 1))
        elif spec.mode == "degree":
            x = g.degrees.astype(float).reshape(n, 1)
            if max_deg is not None:
                x = x / max_deg
        elif spec.mode == "degree_one_hot":
            if n and g.degrees.max() > spec.max_degree:
                raise FeatureError(
                    f"observed degree {g.degrees.max()} exceeds max_degree {spec.max_degree}")
            x = np.zeros((n, spec.max_degree + 1))
            x[np.arange(n), g.degrees] = 1.0
        elif spec.mode == "one_hot_label":
            x = _one_hot(g.node_labels, vocab)
        elif spec.mode == "attributes":
            x = np.asarray(g.node_attributes, dtype=float).reshape(n, -1)
        else:
            x = np.concatenate(
                [np.asarray(g.node_attributes, dtype=float).reshape(n, -1),
                 _one_hot(g.node_labels, vocab)], axis=1)
        feats.append(x)
    width = spec.derived_width(ds)
    return FeaturizedDataset(ds, spec, tuple(feats), width)
