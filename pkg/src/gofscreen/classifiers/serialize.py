"""JSON save/load for fitted classifiers.

Every document has a ``"kind"`` key (``logistic``, ``tree`` or ``forest``).
Floats are written with ``repr`` precision, so a loaded model predicts
bit-identically to the one that was saved.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .forest import ForestModel
from .logistic import LogisticModel
from .tree import TreeModel

FORMAT_VERSION = 1

_TREE_ARRAYS = {
    "feature": np.int64,
    "threshold": np.float64,
    "left": np.int64,
    "right": np.int64,
    "value": np.float64,
    "n_node_samples": np.int64,
    "weighted_n_node_samples": np.float64,
    "node_depth": np.int64,
}


def _tree_dict(t: TreeModel) -> dict:
    d = {k: getattr(t, k).tolist() for k in _TREE_ARRAYS}
    d.update(n_features=t.n_features, max_depth_setting=t.max_depth_setting,
             columns=None if t.columns is None else list(t.columns))
    return d


def _tree_from(d: dict) -> TreeModel:
    arrays = {k: np.asarray(d[k], dtype=dt) for k, dt in _TREE_ARRAYS.items()}
    cols = d.get("columns")
    return TreeModel(**arrays, n_features=int(d["n_features"]), max_depth_setting=d.get("max_depth_setting"),
                     columns=None if cols is None else tuple(cols))


def model_to_dict(model) -> dict:
    if isinstance(model, LogisticModel):
        return {
            "kind": "logistic",
            "version": FORMAT_VERSION,
            "coef": model.coef.tolist(),
            "intercept": model.intercept,
            "mean": model.mean.tolist(),
            "scale": model.scale.tolist(),
            "C": model.C,
            "converged": model.converged,
            "n_iter": model.n_iter,
            "columns": None if model.columns is None else list(model.columns),
        }
    if isinstance(model, TreeModel):
        return {"kind": "tree", "version": FORMAT_VERSION, **_tree_dict(model)}
    if isinstance(model, ForestModel):
        return {
            "kind": "forest",
            "version": FORMAT_VERSION,
            "max_features": model.max_features,
            "columns": None if model.columns is None else list(model.columns),
            "in_bag": model.in_bag.tolist(),
            "trees": [_tree_dict(t) for t in model.trees],
        }
    raise TypeError(f"cannot serialise {type(model).__name__}")


def model_from_dict(d: dict):
    kind = d.get("kind")
    if d.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {d.get('version')!r}")
    cols = d.get("columns")
    cols = None if cols is None else tuple(cols)
    if kind == "logistic":
        return LogisticModel(
            coef=np.asarray(d["coef"], dtype=float),
            intercept=float(d["intercept"]),
            mean=np.asarray(d["mean"], dtype=float),
            scale=np.asarray(d["scale"], dtype=float),
            C=float(d["C"]),
            converged=bool(d["converged"]),
            n_iter=int(d["n_iter"]),
            columns=cols,
        )
    if kind == "tree":
        return _tree_from(d)
    if kind == "forest":
        return ForestModel(
            tuple(_tree_from(t) for t in d["trees"]),
            np.asarray(d["in_bag"], dtype=np.int32),
            int(d["max_features"]),
            cols,
        )
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))
