"""Random forests: bootstrap-resampled CART members with per-node random
feature subsets and unweighted majority-vote prediction.

Randomness is split from one root seed into independent per-tree streams,
so growing a larger forest never changes the trees a smaller one grew, and
parallel fitting stays deterministic. Vote ties go to the positive class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import _kernels, cart
from .dataio import Dataset
from .errors import ContractError, DimensionError, FitError

MaxFeaturesMode = Literal["all", "sqrt", "log2"]

BOOTSTRAP_RETRIES = 16


@dataclass(frozen=True)
class ForestHyperparams:
    n_tree: int
    max_features: MaxFeaturesMode
    tree_hp: cart.TreeHyperparams
    seed: int = 0
    bootstrap: bool = True  # disabling is a test-only switch

    def __post_init__(self):
        if self.n_tree < 1:
            raise ContractError("n_tree must be at least 1")
        if self.max_features not in ("all", "sqrt", "log2"):
            raise ContractError(f"unknown max_features mode {self.max_features!r}")


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[cart.TreeModel, ...]
    hyperparams: ForestHyperparams
    schema_digest: str

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features


def feature_subset_size(d: int, mode: MaxFeaturesMode) -> int:
    """Per-node candidate-set size: all features, ceil(sqrt(d)), or
    ceil(log2(d)), never below 1."""
    if mode == "all":
        return d
    if mode == "sqrt":
        return max(1, math.ceil(math.sqrt(d)))
    if mode == "log2":
        return max(1, math.ceil(math.log2(d)))
    raise ContractError(f"unknown max_features mode {mode!r}")


def fit_forest_arrays(
    values: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
    hp: ForestHyperparams,
) -> tuple[dict, np.ndarray]:
    """Grow all members in one compiled call; returns the concatenated node
    arrays plus per-tree offsets. Raises when some bootstrap draw keeps
    producing a single class."""
    mtry = feature_subset_size(values.shape[1], hp.max_features)
    use_sampling = hp.max_features != "all" and mtry < values.shape[1]
    seeds = np.random.SeedSequence(hp.seed).generate_state(2 * hp.n_tree, np.uint64)
    out = _kernels.build_forest(
        np.ascontiguousarray(values),
        (labels == 1).astype(np.int8),
        np.ascontiguousarray(weights),
        hp.n_tree,
        hp.tree_hp.max_depth,
        hp.tree_hp.min_impurity,
        hp.tree_hp.min_pool,
        mtry,
        use_sampling,
        hp.bootstrap,
        seeds,
        BOOTSTRAP_RETRIES,
    )
    failed = int(out[-1])
    if failed >= 0:
        raise FitError(
            f"bootstrap draw for tree {failed} produced a single class "
            f"{BOOTSTRAP_RETRIES} times in a row"
        )
    keys = (
        "feature",
        "threshold",
        "left",
        "right",
        "pred",
        "n_node",
        "np_cnt",
        "wp",
        "wn",
        "impurity",
        "child_e",
    )
    return dict(zip(keys, out[:-2])), out[-2]


def fit_forest(train: Dataset, hp: ForestHyperparams) -> ForestModel:
    """Fit `n_tree` members, each on an N-sample bootstrap draw with fresh
    per-node feature subsets. A draw that lands on a single class is
    retried a bounded number of times, then fails loudly rather than
    contributing a degenerate vote."""
    train.require_both_classes("forest fitting")
    if np.isnan(train.values).any():
        raise ContractError("training data must be imputed before forest fitting")
    weights = cart.resolve_weights(train.labels, hp.tree_hp.class_weights)
    stacked, offsets = fit_forest_arrays(train.values, train.labels, weights, hp)
    digest = train.schema.digest()
    trees = []
    for t in range(hp.n_tree):
        lo, hi = int(offsets[t]), int(offsets[t + 1])
        nodes = {k: v[lo:hi] for k, v in stacked.items()}
        trees.append(
            cart.TreeModel(
                schema_digest=digest,
                hyperparams=hp.tree_hp,
                n_features=train.d,
                n_train=int(nodes["n_node"][0]),
                nodes=nodes,
            )
        )
    return ForestModel(tuple(trees), hp, digest)


def predict_forest(model: ForestModel, x: np.ndarray) -> int:
    """Unweighted majority vote of the members; a tie predicts +1."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.n_features,):
        raise DimensionError(f"expected a {model.n_features}-vector, got shape {x.shape}")
    vote = sum(cart.predict_tree(t, x) for t in model.trees)
    return 1 if vote >= 0 else -1


def predict_forest_batch(model: ForestModel, X: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    votes = np.zeros(X.shape[0], np.int64)
    for t in model.trees:
        votes += cart.predict_tree_batch(t, X)
    return np.where(votes >= 0, 1, -1)
