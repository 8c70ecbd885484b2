"""CART decision trees: Gini impurity, exhaustive split search, recursive
construction, prediction, and Gini-decrease feature importance.

Conventions, fixed for determinism and testability:

* Splits minimize the weighted expected child impurity. Candidate
  thresholds are midpoints between consecutive distinct sorted values of a
  feature within the node pool.
* Samples with value <= threshold descend to the left child.
* Ties between equally good splits resolve to the lowest feature id, then
  the lowest threshold; weighted-majority ties at a node resolve to +1.
* Class weights multiply every sample's contribution to impurities and
  majority votes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .dataio import Dataset
from .errors import ContractError, DimensionError, FitError


@dataclass(frozen=True)
class TreeHyperparams:
    """Stopping rules for recursive construction. A node is split only
    while its depth is below `max_depth`, its pool holds at least
    `min_pool` samples, and its impurity exceeds `min_impurity`."""

    max_depth: int
    min_impurity: float = 0.0
    min_pool: int = 2
    class_weights: Mapping[int, float] | None = None

    def __post_init__(self):
        if self.max_depth < 1:
            raise ContractError("max_depth must be at least 1")
        if self.min_pool < 1:
            raise ContractError("min_pool must be at least 1")
        if self.min_impurity < 0:
            raise ContractError("min_impurity must be non-negative")
        if self.class_weights is not None:
            if set(self.class_weights) != {1, -1}:
                raise ContractError("class_weights must map exactly +1 and -1")
            if any(v <= 0 for v in self.class_weights.values()):
                raise ContractError("class weights must be positive")


@dataclass(frozen=True)
class TreeNode:
    """One node of a fitted tree. Internal nodes carry a comparison rule
    and two children; leaves carry the predicted class. `pool_fraction` is
    the share of training samples that reach the node, and `dominant_class`
    its weighted majority."""

    pool_fraction: float
    dominant_class: int
    class_counts: tuple[int, int]  # (positives, negatives), unweighted
    impurity: float
    feature_id: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature_id is None

    @property
    def predicted_class(self) -> int:
        return self.dominant_class


@dataclass(frozen=True)
class FeatureSampling:
    """Per-node random feature subset source for forest members: at every
    node a fresh draw of `subset_size` distinct features is offered to the
    split search, driven by a splitmix64 stream seeded with `seed`."""

    subset_size: int
    seed: int

    def __post_init__(self):
        if self.subset_size < 1:
            raise ContractError("subset_size must be at least 1")


@dataclass(frozen=True)
class SplitDecision:
    feature_id: int
    threshold: float
    expected_impurity: float


@dataclass(frozen=True)
class TreeModel:
    """A fitted tree stored as flat arrays (fast descent) plus a lazily
    built node-object view. `importance` is the L1-normalized sum of
    pool_fraction x impurity-decrease per feature."""

    schema_digest: str
    hyperparams: TreeHyperparams
    n_features: int
    n_train: int
    nodes: dict = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes["feature"])

    @cached_property
    def root(self) -> TreeNode:
        return self._build_node(0)

    def _build_node(self, slot: int) -> TreeNode:
        nd = self.nodes
        npos = int(nd["np_cnt"][slot])
        counts = (npos, int(nd["n_node"][slot]) - npos)
        common = dict(
            pool_fraction=float(nd["n_node"][slot]) / self.n_train,
            dominant_class=int(nd["pred"][slot]),
            class_counts=counts,
            impurity=float(nd["impurity"][slot]),
        )
        if nd["feature"][slot] < 0:
            return TreeNode(**common)
        return TreeNode(
            **common,
            feature_id=int(nd["feature"][slot]),
            threshold=float(nd["threshold"][slot]),
            left=self._build_node(int(nd["left"][slot])),
            right=self._build_node(int(nd["right"][slot])),
        )

    @cached_property
    def importance(self) -> np.ndarray:
        return tree_importance(self)

    @cached_property
    def max_path_depth(self) -> int:
        nd = self.nodes
        depth = np.zeros(self.n_nodes, int)
        deepest = 0
        for slot in range(self.n_nodes):
            if nd["feature"][slot] >= 0:
                depth[nd["left"][slot]] = depth[slot] + 1
                depth[nd["right"][slot]] = depth[slot] + 1
            else:
                deepest = max(deepest, int(depth[slot]))
        return deepest


def resolve_weights(labels: np.ndarray, class_weights: Mapping[int, float] | None) -> np.ndarray:
    if class_weights is None:
        return np.ones(labels.shape[0])
    return np.where(labels == 1, float(class_weights[1]), float(class_weights[-1]))


def gini(weighted_counts: Mapping[int, float]) -> float:
    """Impurity of a pool with the given weighted class counts:
    1 - p_pos^2 - p_neg^2. Zero for a pure pool, 0.5 for an even one."""
    wp = float(weighted_counts.get(1, 0.0))
    wn = float(weighted_counts.get(-1, 0.0))
    if wp < 0 or wn < 0:
        raise ContractError("weighted counts must be non-negative")
    total = wp + wn
    if total <= 0:
        raise ContractError("gini of an empty pool is undefined")
    return 1.0 - (wp / total) * (wp / total) - (wn / total) * (wn / total)


def best_split(
    pool: Sequence[int],
    data: Dataset,
    candidate_features: Sequence[int] | None = None,
    weights: np.ndarray | None = None,
) -> SplitDecision | None:
    """Exhaustively search candidate features and midpoint thresholds for
    the split minimizing the weighted expected child impurity. Returns
    None when no split strictly reduces the pool's impurity."""
    idx = np.asarray(pool, dtype=np.int64)
    if idx.shape[0] < 2:
        raise ContractError("a split needs a pool of at least 2 samples")
    if weights is None:
        weights = np.ones(data.n)
    lab01 = (data.labels == 1).astype(np.int8)
    wp_tot = float(weights[idx][lab01[idx] == 1].sum())
    wn_tot = float(weights[idx][lab01[idx] == 0].sum())
    parent = gini({1: wp_tot, -1: wn_tot})

    if candidate_features is None:
        candidate_features = range(data.d)
    best: SplitDecision | None = None
    for f in sorted(int(f) for f in candidate_features):
        vals = np.ascontiguousarray(data.values[idx, f])
        e, thr, found = _kernels.split_scan(
            vals, lab01[idx], np.ascontiguousarray(weights[idx]), wp_tot, wn_tot
        )
        if found and (best is None or e < best.expected_impurity):
            best = SplitDecision(f, float(thr), float(e))
    if best is None or best.expected_impurity >= parent:
        return None
    return best


def _fit_arrays(
    X: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
    sample_idx: np.ndarray,
    hp: TreeHyperparams,
    sampling: FeatureSampling | None,
) -> dict:
    lab01 = (labels == 1).astype(np.int8)
    if sampling is None:
        mtry = X.shape[1]
        state = np.zeros(1, np.uint64)
        use_sampling = False
    else:
        mtry = min(sampling.subset_size, X.shape[1])
        state = np.array([np.uint64(sampling.seed)], np.uint64)
        use_sampling = mtry < X.shape[1]
    out = _kernels.build_tree(
        X,
        lab01,
        weights,
        sample_idx,
        hp.max_depth,
        hp.min_impurity,
        hp.min_pool,
        mtry,
        state,
        use_sampling,
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
    return dict(zip(keys, out))


def fit_tree(
    train: Dataset,
    hp: TreeHyperparams,
    feature_sampling: FeatureSampling | None = None,
    sample_idx: np.ndarray | None = None,
) -> TreeModel:
    """Recursively grow a tree on fully observed training data. The
    optional `sample_idx` restricts the root pool (used for bootstrap
    members); `feature_sampling` turns on per-node random feature subsets.
    """
    if np.isnan(train.values).any():
        raise ContractError("training data must be imputed before tree fitting")
    if sample_idx is None:
        sample_idx = np.arange(train.n, dtype=np.int64)
    else:
        sample_idx = np.asarray(sample_idx, dtype=np.int64)
    pool_labels = train.labels[sample_idx]
    if not ((pool_labels == 1).any() and (pool_labels == -1).any()):
        raise FitError("tree fitting requires samples from both classes")
    weights = resolve_weights(train.labels, hp.class_weights)
    nodes = _fit_arrays(train.values, train.labels, weights, sample_idx, hp, feature_sampling)
    return TreeModel(
        schema_digest=train.schema.digest(),
        hyperparams=hp,
        n_features=train.d,
        n_train=int(sample_idx.shape[0]),
        nodes=nodes,
    )


def predict_tree(model: TreeModel, x: np.ndarray) -> int:
    """Descend comparisons from the root; at most max_depth of them."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.n_features,):
        raise DimensionError(f"expected a {model.n_features}-vector, got shape {x.shape}")
    nd = model.nodes
    return int(
        _kernels.tree_descend(nd["feature"], nd["threshold"], nd["left"], nd["right"], nd["pred"], x)
    )


def predict_tree_batch(model: TreeModel, X: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise DimensionError(f"expected rows of length {model.n_features}")
    out = np.empty(X.shape[0], np.int64)
    nd = model.nodes
    _kernels.tree_predict_batch(
        nd["feature"], nd["threshold"], nd["left"], nd["right"], nd["pred"], X, out
    )
    return out


def tree_importance(model: TreeModel) -> np.ndarray:
    """Per-feature importance: sum over the nodes splitting on a feature of
    pool_fraction x (node impurity - expected child impurity), then
    L1-normalized to sum 1. Features never split on score 0."""
    nd = model.nodes
    scores = np.zeros(model.n_features)
    for slot in range(model.n_nodes):
        f = int(nd["feature"][slot])
        if f < 0:
            continue
        frac = float(nd["n_node"][slot]) / model.n_train
        scores[f] += frac * (float(nd["impurity"][slot]) - float(nd["child_e"][slot]))
    total = scores.sum()
    if total > 0:
        scores /= total
    return scores


def render_tree(
    model: TreeModel,
    feature_names: Sequence[str] | None = None,
    class_names: Mapping[int, str] | None = None,
) -> str:
    """Indented plain-text rule view: each node shows its comparison (or
    leaf class), the share of training samples reaching it, and its
    dominant class."""
    names = class_names or {1: "+1", -1: "-1"}

    def fname(f: int) -> str:
        return feature_names[f] if feature_names else f"x{f}"

    lines: list[str] = []

    def walk(node: TreeNode, indent: int) -> None:
        pad = "  " * indent
        tag = f"pool {100 * node.pool_fraction:.1f}%, dominant {names[node.dominant_class]}"
        if node.is_leaf:
            lines.append(f"{pad}=> {names[node.predicted_class]} ({tag})")
            return
        lines.append(f"{pad}{fname(node.feature_id)} <= {node.threshold:g} ({tag})")
        walk(node.left, indent + 1)
        lines.append(f"{pad}{fname(node.feature_id)} > {node.threshold:g}")
        walk(node.right, indent + 1)

    walk(model.root, 0)
    return "\n".join(lines)
