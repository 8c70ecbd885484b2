"""Concrete classifier families wired into the search machinery.

Each family translates a flat hyperparameter mapping (as found in grid
points, CLI flags, and bundle metadata) into the typed hyperparameters of
its trainer, balancing class weights on whatever training labels it sees.
The fold workers reuse per-fold kernel caches but call the exact same
fitting cores as the public trainers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from . import _kernels, cart, forest, svm
from .dataio import Dataset
from .errors import ContractError
from .evaluation import (
    Fold,
    GridSpec,
    class_weights,
    coarse_candidates,
)

TREE_DEPTH_RANGE = tuple(range(1, 11))
FOREST_SIZES = (10, 20, 50, 100)
FEATURE_MODES = ("all", "sqrt", "log2")


def _require(params: Mapping[str, Any], name: str, family: str):
    if name not in params:
        raise ContractError(f"family {family!r} requires hyperparameter {name!r}")
    return params[name]


# ---------------------------------------------------------------------------
# SVM families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SvmFamily:
    """Shared plumbing for the linear and RBF soft-margin SVMs."""

    rbf: bool

    @property
    def name(self) -> str:
        return "svm-rbf" if self.rbf else "svm-linear"

    classifier_kind = "svm"

    @property
    def continuous_params(self) -> tuple[str, ...]:
        return ("C", "gamma") if self.rbf else ("C",)

    def hyperparams(self, params: Mapping[str, Any]) -> svm.SvmHyperparams:
        c = float(_require(params, "C", self.name))
        if self.rbf:
            kernel = svm.KernelSpec("rbf", float(_require(params, "gamma", self.name)))
        else:
            kernel = svm.KernelSpec("linear")
        return svm.SvmHyperparams(C=c, kernel=kernel)

    def fit(self, train: Dataset, params: Mapping[str, Any], seed: int = 0) -> svm.SvmModel:
        return svm.fit_svm(train, self.hyperparams(params))

    def predict(self, model: svm.SvmModel, x: np.ndarray) -> tuple[int, float]:
        return svm.predict_svm(model, x)

    def coarse_grid(self) -> GridSpec:
        grid = {"C": coarse_candidates()}
        if self.rbf:
            grid["gamma"] = coarse_candidates()
        return GridSpec(grid, round="coarse")

    def fold_worker(self, fold: Fold, template: Dataset) -> "SvmFoldWorker":
        return SvmFoldWorker(self, fold)


class SvmFoldWorker:
    """Per-fold trainer that caches the Gram matrix: the linear one
    unconditionally, the RBF one for the most recent gamma (grid points
    arrive gamma-major, so consecutive fits usually share it)."""

    def __init__(self, family: SvmFamily, fold: Fold):
        self.family = family
        self.fold = fold
        self._gamma: float | None = None
        self._K: np.ndarray | None = None

    def _gram(self, hp: svm.SvmHyperparams) -> np.ndarray:
        if hp.kernel.kind == "linear":
            return self.fold.linear_gram()
        if self._gamma != hp.kernel.gamma:
            d2, _ = self.fold.sq_dists()
            self._K = np.exp(-hp.kernel.gamma * d2)
            self._gamma = hp.kernel.gamma
        return self._K

    def fit_predict(self, params: Mapping[str, Any], seed: int) -> tuple[int, float]:
        hp = self.family.hyperparams(params)
        fold = self.fold
        model = svm.fit_svm_gram(
            self._gram(hp), fold.X_train, fold.y_train, hp, fold.schema_digest
        )
        if hp.kernel.kind == "linear":
            score = float(model.weight_vector @ fold.x_test + model.bias)
        else:
            _, d2_test = fold.sq_dists()
            k_test = np.exp(-hp.kernel.gamma * d2_test[model.sv_indices])
            score = float(model.dual_coefs @ k_test + model.bias)
        return (1 if score >= 0 else -1), score


# ---------------------------------------------------------------------------
# Tree family
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TreeFamily:
    name = "tree"
    classifier_kind = "tree"
    continuous_params: tuple[str, ...] = ()

    def hyperparams(self, params: Mapping[str, Any], labels: np.ndarray) -> cart.TreeHyperparams:
        return cart.TreeHyperparams(
            max_depth=int(_require(params, "max_depth", self.name)),
            min_impurity=float(params.get("min_impurity", 0.0)),
            min_pool=int(params.get("min_pool", 2)),
            class_weights=class_weights(labels),
        )

    def fit(self, train: Dataset, params: Mapping[str, Any], seed: int = 0) -> cart.TreeModel:
        return cart.fit_tree(train, self.hyperparams(params, train.labels))

    def predict(self, model: cart.TreeModel, x: np.ndarray) -> tuple[int, None]:
        return cart.predict_tree(model, x), None

    def coarse_grid(self) -> GridSpec:
        return GridSpec({"max_depth": TREE_DEPTH_RANGE}, round="coarse")

    def fold_worker(self, fold: Fold, template: Dataset) -> "TreeFoldWorker":
        return TreeFoldWorker(self, fold, template)


class TreeFoldWorkerBase:
    def __init__(self, family, fold: Fold, template: Dataset):
        self.family = family
        self.fold = fold
        self.train = fold.train_dataset(template)


class TreeFoldWorker(TreeFoldWorkerBase):
    def fit_predict(self, params: Mapping[str, Any], seed: int) -> tuple[int, None]:
        model = self.family.fit(self.train, params, seed)
        return cart.predict_tree(model, self.fold.x_test), None


# ---------------------------------------------------------------------------
# Forest family
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForestFamily:
    name = "forest"
    classifier_kind = "forest"
    continuous_params: tuple[str, ...] = ()

    def hyperparams(
        self, params: Mapping[str, Any], labels: np.ndarray, seed: int
    ) -> forest.ForestHyperparams:
        tree_hp = cart.TreeHyperparams(
            max_depth=int(_require(params, "max_depth", self.name)),
            min_impurity=float(params.get("min_impurity", 0.0)),
            min_pool=int(params.get("min_pool", 2)),
            class_weights=class_weights(labels),
        )
        return forest.ForestHyperparams(
            n_tree=int(_require(params, "n_tree", self.name)),
            max_features=str(_require(params, "max_features", self.name)),
            tree_hp=tree_hp,
            seed=int(seed),
            bootstrap=bool(params.get("bootstrap", True)),
        )

    def fit(self, train: Dataset, params: Mapping[str, Any], seed: int = 0) -> forest.ForestModel:
        return forest.fit_forest(train, self.hyperparams(params, train.labels, seed))

    def predict(self, model: forest.ForestModel, x: np.ndarray) -> tuple[int, None]:
        return forest.predict_forest(model, x), None

    def coarse_grid(self) -> GridSpec:
        return GridSpec(
            {
                "max_depth": TREE_DEPTH_RANGE,
                "n_tree": FOREST_SIZES,
                "max_features": FEATURE_MODES,
            },
            round="coarse",
        )

    def fold_worker(self, fold: Fold, template: Dataset) -> "ForestFoldWorker":
        return ForestFoldWorker(self, fold, template)


class ForestFoldWorker:
    """Skips per-tree Python plumbing: the whole forest is grown by one
    compiled call on the fold's arrays and votes directly on the held-out
    sample. Seeds and draw order match the public trainer exactly."""

    def __init__(self, family: "ForestFamily", fold: Fold, template: Dataset):
        self.family = family
        self.fold = fold
        self._weights_cache: np.ndarray | None = None

    def fit_predict(self, params: Mapping[str, Any], seed: int) -> tuple[int, None]:
        fold = self.fold
        hp = self.family.hyperparams(params, fold.y_train, seed)
        if self._weights_cache is None:
            self._weights_cache = cart.resolve_weights(
                fold.y_train, class_weights(fold.y_train)
            )
        stacked, offsets = forest.fit_forest_arrays(
            fold.X_train, fold.y_train, self._weights_cache, hp
        )
        vote = _kernels.forest_vote(
            stacked["feature"],
            stacked["threshold"],
            stacked["left"],
            stacked["right"],
            stacked["pred"],
            offsets,
            fold.x_test,
        )
        return (1 if vote >= 0 else -1), None


FAMILIES: dict[str, Any] = {
    "svm-linear": SvmFamily(rbf=False),
    "svm-rbf": SvmFamily(rbf=True),
    "tree": TreeFamily(),
    "forest": ForestFamily(),
}


def get_family(name: str):
    if name not in FAMILIES:
        raise ContractError(f"unknown classifier family {name!r}; pick one of {sorted(FAMILIES)}")
    return FAMILIES[name]
