"""Leave-one-out cross-validation, pooled metrics, class weighting, and
two-round grid search.

Every fold refits preprocessing and the classifier from scratch on the
remaining rows, so the held-out sample never influences imputation or
standardization statistics. With one-sample test folds, per-fold metrics
are degenerate, so confusion counts are pooled over all folds before any
ratio is taken.

Grid rounds: a coarse pass over power-of-two candidates (2^-10 .. 2^10 for
the continuous hyperparameters), then a fine pass of 20 linearly spaced
points per continuous hyperparameter spanning [best/2, 2*best]. The best
point overall is the highest pooled balanced accuracy; ties prefer smaller
C, then smaller gamma, then the lexicographically smallest remaining
hyperparameters.
"""

from __future__ import annotations

import itertools
import json
import os
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .dataio import (
    Dataset,
    PreprocessParams,
    apply_preprocess,
    fit_preprocess,
    preprocess_vector,
)
from .errors import ContractError, FitError

COARSE_EXPONENTS = range(-10, 11)  # 2^-10 .. 2^10, multiplicative step 2
FINE_POINTS = 20


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fn: int
    tn: int
    fp: int

    def __post_init__(self):
        if min(self.tp, self.fn, self.tn, self.fp) < 0:
            raise ContractError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.tn + self.fp


@dataclass(frozen=True)
class MetricReport:
    balanced_accuracy: float
    sensitivity: float
    specificity: float
    precision: float | None  # None when nothing was predicted positive

    def as_dict(self) -> dict:
        return {
            "balanced_accuracy": self.balanced_accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "precision": self.precision,
        }


def compute_metrics(c: ConfusionCounts) -> MetricReport:
    """Recall on each class, their mean, and precision. Requires both
    classes in the ground truth; precision is flagged undefined (None)
    when the classifier predicted nothing positive."""
    if c.tp + c.fn == 0:
        raise ContractError("no actual positives: sensitivity undefined")
    if c.tn + c.fp == 0:
        raise ContractError("no actual negatives: specificity undefined")
    sensitivity = c.tp / (c.tp + c.fn)
    specificity = c.tn / (c.tn + c.fp)
    precision = c.tp / (c.tp + c.fp) if (c.tp + c.fp) > 0 else None
    return MetricReport(
        balanced_accuracy=(sensitivity + specificity) / 2.0,
        sensitivity=sensitivity,
        specificity=specificity,
        precision=precision,
    )


def class_weights(labels: np.ndarray | Sequence[int]) -> dict[int, float]:
    """Weights inversely proportional to class size, normalized so a
    balanced set gets weight 1 on both classes: w(c) = N / (2 * N_c)."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == -1).sum())
    if n_pos == 0 or n_neg == 0:
        raise ContractError("class weights need samples from both classes")
    return {1: n / (2.0 * n_pos), -1: n / (2.0 * n_neg)}


# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------


def fold_seed(base_seed: int, fold_index: int) -> int:
    """Stable per-fold seed schedule, shared by every grid point so that
    stochastic trainers see identical randomness at identical folds."""
    return int(np.random.SeedSequence((base_seed, fold_index)).generate_state(1, np.uint64)[0])


@dataclass
class Fold:
    """One LOOCV fold: preprocessing fitted on the kept rows, the held-out
    row transformed with those same parameters. Kernel-related caches are
    filled lazily by the trainers that need them."""

    index: int
    preprocess: PreprocessParams
    X_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: int
    seed: int
    schema_digest: str
    _dataset: Dataset | None = field(default=None, repr=False)
    _d2: np.ndarray | None = field(default=None, repr=False)
    _d2_test: np.ndarray | None = field(default=None, repr=False)
    _lin: np.ndarray | None = field(default=None, repr=False)

    def train_dataset(self, template: Dataset) -> Dataset:
        if self._dataset is None:
            self._dataset = Dataset(
                template.schema, self.X_train, self.y_train, template.class_names
            )
        return self._dataset

    def sq_dists(self):
        from .svm import pairwise_sq_dists

        if self._d2 is None:
            self._d2 = pairwise_sq_dists(self.X_train)
            self._d2_test = pairwise_sq_dists(self.X_train, self.x_test[None, :])[:, 0]
        return self._d2, self._d2_test

    def linear_gram(self) -> np.ndarray:
        if self._lin is None:
            self._lin = self.X_train @ self.X_train.T
        return self._lin


def build_folds(data: Dataset, base_seed: int = 0) -> list[Fold]:
    if data.n < 2:
        raise ContractError("leave-one-out needs at least 2 samples")
    n_pos = int((data.labels == 1).sum())
    n_neg = int((data.labels == -1).sum())
    if min(n_pos, n_neg) < 2:
        raise FitError(
            "every class needs at least 2 samples, otherwise some training fold is single-class"
        )
    digest = data.schema.digest()
    folds = []
    all_rows = np.arange(data.n)
    for i in range(data.n):
        keep = np.concatenate([all_rows[:i], all_rows[i + 1 :]])
        sub = data.take_rows(keep)
        params = fit_preprocess(sub)
        folds.append(
            Fold(
                index=i,
                preprocess=params,
                X_train=apply_preprocess(params, sub).values,
                y_train=sub.labels,
                x_test=preprocess_vector(params, data.values[i]),
                y_test=int(data.labels[i]),
                seed=fold_seed(base_seed, i),
                schema_digest=digest,
            )
        )
    return folds


# ---------------------------------------------------------------------------
# Classifier family protocol
# ---------------------------------------------------------------------------


class FoldWorker(Protocol):
    def fit_predict(self, params: Mapping[str, Any], seed: int) -> tuple[int, float | None]:
        ...


class ClassifierFamily(Protocol):
    """A trainable model family exposed to the search machinery. `fit` must
    be a pure function of (training data, hyperparameters, seed)."""

    name: str
    classifier_kind: str
    continuous_params: tuple[str, ...]

    def fit(self, train: Dataset, params: Mapping[str, Any], seed: int) -> Any: ...

    def predict(self, model: Any, x: np.ndarray) -> tuple[int, float | None]: ...

    def coarse_grid(self) -> "GridSpec": ...

    def fold_worker(self, fold: Fold, template: Dataset) -> FoldWorker: ...


# ---------------------------------------------------------------------------
# Cross-validation results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldPrediction:
    index: int
    true_label: int
    predicted: int
    score: float | None


@dataclass(frozen=True)
class CvResult:
    fold_predictions: tuple[FoldPrediction, ...]
    counts: ConfusionCounts
    metrics: MetricReport
    hyperparams: Mapping[str, Any]
    refit: Any | None = None


def pool_confusion(preds: Iterable[FoldPrediction]) -> ConfusionCounts:
    tp = fn = tn = fp = 0
    for p in preds:
        if p.true_label == 1:
            if p.predicted == 1:
                tp += 1
            else:
                fn += 1
        else:
            if p.predicted == -1:
                tn += 1
            else:
                fp += 1
    return ConfusionCounts(tp, fn, tn, fp)


def _result_from_predictions(
    preds: Sequence[FoldPrediction], params: Mapping[str, Any]
) -> CvResult:
    counts = pool_confusion(preds)
    return CvResult(tuple(preds), counts, compute_metrics(counts), dict(params))


def loocv(
    data: Dataset,
    family: ClassifierFamily,
    params: Mapping[str, Any],
    base_seed: int = 0,
    n_jobs: int = 1,
) -> CvResult:
    """N folds; fold i trains preprocessing and classifier on the other
    N-1 rows and predicts row i. Counts are pooled over all N predictions."""
    (result,) = evaluate_points(data, family, [dict(params)], base_seed, n_jobs)
    return result


def evaluate_points(
    data: Dataset,
    family: ClassifierFamily,
    points: Sequence[Mapping[str, Any]],
    base_seed: int = 0,
    n_jobs: int = 1,
    folds: list[Fold] | None = None,
) -> list[CvResult]:
    """Run LOOCV for several hyperparameter points over one shared set of
    folds. Folds are independent and may run in parallel; per-point results
    are reduced in fold order either way."""
    if not points:
        raise ContractError("no hyperparameter points to evaluate")
    if folds is None:
        folds = build_folds(data, base_seed)
    # kernel caches react to gamma, so keep equal-gamma points adjacent
    eval_order = sorted(
        range(len(points)), key=lambda k: _params_order_key(points[k], gamma_major=True)
    )

    def run_fold(fold: Fold) -> list[tuple[int, float | None]]:
        worker = family.fold_worker(fold, data)
        out: list[tuple[int, float | None]] = [None] * len(points)  # type: ignore[list-item]
        for k in eval_order:
            out[k] = worker.fit_predict(points[k], fold.seed)
        return out

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            per_fold = list(pool.map(run_fold, folds))
    else:
        per_fold = [run_fold(f) for f in folds]

    results = []
    for k, params in enumerate(points):
        preds = [
            FoldPrediction(f.index, f.y_test, per_fold[i][k][0], per_fold[i][k][1])
            for i, f in enumerate(folds)
        ]
        results.append(_result_from_predictions(preds, params))
    return results


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Named candidate lists; the grid is their Cartesian product in
    declaration order."""

    params: Mapping[str, tuple]
    round: str = "coarse"

    def __post_init__(self):
        if not self.params or any(len(v) == 0 for v in self.params.values()):
            raise ContractError("every hyperparameter needs a non-empty candidate list")
        object.__setattr__(self, "params", {k: tuple(v) for k, v in self.params.items()})

    def points(self) -> list[dict[str, Any]]:
        names = list(self.params)
        return [
            dict(zip(names, combo))
            for combo in itertools.product(*(self.params[n] for n in names))
        ]

    @property
    def size(self) -> int:
        out = 1
        for v in self.params.values():
            out *= len(v)
        return out


def coarse_candidates() -> tuple[float, ...]:
    return tuple(2.0**e for e in COARSE_EXPONENTS)


def fine_candidates(best: float) -> tuple[float, ...]:
    """20 linearly spaced values bracketing the coarse winner between its
    neighbors on the power-of-two ladder, endpoints included."""
    return tuple(np.linspace(best / 2.0, best * 2.0, FINE_POINTS))


@dataclass(frozen=True)
class TraceRecord:
    round: str
    family: str
    params: Mapping[str, Any]
    balanced_accuracy: float
    sensitivity: float
    specificity: float
    precision: float | None
    n_folds: int
    base_seed: int

    def as_dict(self) -> dict:
        return {
            "round": self.round,
            "family": self.family,
            "params": dict(self.params),
            "balanced_accuracy": self.balanced_accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "precision": self.precision,
            "n_folds": self.n_folds,
            "base_seed": self.base_seed,
        }


@dataclass(frozen=True)
class GridSearchResult:
    best_params: Mapping[str, Any]
    best_result: CvResult
    trace: tuple[TraceRecord, ...]


def _params_order_key(params: Mapping[str, Any], gamma_major: bool = False):
    c = float(params.get("C", 0.0))
    gamma = float(params.get("gamma", 0.0))
    rest = tuple(sorted((k, v) for k, v in params.items() if k not in ("C", "gamma")))
    return (gamma, c, rest) if gamma_major else (c, gamma, rest)


def _selection_key(params: Mapping[str, Any], result: CvResult):
    return (-result.metrics.balanced_accuracy, _params_order_key(params))


def _fine_grid(family: ClassifierFamily, best: Mapping[str, Any]) -> GridSpec | None:
    cont = [p for p in family.continuous_params if p in best]
    if not cont:
        return None
    params: dict[str, tuple] = {}
    for name, value in best.items():
        params[name] = fine_candidates(float(value)) if name in cont else (value,)
    return GridSpec(params, round="fine")


def grid_search(
    data: Dataset,
    family: ClassifierFamily,
    coarse: GridSpec | None = None,
    base_seed: int = 0,
    n_jobs: int = 1,
) -> GridSearchResult:
    """Coarse round, then (for families with continuous hyperparameters) a
    fine round around the coarse winner. Every evaluated point lands in the
    trace; the best point over both rounds wins."""
    if coarse is None:
        coarse = family.coarse_grid()
    folds = build_folds(data, base_seed)

    evaluated: list[tuple[dict, CvResult, str]] = []
    trace: list[TraceRecord] = []

    def run_round(spec: GridSpec) -> None:
        points = sorted(spec.points(), key=_params_order_key)
        results = evaluate_points(data, family, points, base_seed, n_jobs, folds=folds)
        for params, result in zip(points, results):
            evaluated.append((params, result, spec.round))
            trace.append(
                TraceRecord(
                    round=spec.round,
                    family=family.name,
                    params=params,
                    balanced_accuracy=result.metrics.balanced_accuracy,
                    sensitivity=result.metrics.sensitivity,
                    specificity=result.metrics.specificity,
                    precision=result.metrics.precision,
                    n_folds=len(result.fold_predictions),
                    base_seed=base_seed,
                )
            )

    run_round(coarse)
    best_params, best_result, _ = min(evaluated, key=lambda e: _selection_key(e[0], e[1]))
    fine = _fine_grid(family, best_params)
    if fine is not None:
        run_round(fine)
        best_params, best_result, _ = min(evaluated, key=lambda e: _selection_key(e[0], e[1]))
    return GridSearchResult(best_params, best_result, tuple(trace))


def write_trace_jsonl(trace: Iterable[TraceRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in trace:
            fh.write(json.dumps(record.as_dict(), sort_keys=True) + "\n")


def read_trace_jsonl(path: str | Path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def default_jobs() -> int:
    env = os.environ.get("TRIAGE_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# Refit
# ---------------------------------------------------------------------------


def refit(
    data: Dataset,
    family: ClassifierFamily,
    params: Mapping[str, Any],
    seed: int = 0,
    task: str = "",
    timestamp: str | None = None,
):
    """Fit preprocessing on all rows, then the classifier on the fully
    preprocessed data, and package everything for export."""
    from .modelstore import ModelBundle  # deferred: modelstore pulls in model types

    pre_params = fit_preprocess(data)
    prepared = apply_preprocess(pre_params, data)
    model = family.fit(prepared, params, seed)

    imputed = np.where(np.isnan(data.values), pre_params.impute_means, data.values)
    delta = imputed[data.labels == 1].mean(axis=0) - imputed[data.labels == -1].mean(axis=0)

    if timestamp is None:
        timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    metadata = {
        "task": task or "",
        "trained_at": timestamp,
        "hyperparams": dict(params),
        "seed": int(seed),
        "class_mean_delta": [float(v) for v in delta],
    }
    return ModelBundle(
        schema=data.schema,
        class_names=data.class_names,
        preprocess=pre_params,
        classifier_kind=family.classifier_kind,
        classifier=model,
        metadata=metadata,
    )
