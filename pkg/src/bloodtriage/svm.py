"""Soft-margin SVMs trained in the dual by sequential minimal optimization.

One box-constrained solver serves both the linear and the RBF kernel. Per
class, the box ceiling is C times that class's weight. The fitted model
keeps only samples with dual coefficient above a small threshold; for the
linear kernel it additionally carries the explicit weight vector, so
prediction can use either representation interchangeably.

Decision rule: f(x) = sum_i (alpha_i y_i) K(sv_i, x) + b, predicting +1
when f(x) >= 0. A score of exactly zero counts as positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Mapping

import numpy as np

from . import _kernels
from .dataio import Dataset
from .errors import ContractError, DimensionError, FitError, UnsupportedOperationError

SV_THRESHOLD = 1e-8  # dual coefficients at or below this are dropped
FREE_SV_TOL = 1e-8  # distance from the box edges that still counts as free


@dataclass(frozen=True)
class KernelSpec:
    kind: Literal["linear", "rbf"]
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ContractError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "rbf":
            if self.gamma is None or self.gamma <= 0:
                raise ContractError("rbf kernel requires gamma > 0")
        elif self.gamma is not None:
            raise ContractError("linear kernel takes no gamma")


@dataclass(frozen=True)
class SvmHyperparams:
    C: float
    kernel: KernelSpec
    class_weights: Mapping[int, float] | None = None  # None: balance on the training labels
    tol: float = 1e-3
    max_passes: int = 1_000_000

    def __post_init__(self):
        if self.C <= 0:
            raise ContractError("C must be positive")
        if self.tol <= 0:
            raise ContractError("tol must be positive")
        if self.max_passes < 1:
            raise ContractError("max_passes must be positive")


@dataclass(frozen=True)
class SvmModel:
    kernel: KernelSpec
    support_vectors: np.ndarray  # (S, d)
    dual_coefs: np.ndarray  # (S,), each alpha_i * y_i, nonzero
    bias: float
    weight_vector: np.ndarray | None = None  # linear kernel only
    converged: bool = True
    kkt_violation: float = 0.0
    n_iter: int = 0
    schema_digest: str = ""
    sv_indices: np.ndarray | None = field(default=None, repr=False)
    objective_trace: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_features(self) -> int:
        if self.weight_vector is not None:
            return int(self.weight_vector.shape[0])
        return int(self.support_vectors.shape[1])


def kernel_eval(k: KernelSpec, a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"kernel arguments must be equal-length vectors, got {a.shape} vs {b.shape}")
    if k.kind == "linear":
        return float(a @ b)
    diff = a - b
    return float(np.exp(-k.gamma * (diff @ diff)))


def pairwise_sq_dists(X: np.ndarray, Z: np.ndarray | None = None) -> np.ndarray:
    """Squared Euclidean distances, clipped at zero. Both the direct and
    the cached training paths go through here so their floats agree."""
    X = np.asarray(X, dtype=np.float64)
    Z = X if Z is None else np.asarray(Z, dtype=np.float64)
    sq_x = np.einsum("ij,ij->i", X, X)
    sq_z = np.einsum("ij,ij->i", Z, Z)
    d2 = sq_x[:, None] + sq_z[None, :] - 2.0 * (X @ Z.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def gram_matrix(k: KernelSpec, X: np.ndarray, Z: np.ndarray | None = None) -> np.ndarray:
    if k.kind == "linear":
        Z = X if Z is None else np.asarray(Z, dtype=np.float64)
        return np.asarray(X, dtype=np.float64) @ Z.T
    return np.exp(-k.gamma * pairwise_sq_dists(X, Z))


def _balanced_weights(labels: np.ndarray) -> dict[int, float]:
    n = labels.shape[0]
    n_pos = int((labels == 1).sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise FitError("svm fitting requires samples from both classes")
    return {1: n / (2.0 * n_pos), -1: n / (2.0 * n_neg)}


def box_ceilings(labels: np.ndarray, hp: SvmHyperparams) -> np.ndarray:
    """Per-sample dual upper bounds C_i = C * weight(y_i)."""
    weights = hp.class_weights if hp.class_weights is not None else _balanced_weights(labels)
    if set(weights) != {1, -1} or any(v <= 0 for v in weights.values()):
        raise ContractError("class_weights must map +1 and -1 to positive reals")
    return np.where(labels == 1, hp.C * float(weights[1]), hp.C * float(weights[-1]))


def fit_svm_gram(
    K: np.ndarray,
    X: np.ndarray,
    labels: np.ndarray,
    hp: SvmHyperparams,
    schema_digest: str = "",
    record_trace: bool = False,
) -> SvmModel:
    """Solve the dual on a precomputed Gram matrix. The public `fit_svm`
    and the cross-validation fast path both come through here, so a cached
    kernel can never change the result."""
    y = labels.astype(np.float64)
    C = box_ceilings(labels, hp)
    alpha, u, gap, steps, converged, trace = _kernels.smo_solve(
        np.ascontiguousarray(K, dtype=np.float64),
        y,
        np.ascontiguousarray(C, dtype=np.float64),
        hp.tol,
        hp.max_passes,
        record_trace,
    )

    # bias from free support vectors; fall back to the violating-gap
    # midpoint when every coefficient sits on a box edge
    g = y - u
    free = (alpha > FREE_SV_TOL) & (C - alpha > FREE_SV_TOL)
    if free.any():
        bias = float(g[free].mean())
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        lo = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        hi_g = g[up].max() if up.any() else 0.0
        lo_g = g[lo].min() if lo.any() else 0.0
        bias = float((hi_g + lo_g) / 2.0)

    keep = alpha > SV_THRESHOLD
    if not keep.any():
        keep = alpha > 0.0
    coefs = (alpha * y)[keep]
    svs = np.ascontiguousarray(X[keep])
    weight_vector = None
    if hp.kernel.kind == "linear":
        weight_vector = coefs @ svs if coefs.size else np.zeros(X.shape[1])
    return SvmModel(
        kernel=hp.kernel,
        support_vectors=svs,
        dual_coefs=coefs,
        bias=bias,
        weight_vector=weight_vector,
        converged=bool(converged),
        kkt_violation=float(gap),
        n_iter=int(steps),
        schema_digest=schema_digest,
        sv_indices=np.flatnonzero(keep),
        objective_trace=trace if record_trace else None,
    )


def fit_svm(train: Dataset, hp: SvmHyperparams, record_trace: bool = False) -> SvmModel:
    """Train on fully observed, standardized data. On hitting the pass
    budget the model is still returned, flagged unconverged and carrying
    the final violating gap."""
    train.require_both_classes("svm fitting")
    if np.isnan(train.values).any():
        raise ContractError("training data must be imputed before svm fitting")
    K = gram_matrix(hp.kernel, train.values)
    return fit_svm_gram(
        K, train.values, train.labels, hp, train.schema.digest(), record_trace
    )


def decision_function(model: SvmModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise DimensionError(f"expected rows of length {model.n_features}, got {X.shape[1]}")
    if model.kernel.kind == "linear" and model.weight_vector is not None:
        return X @ model.weight_vector + model.bias
    if model.dual_coefs.size == 0:
        return np.full(X.shape[0], model.bias)
    K = gram_matrix(model.kernel, X, model.support_vectors)
    return K @ model.dual_coefs + model.bias


def predict_svm(model: SvmModel, x: np.ndarray) -> tuple[int, float]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.n_features,):
        raise DimensionError(f"expected a {model.n_features}-vector, got shape {x.shape}")
    score = float(decision_function(model, x[None, :])[0])
    return (1 if score >= 0 else -1), score


def dual_objective(
    alphas: np.ndarray, labels: np.ndarray, K: np.ndarray
) -> float:
    """sum(alpha) - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij."""
    alphas = np.asarray(alphas, dtype=np.float64)
    coef = alphas * labels.astype(np.float64)
    return float(alphas.sum() - 0.5 * coef @ K @ coef)


def dual_objective_of_model(model: SvmModel) -> float:
    """Objective value reconstructed from the kept support vectors (the
    dropped coefficients are zero and contribute nothing)."""
    if model.dual_coefs.size == 0:
        return 0.0
    K = gram_matrix(model.kernel, model.support_vectors)
    return float(np.abs(model.dual_coefs).sum() - 0.5 * model.dual_coefs @ K @ model.dual_coefs)


def kkt_violation_report(model: SvmModel, train: Dataset, hp: SvmHyperparams) -> float:
    """Largest one-sided breach of the optimality conditions on the
    training set, in units of y*f(x): alpha=0 wants y*f >= 1, boxed
    alpha=C_i wants y*f <= 1, and free vectors want y*f = 1."""
    C = box_ceilings(train.labels, hp)
    alphas = np.zeros(train.n)
    if model.sv_indices is not None:
        alphas[model.sv_indices] = np.abs(model.dual_coefs)
    yf = train.labels * decision_function(model, train.values)
    worst = 0.0
    for a, ci, margin in zip(alphas, C, yf):
        if a <= SV_THRESHOLD:
            worst = max(worst, 1.0 - margin)
        elif a >= ci - FREE_SV_TOL:
            worst = max(worst, margin - 1.0)
        else:
            worst = max(worst, abs(margin - 1.0))
    return float(worst)


def svm_importance(model: SvmModel) -> np.ndarray:
    """Absolute linear weights, L1-normalized to sum 1. Only meaningful
    for the linear kernel, where each weight maps to one input feature."""
    if model.kernel.kind != "linear" or model.weight_vector is None:
        raise UnsupportedOperationError(
            "feature importance by weight magnitude requires a linear kernel"
        )
    mag = np.abs(model.weight_vector)
    total = mag.sum()
    return mag / total if total > 0 else mag
