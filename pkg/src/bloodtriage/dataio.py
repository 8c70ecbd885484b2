"""Dataset representation and ingestion.

A dataset is a dense samples-by-features matrix of float64 where missing
measurements are NaN, plus binary labels in {+1, -1}. CSV files use a
header row, '.' decimals, and an empty cell for a missing value; the
feature list travels in a small JSON sidecar next to the CSV.

Sparsity filtering, mean imputation, and standardization follow a strict
train-only discipline: statistics are fitted on a training set and applied
unchanged to anything else, so no test information leaks into them.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    ContractError,
    DimensionError,
    EmptyDatasetError,
    FitError,
    IngestionError,
    SchemaError,
)

MISSING = float("nan")


def is_missing(v) -> np.ndarray | bool:
    return np.isnan(v)


@dataclass(frozen=True)
class Feature:
    id: int
    name: str
    unit: str = ""


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature descriptors fixing the meaning of each vector slot."""

    features: tuple[Feature, ...]
    has_age_gender: bool = False
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.features:
            raise SchemaError("schema must declare at least one feature")
        ids = [f.id for f in self.features]
        if ids != list(range(len(self.features))):
            raise SchemaError(f"feature ids must be 0..{len(self.features) - 1} in order, got {ids}")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")

    @property
    def d(self) -> int:
        return len(self.features)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def digest(self) -> str:
        payload = json.dumps(
            [[f.id, f.name, f.unit] for f in self.features], separators=(",", ":")
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def subset(self, kept_ids: Sequence[int]) -> "FeatureSchema":
        feats = tuple(
            Feature(i, self.features[old].name, self.features[old].unit)
            for i, old in enumerate(kept_ids)
        )
        return FeatureSchema(feats, self.has_age_gender, dict(self.metadata))


def blood_schema(include_demographics: bool = True) -> FeatureSchema:
    """The routine blood-test panel this toolkit ships with: 13 tests,
    optionally followed by age (years) and gender (0=male, 1=female)."""
    tests = [
        ("WBC", "10^9/L"),
        ("HGB", "g/L"),
        ("platelet", "10^9/L"),
        ("neutrophil %", "%"),
        ("neutrophil #", "10^9/L"),
        ("lymphocyte %", "%"),
        ("lymphocyte #", "10^9/L"),
        ("CRP", "mg/L"),
        ("TBIL", "umol/L"),
        ("BUN", "mmol/L"),
        ("creatinine", "umol/L"),
        ("LDH", "U/L"),
        ("D-dimer", "mg/L"),
    ]
    if include_demographics:
        tests += [("age", "years"), ("gender", "0=male,1=female")]
    feats = tuple(Feature(i, name, unit) for i, (name, unit) in enumerate(tests))
    meta = {"gender_encoding": "0=male,1=female"} if include_demographics else {}
    return FeatureSchema(feats, has_age_gender=include_demographics, metadata=meta)


def generic_schema(d: int) -> FeatureSchema:
    return FeatureSchema(tuple(Feature(i, f"feature_{i:02d}") for i in range(d)))


@dataclass(frozen=True)
class Dataset:
    """Immutable samples-by-features matrix with ±1 labels.

    NaN entries mark missing measurements. Labels use +1 for the positive
    class and -1 for the negative class; `class_names` maps each code to
    its display string.
    """

    schema: FeatureSchema
    values: np.ndarray
    labels: np.ndarray
    class_names: Mapping[int, str]

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        labels = np.asarray(self.labels, dtype=np.int64)
        if values.ndim != 2 or values.shape[1] != self.schema.d:
            raise DimensionError(
                f"values must be N x {self.schema.d}, got shape {values.shape}"
            )
        if labels.shape != (values.shape[0],):
            raise DimensionError("labels length must match the number of rows")
        bad = set(np.unique(labels)) - {1, -1}
        if bad:
            raise ContractError(f"labels must be +1 or -1, found {sorted(bad)}")
        if set(self.class_names) != {1, -1}:
            raise ContractError("class_names must map exactly +1 and -1")
        values.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", dict(self.class_names))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def replace_values(self, values: np.ndarray) -> "Dataset":
        return Dataset(self.schema, values, self.labels, self.class_names)

    def take_rows(self, rows: Sequence[int]) -> "Dataset":
        idx = np.asarray(rows, dtype=np.int64)
        return Dataset(self.schema, self.values[idx], self.labels[idx], self.class_names)

    def require_both_classes(self, context: str) -> None:
        if not ((self.labels == 1).any() and (self.labels == -1).any()):
            raise FitError(f"{context} requires samples from both classes")


@dataclass(frozen=True)
class PreprocessParams:
    """Imputation and standardization statistics fitted on one training set."""

    impute_means: np.ndarray
    standardize_means: np.ndarray
    standardize_scales: np.ndarray

    def __post_init__(self):
        for name in ("impute_means", "standardize_means", "standardize_scales"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            if arr.ndim != 1:
                raise DimensionError(f"{name} must be one-dimensional")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if not (
            self.impute_means.shape
            == self.standardize_means.shape
            == self.standardize_scales.shape
        ):
            raise DimensionError("preprocessing parameter vectors must share one length")
        if not (self.standardize_scales > 0).all():
            raise ContractError("standardization scales must be strictly positive")

    @property
    def d(self) -> int:
        return self.impute_means.shape[0]


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _parse_cell(text: str, row: int, column: str) -> float:
    text = text.strip()
    if text == "":
        return MISSING
    try:
        return float(text)
    except ValueError:
        raise IngestionError(
            f"data row {row}, column {column!r}: cannot parse {text!r} as a number"
        ) from None


def load_csv(
    path: str | Path,
    schema: FeatureSchema,
    label_column: str,
    class_names: Mapping[int, str],
) -> Dataset:
    """Read a dataset CSV whose header covers all schema features plus the
    label column. Empty cells become missing markers; label strings map to
    ±1 through `class_names` (literal "+1"/"-1"/"1" also accepted).
    Columns not named by the schema or label are ignored.
    """
    path = Path(path)
    label_map = {name: code for code, name in class_names.items()}
    label_map.update({"+1": 1, "1": 1, "-1": -1})
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        positions = {name: i for i, name in enumerate(header)}
        missing_features = [n for n in schema.names if n not in positions]
        if missing_features:
            raise IngestionError(f"{path}: header lacks schema features {missing_features}")
        if label_column not in positions:
            raise IngestionError(f"{path}: header lacks label column {label_column!r}")
        feat_pos = [positions[n] for n in schema.names]
        label_pos = positions[label_column]

        rows: list[list[float]] = []
        labels: list[int] = []
        for rownum, raw in enumerate(reader, start=1):
            if len(raw) != len(header):
                raise IngestionError(
                    f"data row {rownum}: expected {len(header)} columns, got {len(raw)}"
                )
            rows.append(
                [_parse_cell(raw[p], rownum, schema.names[j]) for j, p in enumerate(feat_pos)]
            )
            label_text = raw[label_pos].strip()
            if label_text not in label_map:
                raise IngestionError(
                    f"data row {rownum}, column {label_column!r}: unknown label {label_text!r}"
                )
            labels.append(label_map[label_text])
    if not rows:
        raise EmptyDatasetError(f"{path}: no data rows")
    return Dataset(schema, np.array(rows), np.array(labels), class_names)


def load_feature_rows(path: str | Path, schema: FeatureSchema) -> np.ndarray:
    """Read only the schema feature columns (no label required), e.g. for
    prediction inputs. Missing cells come back as NaN."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path}: file is empty") from None
        positions = {name: i for i, name in enumerate(header)}
        missing_features = [n for n in schema.names if n not in positions]
        if missing_features:
            raise IngestionError(f"{path}: header lacks schema features {missing_features}")
        feat_pos = [positions[n] for n in schema.names]
        rows = []
        for rownum, raw in enumerate(reader, start=1):
            if len(raw) != len(header):
                raise IngestionError(
                    f"data row {rownum}: expected {len(header)} columns, got {len(raw)}"
                )
            rows.append(
                [_parse_cell(raw[p], rownum, schema.names[j]) for j, p in enumerate(feat_pos)]
            )
    if not rows:
        raise EmptyDatasetError(f"{path}: no data rows")
    return np.array(rows)


def read_raw_column(path: str | Path, column: str) -> np.ndarray:
    """Read one numeric column (NaN for empty cells) from a CSV, for columns
    that live outside the schema such as a high-sensitivity CRP assay."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if column not in header:
            raise IngestionError(f"{path}: header lacks column {column!r}")
        pos = header.index(column)
        out = [
            _parse_cell(raw[pos], rownum, column) if pos < len(raw) else MISSING
            for rownum, raw in enumerate(reader, start=1)
        ]
    return np.array(out)


def save_csv(data: Dataset, path: str | Path, label_column: str = "diagnosis") -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(data.schema.names) + [label_column])
        for row, label in zip(data.values, data.labels):
            cells = ["" if math.isnan(v) else repr(float(v)) for v in row]
            writer.writerow(cells + [data.class_names[int(label)]])


# ---------------------------------------------------------------------------
# Schema sidecar
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sidecar:
    schema: FeatureSchema
    label_column: str
    class_names: Mapping[int, str]


def save_sidecar(sidecar: Sidecar, path: str | Path) -> None:
    obj = {
        "features": [
            {"id": f.id, "name": f.name, "unit": f.unit} for f in sidecar.schema.features
        ],
        "has_age_gender": sidecar.schema.has_age_gender,
        "metadata": dict(sidecar.schema.metadata),
        "label_column": sidecar.label_column,
        "class_names": {("+1" if k == 1 else "-1"): v for k, v in sidecar.class_names.items()},
    }
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def load_sidecar(path: str | Path) -> Sidecar:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid schema JSON ({exc})") from None
    try:
        feats = tuple(Feature(f["id"], f["name"], f.get("unit", "")) for f in obj["features"])
        schema = FeatureSchema(feats, obj.get("has_age_gender", False), obj.get("metadata", {}))
        class_names = {int(k): v for k, v in obj["class_names"].items()}
        return Sidecar(schema, obj["label_column"], class_names)
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"{path}: schema sidecar lacks {exc}") from None


# ---------------------------------------------------------------------------
# Cleaning rules
# ---------------------------------------------------------------------------


def apply_hscrp_rule(data: Dataset, crp_id: int, hscrp: np.ndarray | None) -> Dataset:
    """Overwrite the CRP slot with the high-sensitivity assay wherever the
    latter was measured; rows without it keep their ordinary CRP value."""
    if not 0 <= crp_id < data.d:
        raise DimensionError(f"crp_id {crp_id} out of range for {data.d} features")
    if hscrp is None:
        return data
    hscrp = np.asarray(hscrp, dtype=np.float64)
    if hscrp.shape != (data.n,):
        raise DimensionError("hscrp column length must match the number of rows")
    values = data.values.copy()
    present = ~np.isnan(hscrp)
    values[present, crp_id] = hscrp[present]
    return data.replace_values(values)


def filter_features(
    data: Dataset, group_labels: Sequence
) -> tuple[Dataset, tuple[int, ...]]:
    """Drop every feature that is missing on at least half of any group's
    samples; surviving features are re-indexed 0..d'-1."""
    tags = np.asarray(group_labels)
    if tags.shape != (data.n,):
        raise ContractError("every sample needs a group tag")
    missing = np.isnan(data.values)
    drop = np.zeros(data.d, dtype=bool)
    for tag in np.unique(tags):
        rows = tags == tag
        frac = missing[rows].mean(axis=0)
        drop |= frac >= 0.5
    kept = tuple(int(i) for i in np.flatnonzero(~drop))
    if not kept:
        raise SchemaError("feature filtering removed every feature")
    filtered = Dataset(
        data.schema.subset(kept), data.values[:, kept], data.labels, data.class_names
    )
    return filtered, kept


def filter_subjects(data: Dataset) -> tuple[Dataset, tuple[int, ...]]:
    """Drop every subject missing strictly more than 20% of the features."""
    frac = np.isnan(data.values).mean(axis=1)
    kept = tuple(int(i) for i in np.flatnonzero(frac <= 0.20))
    if not kept:
        raise EmptyDatasetError("subject filtering removed every row")
    return data.take_rows(kept), kept


# ---------------------------------------------------------------------------
# Imputation + standardization
# ---------------------------------------------------------------------------


def fit_preprocess(train: Dataset) -> PreprocessParams:
    """Fit per-feature imputation means, then standardization statistics on
    the imputed training matrix. Scales use the population standard
    deviation (divide by N); a constant feature gets scale 1 so that
    applying the parameters never divides by zero.
    """
    observed = ~np.isnan(train.values)
    counts = observed.sum(axis=0)
    if (counts == 0).any():
        bad = [train.schema.names[i] for i in np.flatnonzero(counts == 0)]
        raise FitError(f"features with no observed training values: {bad}")
    with np.errstate(invalid="ignore"):
        impute_means = np.nanmean(train.values, axis=0)
    imputed = np.where(observed, train.values, impute_means)
    means = imputed.mean(axis=0)
    scales = imputed.std(axis=0)
    scales = np.where(scales == 0.0, 1.0, scales)
    return PreprocessParams(impute_means, means, scales)


def apply_preprocess(params: PreprocessParams, data: Dataset) -> Dataset:
    if params.d != data.d:
        raise DimensionError(
            f"preprocessing is {params.d}-dimensional but data has {data.d} features"
        )
    filled = np.where(np.isnan(data.values), params.impute_means, data.values)
    out = (filled - params.standardize_means) / params.standardize_scales
    return data.replace_values(out)


def preprocess_vector(params: PreprocessParams, x: np.ndarray) -> np.ndarray:
    """Impute-and-standardize one raw sample; the only per-sample state is
    the fitted parameters, so this is safe anywhere."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.d,):
        raise DimensionError(f"expected a {params.d}-vector, got shape {x.shape}")
    filled = np.where(np.isnan(x), params.impute_means, x)
    return (filled - params.standardize_means) / params.standardize_scales


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Two-class Gaussian generator standing in for unavailable clinical
    data. `covariance` may be a d-vector of variances or a full d x d
    positive semi-definite matrix shared by both classes."""

    schema: FeatureSchema
    pos_mean: np.ndarray
    neg_mean: np.ndarray
    covariance: np.ndarray
    n_pos: int
    n_neg: int
    missing_rate: float = 0.0
    seed: int = 0
    class_names: Mapping[int, str] = field(
        default_factory=lambda: {1: "moderate", -1: "viral"}
    )


def _covariance_factor(cov: np.ndarray, d: int) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim == 1:
        if cov.shape != (d,) or (cov < 0).any():
            raise ContractError("diagonal covariance needs d non-negative variances")
        return np.diag(np.sqrt(cov))
    if cov.shape != (d, d):
        raise ContractError(f"covariance must be ({d},) or ({d},{d})")
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ContractError("covariance matrix must be symmetric")
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals.min() < -1e-10:
        raise ContractError("covariance matrix must be positive semi-definite")
    return eigvecs @ np.diag(np.sqrt(np.clip(eigvals, 0.0, None)))


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    if spec.n_pos < 1 or spec.n_neg < 1:
        raise ContractError("each class needs at least one sample")
    if not 0.0 <= spec.missing_rate < 1.0:
        raise ContractError("missing_rate must lie in [0, 1)")
    d = spec.schema.d
    pos_mean = np.asarray(spec.pos_mean, dtype=np.float64)
    neg_mean = np.asarray(spec.neg_mean, dtype=np.float64)
    if pos_mean.shape != (d,) or neg_mean.shape != (d,):
        raise DimensionError("class means must be d-vectors")
    factor = _covariance_factor(spec.covariance, d)
    rng = np.random.default_rng(spec.seed)
    n = spec.n_pos + spec.n_neg
    noise = rng.standard_normal((n, d)) @ factor.T
    means = np.vstack(
        [np.tile(pos_mean, (spec.n_pos, 1)), np.tile(neg_mean, (spec.n_neg, 1))]
    )
    values = means + noise
    if spec.missing_rate > 0.0:
        mask = rng.random((n, d)) < spec.missing_rate
        values = np.where(mask, np.nan, values)
    labels = np.concatenate([np.ones(spec.n_pos, int), -np.ones(spec.n_neg, int)])
    return Dataset(spec.schema, values, labels, spec.class_names)


def separated_gaussians(
    d: int = 15,
    n_pos: int = 150,
    n_neg: int = 150,
    separation: float = 3.0,
    missing_rate: float = 0.1,
    seed: int = 0,
    schema: FeatureSchema | None = None,
) -> Dataset:
    """Convenience generator: unit-variance Gaussians whose class means sit
    `separation` standard deviations apart on every feature."""
    if schema is None:
        schema = blood_schema() if d == 15 else generic_schema(d)
    if schema.d != d:
        raise DimensionError("schema size must match d")
    half = separation / 2.0
    return gen_synthetic(
        SyntheticSpec(
            schema=schema,
            pos_mean=np.full(d, half),
            neg_mean=np.full(d, -half),
            covariance=np.ones(d),
            n_pos=n_pos,
            n_neg=n_neg,
            missing_rate=missing_rate,
            seed=seed,
        )
    )
