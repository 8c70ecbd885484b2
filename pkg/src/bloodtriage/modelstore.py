"""Versioned model-bundle serialization.

A bundle is the unit of deployment: feature schema, fitted preprocessing
parameters, the classifier, and free-form metadata, all in one canonical
JSON document (sorted keys, minimal separators, shortest round-trip float
decimals). Canonical form makes re-encoding a decoded bundle reproduce the
original bytes, so golden-file tests and cache keys stay stable, and a
browser can parse the same artifact with nothing but JSON.parse.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import cart, forest, svm
from .dataio import Dataset, Feature, FeatureSchema, PreprocessParams, preprocess_vector
from .errors import (
    BundleFormatError,
    BundleVersionError,
    ContractError,
    DimensionError,
)

FORMAT_VERSION = 1

Classifier = svm.SvmModel | cart.TreeModel | forest.ForestModel


def _classifier_dim(kind: str, model: Classifier) -> int:
    if kind == "svm":
        return model.n_features
    if kind == "tree":
        return model.n_features
    if kind == "forest":
        return model.n_features
    raise ContractError(f"unknown classifier kind {kind!r}")


@dataclass(frozen=True)
class ModelBundle:
    schema: FeatureSchema
    class_names: Mapping[int, str]
    preprocess: PreprocessParams
    classifier_kind: str
    classifier: Classifier
    metadata: Mapping[str, Any] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.classifier_kind not in ("svm", "tree", "forest"):
            raise ContractError(f"unknown classifier kind {self.classifier_kind!r}")
        d = self.schema.d
        if self.preprocess.d != d:
            raise DimensionError(
                f"preprocessing is {self.preprocess.d}-dimensional, schema has {d} features"
            )
        cd = _classifier_dim(self.classifier_kind, self.classifier)
        if cd != d:
            raise DimensionError(f"classifier expects {cd} features, schema has {d}")

    @property
    def d(self) -> int:
        return self.schema.d


def predict_bundle(bundle: ModelBundle, x_raw: np.ndarray) -> tuple[int, float | None]:
    """Impute missing entries from the bundle's training means, standardize,
    and evaluate the classifier. The one inference path shared by the CLI
    and the parity fixtures."""
    x = preprocess_vector(bundle.preprocess, np.asarray(x_raw, dtype=np.float64))
    if bundle.classifier_kind == "svm":
        return svm.predict_svm(bundle.classifier, x)
    if bundle.classifier_kind == "tree":
        return cart.predict_tree(bundle.classifier, x), None
    return forest.predict_forest(bundle.classifier, x), None


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------


def _floats(arr: np.ndarray) -> list[float]:
    return [float(v) for v in np.asarray(arr, dtype=np.float64)]


def _plain(obj):
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _signed_key(code: int) -> str:
    return "+1" if code == 1 else "-1"


def _encode_tree_nodes(model: cart.TreeModel, slot: int) -> dict:
    nd = model.nodes
    node = {
        "n": int(nd["n_node"][slot]),
        "pos": int(nd["np_cnt"][slot]),
        "wp": float(nd["wp"][slot]),
        "wn": float(nd["wn"][slot]),
        "impurity": float(nd["impurity"][slot]),
    }
    if nd["feature"][slot] < 0:
        node["class"] = int(nd["pred"][slot])
        return node
    node.update(
        {
            "feature": int(nd["feature"][slot]),
            "threshold": float(nd["threshold"][slot]),
            "dominant": int(nd["pred"][slot]),
            "child_expected": float(nd["child_e"][slot]),
            "left": _encode_tree_nodes(model, int(nd["left"][slot])),
            "right": _encode_tree_nodes(model, int(nd["right"][slot])),
        }
    )
    return node


def _encode_tree_hp(hp: cart.TreeHyperparams) -> dict:
    weights = None
    if hp.class_weights is not None:
        weights = {_signed_key(k): float(v) for k, v in hp.class_weights.items()}
    return {
        "max_depth": int(hp.max_depth),
        "min_impurity": float(hp.min_impurity),
        "min_pool": int(hp.min_pool),
        "class_weights": weights,
    }


def _encode_tree(model: cart.TreeModel) -> dict:
    return {
        "schema_digest": model.schema_digest,
        "hyperparams": _encode_tree_hp(model.hyperparams),
        "n_features": int(model.n_features),
        "n_train": int(model.n_train),
        "importance": _floats(model.importance),
        "root": _encode_tree_nodes(model, 0),
    }


def _encode_classifier(kind: str, model: Classifier) -> dict:
    if kind == "svm":
        kernel = {"kind": model.kernel.kind}
        if model.kernel.kind == "rbf":
            kernel["gamma"] = float(model.kernel.gamma)
        out = {
            "kind": "svm",
            "kernel": kernel,
            "support_vectors": [_floats(row) for row in model.support_vectors],
            "dual_coefs": _floats(model.dual_coefs),
            "bias": float(model.bias),
            "converged": bool(model.converged),
            "kkt_violation": float(model.kkt_violation),
            "n_iter": int(model.n_iter),
            "schema_digest": model.schema_digest,
        }
        if model.weight_vector is not None:
            out["weight_vector"] = _floats(model.weight_vector)
        return out
    if kind == "tree":
        return {"kind": "tree", **_encode_tree(model)}
    hp = model.hyperparams
    return {
        "kind": "forest",
        "n_tree": int(hp.n_tree),
        "max_features": hp.max_features,
        "seed": int(hp.seed),
        "bootstrap": bool(hp.bootstrap),
        "schema_digest": model.schema_digest,
        "trees": [_encode_tree(t) for t in model.trees],
    }


def encode_bundle(bundle: ModelBundle) -> bytes:
    obj = {
        "format_version": bundle.format_version,
        "schema": {
            "features": [
                {"id": f.id, "name": f.name, "unit": f.unit} for f in bundle.schema.features
            ],
            "has_age_gender": bundle.schema.has_age_gender,
            "metadata": dict(bundle.schema.metadata),
        },
        "class_names": {_signed_key(k): v for k, v in bundle.class_names.items()},
        "preprocess": {
            "impute_means": _floats(bundle.preprocess.impute_means),
            "standardize_means": _floats(bundle.preprocess.standardize_means),
            "standardize_scales": _floats(bundle.preprocess.standardize_scales),
        },
        "classifier": _encode_classifier(bundle.classifier_kind, bundle.classifier),
        "metadata": _plain(dict(bundle.metadata)),
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------


def _need(obj: dict, key: str, where: str):
    if key not in obj:
        raise BundleFormatError(f"bundle {where} lacks field {key!r}")
    return obj[key]


def _decode_tree_nodes(root: dict) -> tuple[dict, int]:
    """Rebuild the flat pre-order arrays the tree trainer produces."""
    cols = {
        k: []
        for k in (
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
    }

    def walk(node: dict) -> int:
        slot = len(cols["feature"])
        is_leaf = "feature" not in node
        for k in cols:
            cols[k].append(0)
        cols["n_node"][slot] = int(_need(node, "n", "tree node"))
        cols["np_cnt"][slot] = int(_need(node, "pos", "tree node"))
        cols["wp"][slot] = float(_need(node, "wp", "tree node"))
        cols["wn"][slot] = float(_need(node, "wn", "tree node"))
        cols["impurity"][slot] = float(_need(node, "impurity", "tree node"))
        if is_leaf:
            cols["feature"][slot] = -1
            cols["left"][slot] = -1
            cols["right"][slot] = -1
            cols["pred"][slot] = int(_need(node, "class", "leaf node"))
            if cols["pred"][slot] not in (1, -1):
                raise BundleFormatError("leaf class must be +1 or -1")
        else:
            cols["feature"][slot] = int(node["feature"])
            cols["threshold"][slot] = float(_need(node, "threshold", "split node"))
            cols["pred"][slot] = int(_need(node, "dominant", "split node"))
            cols["child_e"][slot] = float(_need(node, "child_expected", "split node"))
            cols["left"][slot] = walk(_need(node, "left", "split node"))
            cols["right"][slot] = walk(_need(node, "right", "split node"))
        return slot

    walk(root)
    arrays = {
        "feature": np.array(cols["feature"], np.int64),
        "threshold": np.array(cols["threshold"], np.float64),
        "left": np.array(cols["left"], np.int64),
        "right": np.array(cols["right"], np.int64),
        "pred": np.array(cols["pred"], np.int64),
        "n_node": np.array(cols["n_node"], np.int64),
        "np_cnt": np.array(cols["np_cnt"], np.int64),
        "wp": np.array(cols["wp"], np.float64),
        "wn": np.array(cols["wn"], np.float64),
        "impurity": np.array(cols["impurity"], np.float64),
        "child_e": np.array(cols["child_e"], np.float64),
    }
    return arrays, len(arrays["feature"])


def _decode_tree_hp(obj: dict) -> cart.TreeHyperparams:
    weights = obj.get("class_weights")
    if weights is not None:
        weights = {1: float(weights["+1"]), -1: float(weights["-1"])}
    return cart.TreeHyperparams(
        max_depth=int(_need(obj, "max_depth", "tree hyperparams")),
        min_impurity=float(obj.get("min_impurity", 0.0)),
        min_pool=int(obj.get("min_pool", 2)),
        class_weights=weights,
    )


def _decode_tree(obj: dict, d: int) -> cart.TreeModel:
    n_features = int(_need(obj, "n_features", "tree"))
    if n_features != d:
        raise DimensionError(f"tree expects {n_features} features, schema has {d}")
    nodes, _ = _decode_tree_nodes(_need(obj, "root", "tree"))
    if (nodes["feature"] >= d).any():
        raise DimensionError("tree splits on a feature id outside the schema")
    model = cart.TreeModel(
        schema_digest=obj.get("schema_digest", ""),
        hyperparams=_decode_tree_hp(_need(obj, "hyperparams", "tree")),
        n_features=n_features,
        n_train=int(_need(obj, "n_train", "tree")),
        nodes=nodes,
    )
    if model.max_path_depth > model.hyperparams.max_depth:
        raise BundleFormatError("tree deeper than its own max_depth")
    return model


def _decode_classifier(obj: dict, d: int) -> tuple[str, Classifier]:
    kind = _need(obj, "kind", "classifier")
    if kind == "svm":
        kobj = _need(obj, "kernel", "svm classifier")
        try:
            kernel = svm.KernelSpec(
                _need(kobj, "kind", "kernel"),
                float(_need(kobj, "gamma", "rbf kernel")) if kobj.get("kind") == "rbf" else None,
            )
        except ContractError as exc:
            raise BundleFormatError(str(exc)) from None
        svs = np.array(_need(obj, "support_vectors", "svm classifier"), np.float64)
        if svs.size == 0:
            svs = svs.reshape(0, d)
        coefs = np.array(_need(obj, "dual_coefs", "svm classifier"), np.float64)
        if svs.ndim != 2 or svs.shape[0] != coefs.shape[0]:
            raise DimensionError("support vectors and dual coefficients disagree in count")
        if svs.shape[0] and svs.shape[1] != d:
            raise DimensionError(
                f"support vectors have {svs.shape[1]} features, schema has {d}"
            )
        weight_vector = None
        if "weight_vector" in obj:
            weight_vector = np.array(obj["weight_vector"], np.float64)
            if weight_vector.shape != (d,):
                raise DimensionError(
                    f"weight vector has {weight_vector.shape[0]} entries, schema has {d}"
                )
        if kernel.kind == "linear" and weight_vector is None:
            raise BundleFormatError("linear svm bundle lacks its weight vector")
        if abs(float(coefs.sum())) > 1e-6:
            raise BundleFormatError("dual coefficients must sum to zero (within 1e-6)")
        model = svm.SvmModel(
            kernel=kernel,
            support_vectors=svs,
            dual_coefs=coefs,
            bias=float(_need(obj, "bias", "svm classifier")),
            weight_vector=weight_vector,
            converged=bool(obj.get("converged", True)),
            kkt_violation=float(obj.get("kkt_violation", 0.0)),
            n_iter=int(obj.get("n_iter", 0)),
            schema_digest=obj.get("schema_digest", ""),
        )
        return kind, model
    if kind == "tree":
        return kind, _decode_tree(obj, d)
    if kind == "forest":
        trees = tuple(_decode_tree(t, d) for t in _need(obj, "trees", "forest classifier"))
        if not trees:
            raise BundleFormatError("forest bundle carries no trees")
        hp = forest.ForestHyperparams(
            n_tree=int(_need(obj, "n_tree", "forest classifier")),
            max_features=_need(obj, "max_features", "forest classifier"),
            tree_hp=trees[0].hyperparams,
            seed=int(obj.get("seed", 0)),
            bootstrap=bool(obj.get("bootstrap", True)),
        )
        if hp.n_tree != len(trees):
            raise BundleFormatError("forest n_tree disagrees with the tree list")
        return kind, forest.ForestModel(trees, hp, obj.get("schema_digest", ""))
    raise BundleFormatError(f"unknown classifier kind {kind!r}")


def decode_bundle(data: bytes | str) -> ModelBundle:
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="strict")
    try:
        obj = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise BundleFormatError(f"bundle is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise BundleFormatError("bundle must be a JSON object")
    version = _need(obj, "format_version", "document")
    if version != FORMAT_VERSION:
        raise BundleVersionError(
            f"bundle format version {version!r} not supported (this build reads {FORMAT_VERSION})"
        )
    sobj = _need(obj, "schema", "document")
    try:
        schema = FeatureSchema(
            tuple(
                Feature(int(f["id"]), str(f["name"]), str(f.get("unit", "")))
                for f in _need(sobj, "features", "schema")
            ),
            bool(sobj.get("has_age_gender", False)),
            dict(sobj.get("metadata", {})),
        )
    except (TypeError, KeyError) as exc:
        raise BundleFormatError(f"schema block malformed: {exc}") from None
    cobj = _need(obj, "class_names", "document")
    class_names = {1: str(_need(cobj, "+1", "class_names")), -1: str(_need(cobj, "-1", "class_names"))}
    pobj = _need(obj, "preprocess", "document")
    try:
        preprocess = PreprocessParams(
            np.array(_need(pobj, "impute_means", "preprocess"), np.float64),
            np.array(_need(pobj, "standardize_means", "preprocess"), np.float64),
            np.array(_need(pobj, "standardize_scales", "preprocess"), np.float64),
        )
    except (ValueError, ContractError) as exc:
        raise BundleFormatError(f"preprocess block malformed: {exc}") from None
    kind, classifier = _decode_classifier(_need(obj, "classifier", "document"), schema.d)
    return ModelBundle(
        schema=schema,
        class_names=class_names,
        preprocess=preprocess,
        classifier_kind=kind,
        classifier=classifier,
        metadata=obj.get("metadata", {}),
    )


def save_bundle(bundle: ModelBundle, path: str | Path) -> None:
    Path(path).write_bytes(encode_bundle(bundle))


def load_bundle(path: str | Path) -> ModelBundle:
    return decode_bundle(Path(path).read_bytes())
