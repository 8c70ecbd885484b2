import json

import numpy as np
import pytest

from bloodtriage import modelstore as ms
from bloodtriage.dataio import separated_gaussians
from bloodtriage.errors import BundleFormatError, BundleVersionError, DimensionError
from bloodtriage.evaluation import refit
from bloodtriage.families import get_family

from conftest import make_dataset


def toy_svm_bundle():
    data = make_dataset([[-1.0], [1.0]], [-1, 1])
    # identity preprocessing keeps the analytic geometry intact
    return refit(
        data,
        IdentityLinearSvm(),
        {"C": 1000.0},
        timestamp="2020-05-01T00:00:00+00:00",
        task="toy",
    )


class IdentityLinearSvm:
    """Linear-SVM family variant that sees the raw values (the two-point
    toy dataset already has zero mean)."""

    name = "svm-linear"
    classifier_kind = "svm"
    continuous_params = ("C",)

    def fit(self, train, params, seed=0):
        from bloodtriage import svm

        hp = svm.SvmHyperparams(C=float(params["C"]), kernel=svm.KernelSpec("linear"))
        return svm.fit_svm(train, hp)

    def predict(self, model, x):
        from bloodtriage import svm

        return svm.predict_svm(model, x)


def random_bundle(seed: int) -> ms.ModelBundle:
    rng = np.random.default_rng(seed)
    kind = ("svm-linear", "svm-rbf", "tree", "forest")[seed % 4]
    d = int(rng.integers(2, 6))
    data = separated_gaussians(
        d=d,
        n_pos=int(rng.integers(5, 12)),
        n_neg=int(rng.integers(5, 12)),
        separation=float(rng.uniform(1.0, 4.0)),
        missing_rate=float(rng.uniform(0.0, 0.2)),
        seed=seed,
    )
    params = {
        "svm-linear": {"C": float(rng.choice([0.5, 1.0, 45.0]))},
        "svm-rbf": {"C": float(rng.choice([1.0, 45.0])), "gamma": float(rng.choice([0.0047, 0.1, 1.0]))},
        "tree": {"max_depth": int(rng.integers(1, 6))},
        "forest": {
            "max_depth": int(rng.integers(1, 5)),
            "n_tree": int(rng.choice([1, 3, 10])),
            "max_features": str(rng.choice(["all", "sqrt", "log2"])),
        },
    }[kind]
    return refit(data, get_family(kind), params, seed=seed, task=f"rt-{seed}", timestamp="")


class TestCanonicalForm:
    def test_encode_decode_encode_idempotent(self):
        bundle = toy_svm_bundle()
        blob = ms.encode_bundle(bundle)
        again = ms.encode_bundle(ms.decode_bundle(blob))
        assert blob == again

    def test_toy_bundle_carries_analytic_values(self):
        blob = ms.encode_bundle(toy_svm_bundle())
        obj = json.loads(blob)
        coefs = sorted(obj["classifier"]["dual_coefs"])
        assert coefs == [-0.5, 0.5]
        assert obj["classifier"]["bias"] == 0.0
        assert obj["format_version"] == 1

    def test_rbf_bundle_carries_gamma(self):
        data = separated_gaussians(d=3, n_pos=6, n_neg=6, missing_rate=0.0, seed=1)
        bundle = refit(data, get_family("svm-rbf"), {"C": 45.0, "gamma": 0.0047}, timestamp="")
        obj = json.loads(ms.encode_bundle(bundle))
        assert obj["classifier"]["kernel"] == {"gamma": 0.0047, "kind": "rbf"}

    def test_sorted_keys(self):
        blob = ms.encode_bundle(toy_svm_bundle()).decode()
        obj = json.loads(blob)
        assert list(obj) == sorted(obj)


class TestDecodeErrors:
    def test_truncated_json(self):
        blob = ms.encode_bundle(toy_svm_bundle())
        with pytest.raises(BundleFormatError):
            ms.decode_bundle(blob[: len(blob) // 2])

    def test_version_mismatch(self):
        obj = json.loads(ms.encode_bundle(toy_svm_bundle()))
        obj["format_version"] = 99
        with pytest.raises(BundleVersionError):
            ms.decode_bundle(json.dumps(obj))

    def test_dimension_mismatch(self):
        obj = json.loads(ms.encode_bundle(toy_svm_bundle()))
        obj["classifier"]["weight_vector"] = [1.0, 2.0]  # schema says 1 feature
        with pytest.raises(DimensionError):
            ms.decode_bundle(json.dumps(obj))

    def test_unknown_classifier_tag(self):
        obj = json.loads(ms.encode_bundle(toy_svm_bundle()))
        obj["classifier"]["kind"] = "perceptron"
        with pytest.raises(BundleFormatError):
            ms.decode_bundle(json.dumps(obj))

    def test_missing_field(self):
        obj = json.loads(ms.encode_bundle(toy_svm_bundle()))
        del obj["classifier"]["bias"]
        with pytest.raises(BundleFormatError):
            ms.decode_bundle(json.dumps(obj))


class TestRoundTripPredictions:
    @pytest.mark.parametrize("seed", range(8))
    def test_bit_identical_predictions(self, seed):
        bundle = random_bundle(seed)
        blob = ms.encode_bundle(bundle)
        back = ms.decode_bundle(blob)
        assert ms.encode_bundle(back) == blob
        rng = np.random.default_rng(1000 + seed)
        for _ in range(10):
            x = rng.normal(size=bundle.d)
            label_a, score_a = ms.predict_bundle(bundle, x)
            label_b, score_b = ms.predict_bundle(back, x)
            assert label_a == label_b
            if score_a is None:
                assert score_b is None
            else:
                assert score_a == score_b  # zero-ulp agreement

    def test_predict_with_missing_uses_impute_means(self):
        bundle = random_bundle(1)
        all_missing = np.full(bundle.d, np.nan)
        label, score = ms.predict_bundle(bundle, all_missing)
        imputed = bundle.preprocess.impute_means
        label2, score2 = ms.predict_bundle(bundle, imputed)
        assert label == label2
        if score is not None:
            assert score == score2
