import numpy as np
import pytest

from bloodtriage import evaluation as ev
from bloodtriage import svm
from bloodtriage.dataio import fit_preprocess, separated_gaussians
from bloodtriage.errors import ContractError, FitError
from bloodtriage.families import get_family

from conftest import make_dataset


class ConstantPositive:
    """Stub family that predicts +1 regardless of input."""

    name = "constant"
    classifier_kind = "tree"
    continuous_params = ()

    def fit(self, train, params, seed=0):
        return None

    def predict(self, model, x):
        return 1, None

    def coarse_grid(self):
        return ev.GridSpec({"k": (0,)})

    def fold_worker(self, fold, template):
        return self

    def fit_predict(self, params, seed):
        return 1, None


class TestMetrics:
    def test_paper_style_rates(self):
        c = ev.ConfusionCounts(tp=8750, fn=1250, tn=8023, fp=1977)
        m = ev.compute_metrics(c)
        assert m.sensitivity == 0.8750
        assert m.specificity == 0.8023
        assert m.balanced_accuracy == pytest.approx(0.83865, abs=1e-12)
        assert abs(100 * m.balanced_accuracy - 83.87) <= 0.01 + 1e-9

    def test_perfect_classifier(self):
        m = ev.compute_metrics(ev.ConfusionCounts(5, 0, 5, 0))
        assert (m.balanced_accuracy, m.sensitivity, m.specificity, m.precision) == (1, 1, 1, 1)

    def test_direct_ratios(self):
        m = ev.compute_metrics(ev.ConfusionCounts(7, 1, 4, 1))
        assert m.sensitivity == 0.875
        assert m.specificity == 0.8
        assert m.precision == 0.875
        assert m.balanced_accuracy == 0.8375

    def test_balanced_is_exact_mean(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            tp, fn, tn, fp = rng.integers(0, 30, 4)
            if tp + fn == 0 or tn + fp == 0:
                continue
            m = ev.compute_metrics(ev.ConfusionCounts(int(tp), int(fn), int(tn), int(fp)))
            assert m.balanced_accuracy == (m.sensitivity + m.specificity) / 2.0

    def test_absent_class_rejected(self):
        with pytest.raises(ContractError):
            ev.compute_metrics(ev.ConfusionCounts(0, 0, 5, 1))

    def test_precision_undefined_flag(self):
        m = ev.compute_metrics(ev.ConfusionCounts(0, 5, 5, 0))
        assert m.precision is None


class TestClassWeights:
    def test_cohort_sizes(self):
        labels = np.array([1] * 208 + [-1] * 86)
        w = ev.class_weights(labels)
        assert w[1] == pytest.approx(294 / 416)
        assert w[-1] == pytest.approx(294 / 172)
        assert w[1] == pytest.approx(0.7067, abs=1e-4)
        assert w[-1] == pytest.approx(1.7093, abs=1e-4)

    def test_balanced_is_unit(self):
        assert ev.class_weights([1] * 50 + [-1] * 50) == {1: 1.0, -1: 1.0}

    def test_weighted_mass_identity(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n_pos = int(rng.integers(1, 40))
            n_neg = int(rng.integers(1, 40))
            w = ev.class_weights([1] * n_pos + [-1] * n_neg)
            assert w[1] * n_pos == pytest.approx(w[-1] * n_neg)

    def test_missing_class_rejected(self):
        with pytest.raises(ContractError):
            ev.class_weights([1, 1, 1])


class TestLoocv:
    def small_data(self, seed=0, n=10, d=3):
        return separated_gaussians(d=d, n_pos=n // 2, n_neg=n - n // 2, separation=3.0,
                                   missing_rate=0.0, seed=seed)

    def test_fold_count(self):
        data = self.small_data(n=10)
        result = ev.loocv(data, ConstantPositive(), {"k": 0})
        assert len(result.fold_predictions) == 10
        assert result.counts.total == 10

    def test_constant_classifier_balanced_half(self):
        data = self.small_data(n=10)
        result = ev.loocv(data, ConstantPositive(), {"k": 0})
        assert result.metrics.balanced_accuracy == 0.5
        assert result.metrics.sensitivity == 1.0
        assert result.metrics.specificity == 0.0

    def test_separated_gaussians_rbf_high_accuracy(self):
        data = separated_gaussians(d=4, n_pos=20, n_neg=20, separation=3.0,
                                   missing_rate=0.1, seed=3)
        result = ev.loocv(data, get_family("svm-rbf"), {"C": 1.0, "gamma": 0.25})
        assert result.metrics.balanced_accuracy >= 0.95

    def test_single_member_class_rejected(self):
        data = make_dataset([[0.0], [1.0], [2.0]], [1, 1, -1])
        with pytest.raises(FitError):
            ev.loocv(data, ConstantPositive(), {"k": 0})

    def test_fold_preprocessing_excludes_test_row(self):
        data = self.small_data(n=8)
        whole = fit_preprocess(data)
        folds = ev.build_folds(data)
        for fold in folds:
            assert not np.allclose(fold.preprocess.impute_means, whole.impute_means)

    def test_fold_worker_matches_public_fit(self):
        data = self.small_data(n=12, d=3)
        family = get_family("svm-rbf")
        params = {"C": 2.0, "gamma": 0.5}
        folds = ev.build_folds(data, base_seed=5)
        for fold in folds[:4]:
            worker = family.fold_worker(fold, data)
            label_fast, score_fast = worker.fit_predict(params, fold.seed)
            model = family.fit(fold.train_dataset(data), params, fold.seed)
            label_ref, score_ref = family.predict(model, fold.x_test)
            assert label_fast == label_ref
            assert score_fast == pytest.approx(score_ref, abs=1e-9)

    def test_forest_fold_worker_matches_public_fit(self):
        data = self.small_data(n=12, d=3)
        family = get_family("forest")
        params = {"max_depth": 3, "n_tree": 7, "max_features": "log2"}
        folds = ev.build_folds(data, base_seed=5)
        for fold in folds[:4]:
            worker = family.fold_worker(fold, data)
            label_fast, _ = worker.fit_predict(params, fold.seed)
            model = family.fit(fold.train_dataset(data), params, fold.seed)
            label_ref, _ = family.predict(model, fold.x_test)
            assert label_fast == label_ref

    def test_parallel_equals_serial(self):
        data = self.small_data(n=12)
        family = get_family("forest")
        params = {"max_depth": 3, "n_tree": 10, "max_features": "log2"}
        serial = ev.loocv(data, family, params, base_seed=9, n_jobs=1)
        parallel = ev.loocv(data, family, params, base_seed=9, n_jobs=4)
        assert serial.metrics == parallel.metrics
        assert serial.fold_predictions == parallel.fold_predictions


class TestGridSearch:
    def tiny(self, seed=0):
        return separated_gaussians(d=2, n_pos=5, n_neg=5, separation=4.0,
                                   missing_rate=0.0, seed=seed)

    def test_coarse_candidates_are_powers_of_two(self):
        cands = ev.coarse_candidates()
        assert len(cands) == 21
        assert cands[0] == 2.0**-10
        assert cands[-1] == 2.0**10
        assert all(b / a == 2.0 for a, b in zip(cands, cands[1:]))

    def test_fine_candidates_bracket(self):
        vals = ev.fine_candidates(32.0)
        assert len(vals) == 20
        assert vals[0] == 16.0
        assert vals[-1] == 64.0

    def test_linear_svm_counts(self):
        result = ev.grid_search(self.tiny(), get_family("svm-linear"), n_jobs=2)
        coarse = [t for t in result.trace if t.round == "coarse"]
        fine = [t for t in result.trace if t.round == "fine"]
        assert len(coarse) == 21
        assert len(fine) == 20

    def test_tree_grid_counts_and_no_fine_round(self):
        result = ev.grid_search(self.tiny(), get_family("tree"))
        assert len(result.trace) == 10
        assert {t.round for t in result.trace} == {"coarse"}
        assert [t.params["max_depth"] for t in result.trace] == list(range(1, 11))

    def test_forest_grid_cardinality(self):
        result = ev.grid_search(self.tiny(), get_family("forest"), n_jobs=2)
        assert len(result.trace) == 120
        combos = {(t.params["n_tree"], t.params["max_features"], t.params["max_depth"])
                  for t in result.trace}
        assert len(combos) == 120

    def test_ties_prefer_smaller_c(self):
        # fully separated data: many C values reach balanced accuracy 1
        result = ev.grid_search(self.tiny(), get_family("svm-linear"))
        best_acc = result.best_result.metrics.balanced_accuracy
        tied = [t.params["C"] for t in result.trace if t.balanced_accuracy == best_acc]
        assert result.best_params["C"] == min(tied)

    def test_trace_replay_reproduces_metrics(self):
        data = self.tiny(seed=4)
        family = get_family("forest")
        spec = ev.GridSpec({"max_depth": (2, 3), "n_tree": (10,), "max_features": ("log2",)})
        result = ev.grid_search(data, family, coarse=spec, base_seed=11)
        for record in result.trace:
            replay = ev.loocv(data, family, record.params, base_seed=record.base_seed)
            assert replay.metrics.balanced_accuracy == record.balanced_accuracy
            assert replay.metrics.sensitivity == record.sensitivity

    def test_trace_jsonl_round_trip(self, tmp_path):
        result = ev.grid_search(self.tiny(), get_family("tree"))
        path = tmp_path / "trace.jsonl"
        ev.write_trace_jsonl(result.trace, path)
        back = ev.read_trace_jsonl(path)
        assert len(back) == len(result.trace)
        assert back[0]["family"] == "tree"
        assert {r["params"]["max_depth"] for r in back} == set(range(1, 11))


class TestRefit:
    def test_two_point_toy_matches_analytic(self):
        data = make_dataset([[-1.0], [1.0], [-1.1], [1.1]], [-1, 1, -1, 1])
        bundle = ev.refit(data, get_family("svm-linear"), {"C": 1000.0}, timestamp="")
        x = np.array([2.0])
        from bloodtriage.modelstore import predict_bundle

        label, score = predict_bundle(bundle, x)
        assert label == 1
        # preprocessing standardizes, so compare against the directly
        # fitted model on the preprocessed scale
        model = bundle.classifier
        assert isinstance(model, svm.SvmModel)
        assert model.converged

    def test_predict_on_training_row_defined(self):
        data = separated_gaussians(d=3, n_pos=6, n_neg=6, separation=3.0, missing_rate=0.2, seed=8)
        bundle = ev.refit(data, get_family("tree"), {"max_depth": 3}, timestamp="")
        from bloodtriage.modelstore import predict_bundle

        label, score = predict_bundle(bundle, data.values[0])
        assert label in (1, -1)

    def test_seeded_forest_refit_deterministic(self):
        from bloodtriage.modelstore import encode_bundle

        data = separated_gaussians(d=3, n_pos=8, n_neg=8, separation=3.0, missing_rate=0.0, seed=2)
        params = {"max_depth": 3, "n_tree": 5, "max_features": "sqrt"}
        a = ev.refit(data, get_family("forest"), params, seed=42, timestamp="")
        b = ev.refit(data, get_family("forest"), params, seed=42, timestamp="")
        assert encode_bundle(a) == encode_bundle(b)
