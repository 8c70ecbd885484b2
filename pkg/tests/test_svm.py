import math

import numpy as np
import pytest

from bloodtriage import svm
from bloodtriage.dataio import generic_schema
from bloodtriage.errors import ContractError, DimensionError, UnsupportedOperationError

import oracles
from conftest import make_dataset


def two_point_toy():
    return make_dataset([[-1.0], [1.0]], [-1, 1])


def fit_toy(record_trace=False):
    hp = svm.SvmHyperparams(C=1000.0, kernel=svm.KernelSpec("linear"))
    return svm.fit_svm(two_point_toy(), hp, record_trace=record_trace), hp


def random_instance(rng, n_max=6, d_max=3):
    n = int(rng.integers(3, n_max + 1))
    d = int(rng.integers(1, d_max + 1))
    X = rng.normal(size=(n, d))
    labels = rng.choice([-1, 1], size=n)
    if abs(labels.sum()) == n:
        labels[0] = -labels[0]
    if rng.random() < 0.5:
        kernel = svm.KernelSpec("linear")
    else:
        kernel = svm.KernelSpec("rbf", float(rng.choice([0.3, 1.0])))
    C = float(rng.choice([0.5, 1.0, 10.0]))
    return make_dataset(X, labels), kernel, C


class TestKernelEval:
    def test_rbf_identical_points(self):
        k = svm.KernelSpec("rbf", 3.7)
        assert svm.kernel_eval(k, np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 1.0

    def test_rbf_known_value(self):
        k = svm.KernelSpec("rbf", 0.5)
        got = svm.kernel_eval(k, np.array([0.0, 0.0]), np.array([1.0, 1.0]))
        assert got == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_linear_dot(self):
        k = svm.KernelSpec("linear")
        assert svm.kernel_eval(k, np.array([1.0, 2.0]), np.array([3.0, 4.0])) == 11.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            svm.kernel_eval(svm.KernelSpec("linear"), np.zeros(2), np.zeros(3))

    def test_kernel_spec_validation(self):
        with pytest.raises(ContractError):
            svm.KernelSpec("rbf")
        with pytest.raises(ContractError):
            svm.KernelSpec("rbf", -1.0)
        with pytest.raises(ContractError):
            svm.KernelSpec("linear", 0.5)


class TestTwoPointToy:
    def test_analytic_solution(self):
        model, _ = fit_toy()
        assert model.weight_vector[0] == pytest.approx(1.0, abs=1e-6)
        assert model.bias == pytest.approx(0.0, abs=1e-6)
        np.testing.assert_allclose(np.abs(model.dual_coefs), [0.5, 0.5], atol=1e-6)
        margin = 2.0 / np.linalg.norm(model.weight_vector)
        assert margin == pytest.approx(2.0, abs=1e-6)

    def test_boundary_score_zero_goes_positive(self):
        model, _ = fit_toy()
        label, score = svm.predict_svm(model, np.array([0.0]))
        assert score == pytest.approx(0.0, abs=1e-9)
        assert label == 1

    def test_score_at_two(self):
        model, _ = fit_toy()
        label, score = svm.predict_svm(model, np.array([2.0]))
        assert label == 1
        assert score == pytest.approx(2.0, abs=1e-6)

    def test_dual_objective_half(self):
        model, _ = fit_toy()
        assert svm.dual_objective_of_model(model) == pytest.approx(0.5, abs=1e-9)

    def test_zero_alphas_objective_zero(self):
        ds = two_point_toy()
        K = svm.gram_matrix(svm.KernelSpec("linear"), ds.values)
        assert svm.dual_objective(np.zeros(2), ds.labels, K) == 0.0


class TestXor:
    def test_linear_kernel_cannot_separate(self, xor_2d):
        hp = svm.SvmHyperparams(C=10.0, kernel=svm.KernelSpec("linear"))
        model = svm.fit_svm(xor_2d, hp)
        preds = np.array([svm.predict_svm(model, x)[0] for x in xor_2d.values])
        sens = (preds[xor_2d.labels == 1] == 1).mean()
        spec = (preds[xor_2d.labels == -1] == -1).mean()
        assert (sens + spec) / 2 == pytest.approx(0.5)

    def test_rbf_kernel_separates(self, xor_2d):
        hp = svm.SvmHyperparams(C=1000.0, kernel=svm.KernelSpec("rbf", 1.0))
        model = svm.fit_svm(xor_2d, hp)
        for x, y in zip(xor_2d.values, xor_2d.labels):
            assert svm.predict_svm(model, x)[0] == y

    def test_rbf_xor_matches_exact_qp(self, xor_2d):
        hp = svm.SvmHyperparams(
            C=1000.0, kernel=svm.KernelSpec("rbf", 1.0), class_weights={1: 1.0, -1: 1.0}
        )
        model = svm.fit_svm(xor_2d, hp)
        K = oracles.kernel_matrix(xor_2d.values, "rbf", 1.0)
        exact = oracles.exact_dual_maximum(
            xor_2d.labels.astype(float), K, np.full(4, 1000.0)
        )
        assert svm.dual_objective_of_model(model) == pytest.approx(exact, abs=1e-4)


class TestSolverProperties:
    def test_kkt_conditions_at_convergence(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            ds, kernel, C = random_instance(rng, n_max=12)
            hp = svm.SvmHyperparams(C=C, kernel=kernel)
            model = svm.fit_svm(ds, hp)
            assert model.converged
            assert svm.kkt_violation_report(model, ds, hp) < hp.tol

    def test_equality_constraint_holds(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            ds, kernel, C = random_instance(rng, n_max=10)
            model = svm.fit_svm(ds, svm.SvmHyperparams(C=C, kernel=kernel))
            assert abs(model.dual_coefs.sum()) < 1e-6

    def test_objective_trace_non_decreasing(self):
        rng = np.random.default_rng(29)
        ds = make_dataset(rng.normal(size=(25, 3)), rng.choice([-1, 1], 25))
        hp = svm.SvmHyperparams(C=5.0, kernel=svm.KernelSpec("rbf", 0.7))
        model = svm.fit_svm(ds, hp, record_trace=True)
        trace = model.objective_trace
        assert trace is not None and trace.size > 0
        assert (np.diff(trace) >= -1e-9).all()
        assert trace[-1] == pytest.approx(svm.dual_objective_of_model(model), abs=1e-6)

    def test_dual_objective_within_tolerance_of_exact_qp(self):
        rng = np.random.default_rng(31)
        for _ in range(25):
            ds, kernel, C = random_instance(rng)
            hp = svm.SvmHyperparams(C=C, kernel=kernel, class_weights={1: 1.0, -1: 1.0})
            model = svm.fit_svm(ds, hp)
            K = (
                oracles.kernel_matrix(ds.values, "linear")
                if kernel.kind == "linear"
                else oracles.kernel_matrix(ds.values, "rbf", kernel.gamma)
            )
            exact = oracles.exact_dual_maximum(
                ds.labels.astype(float), K, np.full(ds.n, C)
            )
            got = svm.dual_objective_of_model(model)
            assert got == pytest.approx(exact, abs=1e-4)
            assert got >= oracles.grid_dual_maximum(
                ds.labels.astype(float), K, np.full(ds.n, C)
            ) - 1e-4

    def test_weighted_boxes_respected(self):
        rng = np.random.default_rng(37)
        ds = make_dataset(rng.normal(size=(12, 2)), [1] * 8 + [-1] * 4)
        hp = svm.SvmHyperparams(C=2.0, kernel=svm.KernelSpec("linear"))
        model = svm.fit_svm(ds, hp)
        ceilings = svm.box_ceilings(ds.labels, hp)
        alphas = np.abs(model.dual_coefs)
        limits = ceilings[model.sv_indices]
        assert (alphas <= limits + 1e-9).all()
        # the balanced rule: C_i = C * N / (2 N_class)
        assert ceilings[0] == pytest.approx(2.0 * 12 / (2 * 8))
        assert ceilings[-1] == pytest.approx(2.0 * 12 / (2 * 4))

    def test_margin_is_maximal_for_separable_data(self):
        rng = np.random.default_rng(41)
        X = np.vstack([rng.normal((-2, -2), 0.5, (15, 2)), rng.normal((2, 2), 0.5, (15, 2))])
        labels = np.array([-1] * 15 + [1] * 15)
        ds = make_dataset(X, labels)
        model = svm.fit_svm(ds, svm.SvmHyperparams(C=1e6, kernel=svm.KernelSpec("linear")))
        margins = ds.labels * svm.decision_function(model, ds.values)
        width = 2.0 * margins.min() / np.linalg.norm(model.weight_vector)
        best_random = oracles.random_separator_margin(X, labels, rng, trials=1000)
        assert width >= best_random - 1e-9

    def test_duplicating_samples_keeps_decision_function(self):
        rng = np.random.default_rng(43)
        X = np.vstack([rng.normal(-2, 1, (10, 2)), rng.normal(2, 1, (10, 2))])
        labels = np.array([-1] * 10 + [1] * 10)
        ds = make_dataset(X, labels)
        hp = svm.SvmHyperparams(
            C=50.0, kernel=svm.KernelSpec("linear"), class_weights={1: 1.0, -1: 1.0}
        )
        model = svm.fit_svm(ds, hp)
        ceilings = svm.box_ceilings(ds.labels, hp)
        assert (np.abs(model.dual_coefs) < ceilings[model.sv_indices] - 1e-6).all(), (
            "test construction needs no bounded support vectors"
        )
        doubled = make_dataset(np.vstack([X, X]), np.concatenate([labels, labels]))
        model2 = svm.fit_svm(doubled, hp)
        probe = rng.normal(size=(40, 2))
        np.testing.assert_allclose(
            svm.decision_function(model, probe),
            svm.decision_function(model2, probe),
            atol=1e-4,
        )

    def test_non_convergence_flagged(self):
        rng = np.random.default_rng(47)
        ds = make_dataset(rng.normal(size=(30, 2)), rng.choice([-1, 1], 30))
        hp = svm.SvmHyperparams(C=10.0, kernel=svm.KernelSpec("rbf", 1.0), max_passes=3)
        model = svm.fit_svm(ds, hp)
        assert not model.converged
        assert model.kkt_violation > 0
        label, score = svm.predict_svm(model, ds.values[0])
        assert label in (1, -1)


class TestPredict:
    def test_linear_representations_agree(self):
        rng = np.random.default_rng(53)
        ds = make_dataset(rng.normal(size=(20, 3)), rng.choice([-1, 1], 20))
        model = svm.fit_svm(ds, svm.SvmHyperparams(C=3.0, kernel=svm.KernelSpec("linear")))
        for _ in range(20):
            x = rng.normal(size=3)
            via_w = float(model.weight_vector @ x + model.bias)
            via_dual = float(
                sum(
                    c * svm.kernel_eval(model.kernel, sv, x)
                    for c, sv in zip(model.dual_coefs, model.support_vectors)
                )
                + model.bias
            )
            assert via_w == pytest.approx(via_dual, abs=1e-9)

    def test_dimension_mismatch(self):
        model, _ = fit_toy()
        with pytest.raises(DimensionError):
            svm.predict_svm(model, np.array([1.0, 2.0]))


class TestImportance:
    def _linear_model(self, w):
        w = np.asarray(w, dtype=np.float64)
        return svm.SvmModel(
            kernel=svm.KernelSpec("linear"),
            support_vectors=np.zeros((1, w.size)),
            dual_coefs=np.zeros(1),
            bias=0.0,
            weight_vector=w,
        )

    def test_single_nonzero(self):
        np.testing.assert_array_equal(
            svm.svm_importance(self._linear_model([2.0, 0.0])), [1.0, 0.0]
        )

    def test_symmetric(self):
        np.testing.assert_array_equal(
            svm.svm_importance(self._linear_model([1.0, -1.0])), [0.5, 0.5]
        )

    def test_rbf_unsupported(self):
        model = svm.SvmModel(
            kernel=svm.KernelSpec("rbf", 1.0),
            support_vectors=np.zeros((1, 2)),
            dual_coefs=np.zeros(1),
            bias=0.0,
        )
        with pytest.raises(UnsupportedOperationError):
            svm.svm_importance(model)

    def test_fitted_model_sums_to_one(self):
        rng = np.random.default_rng(59)
        ds = make_dataset(rng.normal(size=(24, 5)), rng.choice([-1, 1], 24))
        model = svm.fit_svm(ds, svm.SvmHyperparams(C=1.0, kernel=svm.KernelSpec("linear")))
        imp = svm.svm_importance(model)
        assert (imp >= 0).all()
        assert imp.sum() == pytest.approx(1.0, abs=1e-9)
