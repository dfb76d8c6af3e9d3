import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from malpipe import dataio, kernels, svm
from malpipe.errors import ConfigError, FitError, NumericError, ShapeError
from oracles import kkt_violation, svm_dual_optimum


def test_resolve_gamma():
    x = np.random.default_rng(0).normal(size=(50, 14))
    x = (x - x.mean()) / x.std()
    assert svm.resolve_gamma(svm.KernelSpec("rbf", "scale"), x) == pytest.approx(1 / 14, rel=1e-12)
    assert svm.resolve_gamma(svm.KernelSpec("rbf", "auto"), x) == 1 / 14
    assert svm.resolve_gamma(svm.KernelSpec("rbf", 0.5), x) == 0.5
    with pytest.raises(NumericError, match="explicit gamma"):
        svm.resolve_gamma(svm.KernelSpec(), np.ones((3, 2)))


def test_kernel_spec_validation():
    with pytest.raises(ConfigError):
        svm.KernelSpec("poly")
    with pytest.raises(ConfigError):
        svm.KernelSpec("rbf", 0.0)
    with pytest.raises(ConfigError):
        svm.KernelSpec("rbf", "sometimes")


def test_kernel_eval_examples():
    rbf = svm.KernelSpec("rbf", 0.5)
    assert svm.kernel_eval(rbf, 0.5, [1.0, 2.0], [1.0, 2.0]) == 1.0
    assert svm.kernel_eval(rbf, 0.5, [0.0, 0.0], [1.0, 1.0]) == pytest.approx(math.exp(-1), abs=1e-15)
    assert svm.kernel_eval(svm.KernelSpec("linear"), None, [1.0, 2.0], [3.0, 4.0]) == 11.0
    with pytest.raises(ShapeError):
        svm.kernel_eval(rbf, 0.5, [1.0], [1.0, 2.0])


@given(st.integers(2, 25), st.integers(1, 5), st.floats(1e-3, 5.0), st.integers(0, 2**32 - 1))
def test_rbf_gram_is_psd(n, d, gamma, seed):
    x = np.random.default_rng(seed).normal(size=(n, d))
    g = svm.gram(svm.KernelSpec("rbf", gamma), gamma, x, x)
    assert np.array_equal(g, g.T)
    assert np.linalg.eigvalsh(g).min() >= -1e-8


def test_analytic_one_dimensional_case():
    m = svm.smo_fit(np.array([[-1.0], [1.0]]), np.array([-1.0, 1.0]), 10.0, svm.KernelSpec("linear"))
    assert np.allclose(m.alpha, [0.5, 0.5], atol=1e-12)
    assert m.b == 0.0
    assert m.decision(np.array([0.5])) == pytest.approx(0.5, abs=1e-12)


def test_interleaved_duplicates_hit_the_box():
    x = np.array([[0.0], [0.0], [1.0], [1.0]])
    y = np.array([1.0, -1.0, 1.0, -1.0])
    m = svm.smo_fit(x, y, 0.1, svm.KernelSpec("linear"))
    assert np.allclose(m.alpha, 0.1)


@pytest.mark.parametrize("kind", ["linear", "rbf"])
@pytest.mark.parametrize("c", [0.1, 1.0, 10.0])
def test_small_problems_match_qp_oracle(kind, c):
    r = np.random.default_rng([len(kind), int(c * 10)])
    for trial in range(12):
        n = int(r.integers(2, 9))
        x = r.normal(size=(n, 2))
        y = r.choice([-1.0, 1.0], n)
        y[0], y[1] = 1.0, -1.0
        spec = svm.KernelSpec(kind, "auto")
        m = svm.smo_fit(x, y, c, spec, seed=trial)
        k = svm.gram(spec, m.gamma, x, x)
        gap = svm_dual_optimum(k, y, c) - svm.dual_objective(m.alpha, y, k)
        assert gap <= 1e-6
        assert kkt_violation(m.alpha, y, m.decision(x), np.full(n, c), 1e-3) == 0.0
        svm.check_dual(m.alpha, y, np.full(n, c))


def test_same_seed_same_alphas():
    r = np.random.default_rng(5)
    x = r.normal(size=(30, 3))
    y = np.where(x[:, 0] > 0, 1.0, -1.0)
    a = svm.smo_fit(x, y, 1.0, seed=4).alpha
    b = svm.smo_fit(x, y, 1.0, seed=4).alpha
    assert np.array_equal(a, b)


def test_support_vector_margin_is_one():
    r = np.random.default_rng(6)
    x = np.r_[r.normal(size=(20, 2)) + 4, r.normal(size=(20, 2)) - 4]
    y = np.r_[np.ones(20), -np.ones(20)]
    m = svm.smo_fit(x, y, 100.0, svm.KernelSpec("linear"))
    free = (m.alpha > 1e-8) & (m.alpha < 100.0)
    assert free.any()
    assert np.allclose(np.abs(m.decision(x[free])), 1.0, atol=1e-3)


def test_empty_support_set_margin_is_bias():
    m = svm.BinarySvm(np.zeros((0, 2)), np.zeros(0), 0.25, 1.0, svm.KernelSpec())
    assert np.array_equal(m.decision(np.ones((3, 2))), [0.25] * 3)


def test_single_class_is_fit_error():
    with pytest.raises(FitError):
        svm.smo_fit(np.ones((3, 1)), np.ones(3))


def test_gamma_continuity():
    r = np.random.default_rng(7)
    x = r.uniform(-1, 1, size=(20, 3))
    y = np.where(x[:, 0] + x[:, 1] > 0, 1.0, -1.0)
    m = svm.smo_fit(x, y, 1.0, svm.KernelSpec("rbf", 0.7))
    shifted = svm.BinarySvm(m.support_vectors, m.dual_coef, m.b, m.gamma + 1e-9, m.kernel)
    u = r.uniform(-1, 1, size=(50, 3))
    assert np.max(np.abs(m.decision(u) - shifted.decision(u))) < 1e-6


def _blobs(counts, sep, seed, dims=4):
    spec = dataio.SyntheticSpec(counts, informative=dims, noise=0, categorical=0, missing_rate=0.0,
                                separation=sep, seed=seed)
    _, x, y = dataio.make_synthetic(spec)
    return x, y


def test_three_blobs_accuracy():
    x, y = _blobs([80, 80, 80], 5.0, 1)
    tr, te = dataio.stratified_split(y, 0.3, 0)
    oracle = dataio.nearest_centroid_accuracy(x[tr], y[tr], x[te], y[te])
    model = svm.fit_multiclass(x[tr], y[tr], 3, svm.SvmConfig())
    labels, scores = model.predict(x[te])
    assert oracle >= 0.98
    assert np.mean(labels == y[te]) >= 0.97
    for machine in model.machines:
        assert machine.alpha is not None


def test_two_class_machines_are_mirrors():
    x, y = _blobs([60, 60], 4.0, 2)
    model = svm.fit_multiclass(x, y, 2)
    _, scores = model.predict(x + 0.1)
    assert np.mean(np.sign(scores[:, 0]) == -np.sign(scores[:, 1])) >= 0.99


def test_balanced_flag_with_equal_counts():
    x, y = _blobs([30, 30, 30], 3.0, 3)
    a = svm.fit_multiclass(x, y, 3, svm.SvmConfig(balanced=True))
    b = svm.fit_multiclass(x, y, 3, svm.SvmConfig(balanced=False))
    for ma, mb in zip(a.machines, b.machines):
        assert np.array_equal(ma.alpha, mb.alpha) and ma.b == mb.b


def test_dual_feasibility_on_every_machine():
    x, y = _blobs([50, 10, 25], 2.0, 4)
    model = svm.fit_multiclass(x, y, 3, svm.SvmConfig(c=3.0))
    w = dataio.class_weights(y, 3)
    for cls, m in enumerate(model.machines):
        target = np.where(y == cls, 1.0, -1.0)
        svm.check_dual(m.alpha, target, 3.0 * w[y])


def test_predict_ties_and_errors():
    x, y = _blobs([10, 10], 4.0, 5)
    model = svm.fit_multiclass(x, y, 2)
    for m in model.machines:
        m.support_vectors = m.support_vectors[:0]
        m.dual_coef = m.dual_coef[:0]
        m.b = 0.5
    labels, _ = model.predict(x)
    assert np.all(labels == 0)
    with pytest.raises(ShapeError):
        model.predict(np.ones((1, 7)))


def test_fit_multiclass_errors():
    with pytest.raises(FitError):
        svm.fit_multiclass(np.ones((4, 2)), np.array([0, 0, 2, 2]), 3)
    with pytest.raises(ConfigError):
        svm.SvmConfig(c=0.0)


def test_polish_reaches_tight_stationarity():
    r = np.random.default_rng(8)
    x = r.normal(size=(60, 2))
    y = np.where(x[:, 0] * x[:, 1] > 0, 1.0, -1.0)
    k = kernels.rbf_gram_numpy(x, x, 1.0)
    cbox = np.full(60, 5.0)
    alpha, _, _, _ = kernels.smo_numpy(k, y, cbox, 1e-3, 50, 0, kernels.SMO_POLISH_EPS, 100_000)
    assert svm_dual_optimum(k, y, 5.0) - svm.dual_objective(alpha, y, k) <= 1e-6
