import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kronlearn.losses import (L1SVM_MESSAGE, TRAINABLE_LOSSES, l1svm_value_subgradient, loss_gradient,
                              loss_hessian, loss_value)

H_FD = 1e-5


def _labels(kind, rng, n):
    if kind in ("l2svm", "logistic"):
        return rng.choice([-1.0, 1.0], size=n)
    return rng.standard_normal(n)


def _fd_gradient(kind, p, y):
    g = np.empty_like(p)
    for i in range(len(p)):
        e = np.zeros_like(p)
        e[i] = H_FD
        g[i] = (loss_value(kind, p + e, y) - loss_value(kind, p - e, y)) / (2 * H_FD)
    return g


def _rel(x, ref):
    return np.linalg.norm(x - ref) / max(1.0, np.linalg.norm(ref))


def test_value_examples():
    assert loss_value("ridge", np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert loss_value("l2svm", np.array([0.0]), np.array([1.0])) == 0.5
    assert loss_value("logistic", np.array([0.0]), np.array([1.0])) == pytest.approx(math.log(2), rel=1e-15)
    y = np.array([0.5, -1.0, 2.0])
    assert loss_value("rankrls", y + 3.0, y) == pytest.approx(0.0, abs=1e-12)


def test_gradient_examples():
    assert loss_gradient("ridge", np.array([2.0]), np.array([1.0])).tolist() == [1.0]
    assert loss_gradient("l2svm", np.array([2.0]), np.array([1.0])).tolist() == [0.0]
    assert loss_gradient("logistic", np.array([0.0]), np.array([1.0])).tolist() == [-0.5]
    y = np.array([0.5, -1.0, 2.0])
    assert loss_gradient("rankrls", y, y).tolist() == [0.0, 0.0, 0.0]


def test_hessian_examples(rng):
    v = rng.standard_normal(5)
    p = rng.standard_normal(5)
    np.testing.assert_array_equal(loss_hessian("ridge", p, rng.standard_normal(5)).apply(v), v)
    np.testing.assert_allclose(loss_hessian("rankrls", p, rng.standard_normal(5)).apply(np.ones(5)), 0.0, atol=1e-15)
    h = loss_hessian("logistic", np.zeros(4), np.array([1.0, -1.0, 1.0, 1.0]))
    np.testing.assert_array_equal(h.diagonal, 0.25)


def test_rankrls_matches_pairwise_definition(rng):
    p, y = rng.standard_normal((2, 30))
    e = y - p
    pairwise = 0.25 * sum((e[i] - e[j]) ** 2 for i in range(30) for j in range(30))
    assert loss_value("rankrls", p, y) == pytest.approx(pairwise, rel=1e-12)
    # gradient per the pairwise form: sum_j (y_j - p_j) + n (p_i - y_i)
    expected = np.array([e.sum() + 30 * (p[i] - y[i]) for i in range(30)])
    np.testing.assert_allclose(loss_gradient("rankrls", p, y), expected, rtol=1e-12, atol=1e-12)
    H = loss_hessian("rankrls", p, y).to_dense()
    assert np.all(np.diag(H) == 29.0) and H[0, 1] == -1.0


def test_l2svm_margin_boundary_is_inactive():
    p, y = np.array([1.0, -1.0, 0.5]), np.array([1.0, -1.0, 1.0])
    np.testing.assert_array_equal(loss_gradient("l2svm", p, y), [0.0, 0.0, -0.5])
    np.testing.assert_array_equal(loss_hessian("l2svm", p, y).diagonal, [0.0, 0.0, 1.0])
    assert loss_value("l2svm", p, y) == 0.125


def test_logistic_is_stable_for_large_margins():
    p = np.array([800.0, -800.0, 50.0])
    y = np.array([-1.0, 1.0, 1.0])
    assert loss_value("logistic", p, y) == pytest.approx(1600.0 + math.log1p(math.exp(-50.0)), rel=1e-12)
    g = loss_gradient("logistic", p, y)
    assert np.all(np.isfinite(g)) and g[0] == 1.0 and g[1] == -1.0
    assert np.all(np.isfinite(loss_hessian("logistic", p, y).diagonal))


@pytest.mark.parametrize("kind", TRAINABLE_LOSSES)
def test_gradient_matches_finite_differences(kind):
    rng = np.random.default_rng(7)
    for _ in range(20):
        y = _labels(kind, rng, 12)
        p = rng.standard_normal(12) * 2
        if kind == "l2svm":
            # keep every point at least 0.1 away from the margin
            p = np.where(np.abs(p * y - 1) > 0.1, p, p + 0.5 * y)
        assert _rel(loss_gradient(kind, p, y), _fd_gradient(kind, p, y)) <= 1e-4


@pytest.mark.parametrize("kind", TRAINABLE_LOSSES)
def test_hessian_matches_finite_differences(kind):
    rng = np.random.default_rng(8)
    for _ in range(20):
        y = _labels(kind, rng, 12)
        p = rng.standard_normal(12) * 2
        if kind == "l2svm":
            p = np.where(np.abs(p * y - 1) > 0.1, p, p + 0.5 * y)
        v = rng.standard_normal(12)
        fd = (loss_gradient(kind, p + H_FD * v, y) - loss_gradient(kind, p - H_FD * v, y)) / (2 * H_FD)
        assert _rel(loss_hessian(kind, p, y).apply(v), fd) <= 1e-4


@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_rankrls_translation_invariance(seed, c):
    rng = np.random.default_rng(seed)
    p, y = rng.standard_normal((2, 25))
    base = loss_value("rankrls", p, y)
    assert loss_value("rankrls", p + c, y) == pytest.approx(base, rel=1e-9, abs=1e-9)
    assert loss_value("rankrls", p + c, y + c) == pytest.approx(base, rel=1e-9, abs=1e-9)


def test_rankrls_translation_exact_on_dyadic_values():
    # shifts that are exact in binary leave y - p bit-identical
    p = np.array([0.25, -1.5, 3.0, 0.125])
    y = np.array([1.0, 0.5, -2.0, 4.0])
    base = loss_value("rankrls", p, y)
    assert loss_value("rankrls", p + 8.0, y + 8.0) == base


@given(st.sampled_from(TRAINABLE_LOSSES), st.integers(0, 2**32 - 1))
def test_hessian_symmetric_psd(kind, seed):
    rng = np.random.default_rng(seed)
    y = _labels(kind, rng, 8)
    p = rng.standard_normal(8) * 3
    H = loss_hessian(kind, p, y).to_dense()
    np.testing.assert_array_equal(H, H.T)
    assert np.linalg.eigvalsh(H).min() >= -1e-10
    v = rng.standard_normal(8)
    np.testing.assert_allclose(loss_hessian(kind, p, y).apply(v), H @ v, atol=1e-12)


@given(st.sampled_from(TRAINABLE_LOSSES), st.integers(0, 2**32 - 1))
def test_values_nonnegative(kind, seed):
    rng = np.random.default_rng(seed)
    y = _labels(kind, rng, 10)
    assert loss_value(kind, rng.standard_normal(10) * 5, y) >= 0.0


def test_l1svm_examples():
    v, g = l1svm_value_subgradient(np.array([2.0]), np.array([1.0]))
    assert (v, g.tolist()) == (0.0, [0.0])
    v, g = l1svm_value_subgradient(np.array([0.0]), np.array([1.0]))
    assert (v, g.tolist()) == (1.0, [-1.0])
    v, g = l1svm_value_subgradient(np.array([0.0, 0.0]), np.array([1.0, -1.0]))
    assert (v, g.tolist()) == (2.0, [-1.0, 1.0])
    assert loss_value("l1svm", np.array([0.0, 0.0]), np.array([1.0, -1.0])) == 2.0


def test_l1svm_hessian_rejected():
    with pytest.raises(ValueError, match="Hessian"):
        loss_hessian("l1svm", np.zeros(2), np.ones(2))
    assert "Hessian" in L1SVM_MESSAGE


@pytest.mark.parametrize("kind", ["l2svm", "logistic", "l1svm"])
def test_classification_label_domain(kind):
    with pytest.raises(ValueError, match="labels"):
        loss_value(kind, np.zeros(2), np.array([1.0, 0.0]))


def test_regression_losses_accept_real_labels():
    y = np.array([0.3, -7.0])
    assert loss_value("ridge", np.zeros(2), y) == pytest.approx(0.5 * (0.09 + 49.0))
    assert loss_value("rankrls", np.zeros(2), y) >= 0.0


def test_shape_and_kind_errors():
    with pytest.raises(ValueError):
        loss_value("ridge", np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError, match="unknown loss"):
        loss_value("hinge", np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        loss_hessian("ridge", np.zeros(2), np.zeros(2)).apply(np.zeros(3))


def test_rankrls_linear_time():
    import time
    rng = np.random.default_rng(0)
    times = []
    for n in (10**4, 10**6):
        p, y = rng.standard_normal((2, n))
        t0 = time.perf_counter()
        for _ in range(3):
            loss_value("rankrls", p, y)
            loss_gradient("rankrls", p, y)
        times.append(time.perf_counter() - t0)
    # 100x more data; quadratic growth would be 10^4x
    assert times[1] / max(times[0], 1e-6) < 1000
