import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from amm_cvar.errors import DomainError, NumericalError
from amm_cvar.optimize import sample_simplex
from amm_cvar.surrogate import (
    SurrogateModel,
    chi2_kernel,
    fit,
    gram,
    predict,
    predict_many,
    r_squared,
)


def kernel_loop(a, b):
    """Term-by-term evaluation with the 0/0 -> 0 rule."""
    return -sum((x - y) ** 2 / (x + y) for x, y in zip(a, b) if x + y > 0)


simplex3 = st.lists(st.floats(0, 1), min_size=3, max_size=3).filter(lambda v: sum(v) > 1e-3).map(
    lambda v: np.array(v) / sum(v))


def test_kernel_examples():
    theta = np.array([0.2, 0.3, 0.5])
    assert chi2_kernel(theta, theta) == 0.0
    assert chi2_kernel([1, 0, 0], [0, 1, 0]) == -2.0
    assert chi2_kernel([0.5, 0.5], [1, 0]) == pytest.approx(-2 / 3, rel=1e-15)


@given(simplex3, simplex3)
def test_kernel_properties(a, b):
    k = chi2_kernel(a, b)
    assert k == chi2_kernel(b, a)
    assert k <= 0.0
    assert k == pytest.approx(kernel_loop(a, b), rel=1e-12, abs=1e-15)
    assert chi2_kernel(a, a) == 0.0


def test_gram_matches_pairwise(rng):
    A, B = sample_simplex(rng, 4, 5), sample_simplex(rng, 3, 5)
    G = gram(A, B)
    assert G.shape == (4, 3)
    for i in range(4):
        for j in range(3):
            assert G[i, j] == pytest.approx(kernel_loop(A[i], B[j]), rel=1e-12)


def test_fit_single_anchor():
    m = fit([[0.2, 0.8]], [0.7], ridge_lambda=1.0)
    assert m.gamma.tolist() == [0.7]
    assert predict(m, [0.2, 0.8]) == 0.0


def test_fit_zero_targets(rng):
    m = fit(sample_simplex(rng, 5, 4), np.zeros(5))
    assert np.all(m.gamma == 0)
    assert np.all(predict_many(m, sample_simplex(rng, 10, 4)) == 0)


def test_fit_two_vertices_matches_dense_solve():
    anchors = np.eye(2)
    y = np.array([1.0, -1.0])
    m = fit(anchors, y, ridge_lambda=1.0)
    oracle = np.linalg.solve(np.array([[0.0, -2.0], [-2.0, 0.0]]) + np.eye(2), y)
    assert np.allclose(m.gamma, oracle, rtol=1e-14)
    assert np.allclose(m.gamma, [1 / 3, -1 / 3])


def test_fit_residual_check(rng):
    X = sample_simplex(rng, 10, 6)
    y = rng.normal(size=10)
    for lam in (1.0, 1e-3):
        m = fit(X, y, lam)
        res = np.linalg.norm((gram(X, X) + lam * np.eye(10)) @ m.gamma - y)
        assert res <= 1e-8 * (np.linalg.norm(y) + 1)
        assert m.train_residual == pytest.approx(res, abs=1e-12)


def test_fit_errors(rng):
    with pytest.raises(DomainError):
        fit(np.empty((0, 3)), [])
    with pytest.raises(DomainError):
        fit([[0.5, 0.5], [0.5, 0.5]], [1.0, 2.0])
    with pytest.raises(DomainError):
        fit([[0.5, 0.5]], [1.0, 2.0])
    # with a zero diagonal and lambda = 0 a 1x1 system is singular with a nonzero target
    with pytest.raises(NumericalError):
        fit([[0.5, 0.5]], [1.0], ridge_lambda=0.0)


def test_predict_examples(rng):
    X = sample_simplex(rng, 4, 3)
    m = fit(X, rng.normal(size=4))
    doubled = SurrogateModel(m.anchors, 2 * m.gamma, m.ridge_lambda)
    for theta in sample_simplex(rng, 5, 3):
        assert predict(doubled, theta) == pytest.approx(2 * predict(m, theta), rel=1e-14)
        assert predict(m, theta) == pytest.approx(float(gram(theta, X)[0] @ m.gamma), rel=1e-14)
    zero = SurrogateModel(X, np.zeros(4), 1.0)
    assert predict(zero, np.eye(3)[0]) == 0.0


def test_predict_finite_on_boundary(rng):
    m = fit(sample_simplex(rng, 6, 4), rng.normal(size=6))
    assert np.all(np.isfinite(predict_many(m, np.eye(4))))


def test_intercept_centers_targets(rng):
    X = sample_simplex(rng, 6, 3)
    y = rng.normal(size=6) + 5.0
    m = fit(X, y, 1.0, fit_intercept=True)
    assert m.intercept == pytest.approx(y.mean())
    centered = fit(X, y - y.mean(), 1.0)
    theta = sample_simplex(rng, 1, 3)[0]
    assert predict(m, theta) == pytest.approx(y.mean() + predict(centered, theta), rel=1e-12)


def test_r_squared_examples():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    X = np.eye(4)
    perfect = fit(X, y, 1e-12)
    assert r_squared(perfect, X, y) == pytest.approx(1.0, abs=1e-9)
    mean_only = SurrogateModel(X, np.zeros(4), 1.0, intercept=y.mean())
    assert r_squared(mean_only, X, y) == 0.0
    # constant predictions at mean +- sqrt(ss_tot) give ss_res = 2 ss_tot
    ss_tot = float(((y - y.mean()) ** 2).sum())
    off = SurrogateModel(X, np.zeros(4), 1.0, intercept=y.mean() + np.sqrt(ss_tot / 4))
    assert r_squared(off, X, y) == pytest.approx(-1.0)
    with pytest.raises(DomainError):
        r_squared(mean_only, X, np.ones(4))


def test_yaml_round_trip(tmp_path, rng):
    m = fit(sample_simplex(rng, 5, 3), rng.normal(size=5), 1e-3, fit_intercept=True)
    m.to_yaml(tmp_path / "m.yaml")
    back = SurrogateModel.from_yaml(tmp_path / "m.yaml")
    assert np.array_equal(back.anchors, m.anchors) and np.array_equal(back.gamma, m.gamma)
    assert (back.ridge_lambda, back.intercept) == (m.ridge_lambda, m.intercept)
