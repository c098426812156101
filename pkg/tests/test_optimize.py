import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from amm_cvar.errors import DomainError, NumericalError
from amm_cvar.optimize import (
    SqpConfig,
    fd_gradient,
    project_simplex,
    random_grid_search,
    sample_simplex,
    sqp_minimize,
)


def quadratic(c):
    c = np.asarray(c, dtype=float)
    return lambda t: float(np.sum((t - c) ** 2))


def assert_feasible(theta):
    assert np.all(theta >= -1e-10)
    assert abs(theta.sum() - 1.0) <= 1e-8


def projection_kkt_holds(v, p, tol=1e-12):
    """KKT of min |p - v|^2 on the simplex: v - p = tau on the support, <= tau off it."""
    r = v - p
    support = p > 0
    tau = r[support].mean()
    return np.allclose(r[support], tau, atol=tol) and np.all(r[~support] <= tau + tol)


# --- projection ------------------------------------------------------------

def test_projection_examples():
    v = np.array([0.2, 0.3, 0.5])
    assert np.array_equal(project_simplex(v), v)
    assert project_simplex([0.8, 0.8]).tolist() == [0.5, 0.5]
    p = project_simplex([1.5, -0.5])
    assert p.tolist() == [1.0, 0.0]
    assert projection_kkt_holds(np.array([1.5, -0.5]), p)


def test_projection_rejects_non_finite():
    with pytest.raises(DomainError):
        project_simplex([0.5, math.nan])


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8))
def test_projection_kkt_and_idempotence(v):
    v = np.array(v)
    p = project_simplex(v)
    assert_feasible(p)
    assert projection_kkt_holds(v, p, tol=1e-9)
    assert np.allclose(project_simplex(p), p, atol=1e-15)


def test_projection_is_nearest(rng):
    for _ in range(20):
        v = rng.normal(size=5) * 2
        d = np.linalg.norm(project_simplex(v) - v)
        others = sample_simplex(rng, 1000, 5)
        assert np.all(d <= np.linalg.norm(others - v, axis=1) + 1e-12)


# --- SQP -------------------------------------------------------------------

def test_sqp_interior_quadratic():
    res = sqp_minimize(quadratic([0.7, 0.2, 0.1]), np.full(3, 1 / 3))
    assert res.converged
    assert np.allclose(res.theta_hat, [0.7, 0.2, 0.1], atol=1e-6)


def test_sqp_projected_quadratic():
    c = np.array([1.5, -0.5, 0.0])
    res = sqp_minimize(quadratic(c), np.full(3, 1 / 3))
    assert np.allclose(res.theta_hat, project_simplex(c), atol=1e-6)
    assert np.allclose(res.theta_hat, [1, 0, 0], atol=1e-6)


def test_sqp_linear_program_vertex():
    a = np.array([0.3, -0.2, 0.5, 0.1])
    res = sqp_minimize(lambda t: float(a @ t), np.full(4, 0.25))
    assert np.allclose(res.theta_hat, np.eye(4)[np.argmin(a)], atol=1e-6)


def test_sqp_beats_random_feasible_points(rng):
    c = rng.normal(size=6)
    f = lambda t: float(np.sum((t - c) ** 2) + 0.3 * np.sum(t ** 3))
    res = sqp_minimize(f, np.full(6, 1 / 6))
    assert_feasible(res.theta_hat)
    others = [f(t) for t in sample_simplex(rng, 2000, 6)]
    assert res.objective_value <= min(others) + 1e-8


def test_sqp_result_invariants(rng):
    c = rng.normal(size=5)
    f = quadratic(c)
    res = sqp_minimize(f, sample_simplex(rng, 1, 5)[0])
    assert_feasible(res.theta_hat)
    assert abs(res.objective_value - f(res.theta_hat)) <= 1e-12
    values = [v for _, v in res.trace]
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
    for theta, _ in res.trace:
        assert_feasible(theta)


def test_sqp_start_at_solution():
    c = np.array([0.5, 0.3, 0.2])
    cfg = SqpConfig()
    res = sqp_minimize(quadratic(c), c, cfg)
    assert res.converged
    assert np.linalg.norm(res.theta_hat - c) <= cfg.convergence_tol


def test_sqp_errors():
    with pytest.raises(DomainError):
        sqp_minimize(quadratic([1, 0]), [0.7, 0.7])
    with pytest.raises(NumericalError):
        sqp_minimize(lambda t: math.nan, [0.5, 0.5])
    with pytest.raises(DomainError):
        SqpConfig(max_iterations=0)


def test_fd_gradient_matches_analytic(rng):
    a = rng.normal(size=6)
    f = lambda t: float(np.sum(np.sin(a * t)) + np.sum(t ** 2) ** 1.5)

    def analytic(t):
        g = a * np.cos(a * t) + 3 * np.sum(t ** 2) ** 0.5 * t
        return g - g.mean()

    for theta in sample_simplex(rng, 10, 6):
        g = fd_gradient(f, theta, 1e-6)
        assert abs(g.sum()) < 1e-12
        exact = analytic(theta)
        assert np.linalg.norm(g - exact) <= 1e-4 * np.linalg.norm(exact)


def test_trace_csv(tmp_path):
    res = sqp_minimize(quadratic([0.6, 0.4]), [0.5, 0.5])
    res.trace_to_csv(tmp_path / "trace.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "iteration,theta_1,theta_2,value"
    assert len(lines) == len(res.trace) + 1
    last = [float(x) for x in lines[-1].split(",")[1:]]
    assert last == [*res.theta_hat.tolist(), res.objective_value]


# --- grid search -----------------------------------------------------------

def test_grid_single_point():
    res = random_grid_search(quadratic([1, 0, 0]), 1, seed=4, n=3)
    first = sample_simplex(np.random.default_rng(4), 1, 3)[0]
    assert np.array_equal(res.theta_hat, first)


def test_grid_nested_monotone():
    f = quadratic([0.2, 0.5, 0.3])
    for k in (1, 10, 100):
        assert random_grid_search(f, 2 * k, 9, 3).objective_value <= random_grid_search(f, k, 9, 3).objective_value


def test_grid_determinism_and_errors():
    f = quadratic([0.2, 0.5, 0.3])
    a, b = random_grid_search(f, 50, 1, 3), random_grid_search(f, 50, 1, 3)
    assert np.array_equal(a.theta_hat, b.theta_hat)
    with pytest.raises(DomainError):
        random_grid_search(f, 0, 1, 3)


def test_grid_coverage():
    res = random_grid_search(quadratic(np.full(3, 1 / 3)), 100_000, 0, 3)
    assert res.objective_value <= 1e-2
    assert_feasible(res.theta_hat)
