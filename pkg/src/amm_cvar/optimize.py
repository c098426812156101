"""Local minimization over the probability simplex.

:func:`sqp_minimize` is a small SQP solver in the SLSQP family: a damped-BFGS
model of the Hessian, a quadratic subproblem with the simplex constraints
linearized exactly (they are linear already), solved by a primal active-set
method, and a backtracking line search on the objective itself (every iterate
is feasible, so no penalty merit is needed). Gradients come from finite
differences along simplex-tangent directions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DomainError, NumericalError
from .lifecycle import as_weights

Objective = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class SqpConfig:
    max_iterations: int = 100
    gradient_fd_step: float = 1e-6
    convergence_tol: float = 1e-8
    max_halvings: int = 30

    def __post_init__(self) -> None:
        if self.max_iterations < 1 or self.gradient_fd_step <= 0 or self.convergence_tol <= 0:
            raise DomainError("SqpConfig fields must be positive")


@dataclass
class OptimizeResult:
    theta_hat: np.ndarray
    objective_value: float
    iterations: int
    converged: bool
    trace: list[tuple[np.ndarray, float]] = field(default_factory=list)
    message: str = ""
    n_evaluations: int = 0
    info: dict = field(default_factory=dict)

    def trace_to_csv(self, path: str | Path) -> None:
        n = len(self.theta_hat)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", *[f"theta_{j + 1}" for j in range(n)], "value"])
            for it, (theta, value) in enumerate(self.trace):
                w.writerow([it, *[f"{t:.17g}" for t in theta], f"{value:.17g}"])


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto {theta >= 0, sum theta = 1} (sort-and-threshold)."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if len(v) == 0 or not np.all(np.isfinite(v)):
        raise DomainError("projection input must be a non-empty finite vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(v - tau, 0.0)


def clean_simplex(theta: np.ndarray) -> np.ndarray:
    """Absorb round-off: clip tiny negatives and renormalize."""
    theta = np.maximum(theta, 0.0)
    return theta / theta.sum()


def sample_simplex(rng: np.random.Generator, size: int, n: int) -> np.ndarray:
    """Uniform (flat Dirichlet) draws; row i depends only on the first i rows' draws."""
    e = rng.standard_exponential((size, n))
    return e / e.sum(axis=1, keepdims=True)


class _Counted:
    def __init__(self, f: Objective):
        self.f = f
        self.calls = 0

    def __call__(self, theta: np.ndarray) -> float:
        self.calls += 1
        value = float(self.f(theta))
        if not math.isfinite(value):
            raise NumericalError(f"objective returned {value!r} at theta={theta.tolist()}")
        return value


def fd_gradient(f: Objective, theta: np.ndarray, h: float, f0: float | None = None) -> np.ndarray:
    """Tangent-space gradient by finite differences along e_j - e_r.

    ``r`` is the largest coordinate, so ``theta + h (e_j - e_r)`` is always
    feasible; the backward point is used (central difference) only when
    ``theta_j >= h``, otherwise a forward difference. The result sums to zero.
    """
    n = len(theta)
    r = int(np.argmax(theta))
    deriv = np.zeros(n)
    for j in range(n):
        if j == r:
            continue
        step = np.zeros(n)
        step[j] += h
        step[r] -= h
        fp = f(theta + step)
        if theta[j] >= h:
            deriv[j] = (fp - f(theta - step)) / (2.0 * h)
        else:
            if f0 is None:
                f0 = f(theta)
            deriv[j] = (fp - f0) / h
    return deriv - deriv.mean()


def _qp_step(grad: np.ndarray, hess: np.ndarray, theta: np.ndarray, tol: float = 1e-14) -> np.ndarray:
    """min grad.d + d'Hd/2  s.t.  theta + d >= 0,  sum(d) = 0  (primal active set from d = 0)."""
    n = len(theta)
    d = np.zeros(n)
    active = {j for j in range(n) if theta[j] <= 0.0}
    for _ in range(20 * n + 20):
        free = np.array([j for j in range(n) if j not in active], dtype=np.int64)
        m = len(free)
        c = grad + hess @ d
        kkt = np.zeros((m + 1, m + 1))
        kkt[:m, :m] = hess[np.ix_(free, free)]
        kkt[:m, m] = 1.0
        kkt[m, :m] = 1.0
        rhs = np.concatenate([-c[free], [0.0]])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        p = np.zeros(n)
        p[free] = sol[:m]
        nu = sol[m]
        if np.linalg.norm(p) <= tol * (1.0 + np.linalg.norm(d)):
            if not active:
                return d
            lam = {j: c[j] + nu for j in active}
            worst = min(lam, key=lam.get)
            if lam[worst] >= -tol:
                return d
            active.discard(worst)
            continue
        alpha, block = 1.0, None
        for j in free:
            if p[j] < 0.0:
                a = (-theta[j] - d[j]) / p[j]
                if a < alpha:
                    alpha, block = a, j
        d = d + alpha * p
        if block is not None:
            d[block] = -theta[block]
            active.add(block)
    return d


def _damped_bfgs(B: np.ndarray, s: np.ndarray, y: np.ndarray) -> np.ndarray:
    Bs = B @ s
    sBs = float(s @ Bs)
    if sBs <= 0.0:
        return B
    sy = float(s @ y)
    t = 1.0 if sy >= 0.2 * sBs else 0.8 * sBs / (sBs - sy)
    r = t * y + (1.0 - t) * Bs
    return B - np.outer(Bs, Bs) / sBs + np.outer(r, r) / float(s @ r)


def sqp_minimize(f: Objective, theta0, config: SqpConfig = SqpConfig()) -> OptimizeResult:
    theta = as_weights(theta0, atol=1e-8)
    theta = clean_simplex(theta)
    fc = _Counted(f)
    h, tol = config.gradient_fd_step, config.convergence_tol
    fx = fc(theta)
    g = fd_gradient(fc, theta, h, fx)
    B = np.eye(len(theta))
    trace = [(theta.copy(), fx)]
    converged, message, it = False, "iteration cap reached", 0
    for it in range(1, config.max_iterations + 1):
        d = _qp_step(g, B, theta)
        slope = float(g @ d)
        if np.linalg.norm(d) < tol or slope >= 0.0:
            converged, message = True, "step below tolerance"
            it -= 1
            break
        step, accepted = 1.0, False
        for _ in range(config.max_halvings + 1):
            cand = clean_simplex(theta + step * d)
            fcand = fc(cand)
            if fcand <= fx + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged, message = True, "line search exhausted at a kink"
            it -= 1
            break
        s = cand - theta
        g_new = fd_gradient(fc, cand, h, fcand)
        B = _damped_bfgs(B, s, g_new - g)
        theta, fx, g = cand, fcand, g_new
        trace.append((theta.copy(), fx))
        if np.linalg.norm(s) < tol:
            converged, message = True, "step below tolerance"
            break
    return OptimizeResult(theta, fx, it, converged, trace, message, fc.calls)


def random_grid_search(f: Objective, n_points: int, seed: int, n: int) -> OptimizeResult:
    if n_points < 1:
        raise DomainError("n_points must be >= 1")
    rng = np.random.default_rng(seed)
    pts = sample_simplex(rng, n_points, n)
    best_i, best_v = 0, math.inf
    trace = []
    for i, p in enumerate(pts):
        v = float(f(p))
        if v < best_v:
            best_i, best_v = i, v
            trace.append((p.copy(), v))
    return OptimizeResult(pts[best_i].copy(), best_v, n_points, True, trace,
                          f"best of {n_points} uniform simplex samples", n_points)
