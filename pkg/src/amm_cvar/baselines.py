"""Competing allocation heuristics used for head-to-head benchmarks.

* :func:`blanco_optimize`: gradient descent on a composite penalty loss,
  with a closed-form "reweighted burn" model of the returns between market
  regenerations.
* :func:`finatics_optimize`: projected stochastic gradient descent on CVaR.
* :func:`elagnitram_optimize`: CVaR gradient descent over ``n - 1`` free
  weights, guarded by the lower return quantile.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .errors import DomainError
from .lifecycle import CvarObjective, ReturnDistribution, deploy, equal_weights, var_cvar
from .market import EventStream, draw_event_stream
from .optimize import OptimizeResult, fd_gradient, project_simplex, sample_simplex
from .pipeline import PipelineConfig, derived_rng

FRESH_KEY = 1 << 32, 3
START_KEY = 1 << 32, 4


def fresh_market(config: PipelineConfig, iteration: int) -> PipelineConfig:
    """The same problem on an independent market, seeded from the master seed and iteration."""
    seed = int(np.random.SeedSequence(config.market.master_seed, spawn_key=(*FRESH_KEY, iteration))
               .generate_state(1, np.uint64)[0])
    return config.with_(market=config.market.with_(master_seed=seed))


def fresh_objective(config: PipelineConfig, iteration: int) -> CvarObjective:
    cfg = fresh_market(config, iteration)
    return cfg.objective(draw_event_stream(cfg.market))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --------------------------------------------------------------------- Blanco

@dataclass(frozen=True)
class BlancoConfig:
    omega: tuple[float, float, float, float] | None = None  # None: balance at run start
    beta: float = 0.05
    n_iter: int = 5
    n_gd: int = 50
    sigmoid_scale: float = 1000.0
    fd_step: float = 1e-6

    def __post_init__(self) -> None:
        if self.omega is not None and (len(self.omega) != 4 or min(self.omega) < 0):
            raise DomainError("omega must be four non-negative weights")
        if self.beta <= 0 or self.sigmoid_scale <= 0 or self.fd_step <= 0:
            raise DomainError("beta, sigmoid_scale and fd_step must be > 0")
        if self.n_iter < 1 or self.n_gd < 0:
            raise DomainError("n_iter must be >= 1 and n_gd >= 0")


def blanco_losses(theta, returns: ReturnDistribution | np.ndarray, alpha: float, q: float,
                  zeta: float, sigmoid_scale: float = 1000.0) -> tuple[float, float, float, float]:
    """(probability penalty, negativity penalty, budget penalty, tail-loss mean)."""
    r = returns.returns if isinstance(returns, ReturnDistribution) else np.asarray(returns, dtype=float)
    if r.size == 0:
        raise DomainError("returns must be non-empty")
    theta = np.asarray(theta, dtype=np.float64)
    l1 = max(q - float(_sigmoid(sigmoid_scale * (r - zeta)).mean()), 0.0) ** 2
    l2 = float(np.maximum(-theta, 0.0).mean())
    l3 = (float(theta.sum()) - 1.0) ** 2
    losses = -r
    tail = losses[losses > np.quantile(losses, alpha)]
    l4 = float(tail.mean()) if tail.size else float(losses.max())
    return l1, l2, l3, l4


def _initial_top3(f: CvarObjective) -> np.ndarray:
    n = f.n
    single = [f(np.eye(n)[j]) for j in range(n)]
    top = np.argsort(single, kind="stable")[:min(3, n)]
    theta = np.zeros(n)
    theta[top] = 1.0 / len(top)
    return theta


def _balanced_omega(terms) -> np.ndarray:
    """Scale the distribution-dependent terms to unit size; the penalties keep weight 1."""
    l1, _, _, l4 = terms
    return np.array([1.0 / l1 if l1 > 1e-12 else 1.0, 1.0, 1.0,
                     1.0 / abs(l4) if abs(l4) > 1e-12 else 1.0])


class _ReweightedBurn:
    """Closed-form returns when the burned amounts are rescaled by theta / theta_outer."""

    def __init__(self, config: PipelineConfig, theta_outer: np.ndarray, stream: EventStream):
        lp, deployed = deploy(config.initial_pools, theta_outer, config.x0)
        rx0, ry0, l_total, phi = deployed.arrays()
        sigma_all, sigma = config.market.sigma_arrays()
        final_rx, final_ry, *_ = _kernels.replay_paths(
            rx0, ry0, phi, stream.offsets, stream.types, stream.x_to_y, stream.normals,
            stream.normal_offsets, sigma_all, sigma, False)
        self.xb, self.yb, self.rx, self.ry = _kernels.burn_holdings(final_rx, final_ry, l_total, lp)
        self.g = 1.0 - phi
        self.outer = theta_outer
        self.live = theta_outer > 0
        self.x0 = config.x0

    def returns(self, theta: np.ndarray) -> np.ndarray:
        ratio = np.zeros_like(theta)
        ratio[self.live] = np.maximum(theta[self.live], 0.0) / self.outer[self.live]
        yb = self.yb * ratio
        x_swap = yb * self.g * self.rx / (self.ry + self.g * yb)
        total = (self.xb * ratio + x_swap).sum(axis=1)
        with np.errstate(divide="ignore"):
            return np.log(total / self.x0)


def blanco_optimize(config: BlancoConfig, context: PipelineConfig,
                    stream: EventStream | None = None) -> OptimizeResult:
    """Outer loop: regenerate a market at the current weights. Inner loop: descend the
    composite loss on the reweighted-burn returns of that market."""
    if stream is None:
        stream = draw_event_stream(context.market)
    f = context.objective(stream)
    theta = _initial_top3(f)
    a, q, xi, scale = context.alpha, context.q, context.xi, config.sigmoid_scale
    omega = None if config.omega is None else np.array(config.omega, dtype=float)
    trace = [(theta.copy(), f(theta))]
    final_terms = None
    for it in range(config.n_iter):
        outer = project_simplex(theta)
        cfg = fresh_market(context, it)
        model = _ReweightedBurn(cfg, outer, draw_event_stream(cfg.market))

        def loss(th: np.ndarray) -> float:
            return float(omega @ blanco_losses(th, model.returns(th), a, q, xi, scale))

        if omega is None:
            omega = _balanced_omega(blanco_losses(outer, model.returns(outer), a, q, xi, scale))
        theta = outer.copy()
        h = config.fd_step
        for _ in range(config.n_gd):
            grad = np.zeros_like(theta)
            for j in np.flatnonzero(model.live):
                e = np.zeros_like(theta)
                e[j] = h
                grad[j] = (loss(theta + e) - loss(theta - e)) / (2.0 * h)
            theta = theta - config.beta * grad
        final_terms = blanco_losses(theta, model.returns(theta), a, q, xi, scale)
        trace.append((project_simplex(theta), f(project_simplex(theta))))
    theta_hat = project_simplex(theta)
    return OptimizeResult(
        theta_hat, f(theta_hat), config.n_iter * config.n_gd, True, trace,
        "outer iteration cap reached", f.n_evals,
        info={"omega": [float(w) for w in omega], "raw_theta": [float(t) for t in theta],
              "final_losses": [float(v) for v in final_terms]},
    )


# ------------------------------------------------------------------- Finatics

@dataclass(frozen=True)
class FinaticsConfig:
    eta: float = 0.05
    n_iter: int = 50
    fd_step: float = 1e-6
    shared_stream: bool = False

    def __post_init__(self) -> None:
        if self.eta <= 0 or self.n_iter < 1 or self.fd_step <= 0:
            raise DomainError("eta, n_iter and fd_step must be positive")


def projected_sgd(objective_at: Callable[[int], Callable[[np.ndarray], float]], theta0,
                  eta: float, n_iter: int, fd_step: float, q: float | None = None) -> OptimizeResult:
    """theta <- proj(theta - eta * g) where g is a finite-difference gradient of the
    iteration's objective. Returns the best iterate, preferring those whose
    objective reports a probability above ``q`` when the objective can report it."""
    theta = project_simplex(theta0)
    trace, feasible, evals = [], [], 0
    for it in range(n_iter):
        fi = objective_at(it)
        if hasattr(fi, "report"):
            rep = fi.report(theta)
            value = rep.cvar_alpha
            feasible.append(q is None or rep.prob_above_xi > q)
        else:
            value = float(fi(theta))
            feasible.append(True)
        trace.append((theta.copy(), value))
        g = fd_gradient(fi, theta, fd_step, value)
        evals += 1 + 2 * (len(theta) - 1)
        theta = project_simplex(theta - eta * g)
    pool = [i for i, ok in enumerate(feasible) if ok] or list(range(len(trace)))
    best = min(pool, key=lambda i: trace[i][1])
    message = "best iterate" if feasible[best] else "no iterate met the probability constraint"
    return OptimizeResult(trace[best][0].copy(), trace[best][1], n_iter, True, trace, message,
                          evals, info={"best_iteration": best, "constraint_met": feasible[best]})


def finatics_optimize(config: FinaticsConfig, context: PipelineConfig, theta0=None,
                      stream: EventStream | None = None) -> OptimizeResult:
    if theta0 is None:
        theta0 = sample_simplex(derived_rng(context.market.master_seed, START_KEY), 1, context.n)[0]
    if config.shared_stream:
        shared = context.objective(stream if stream is not None else draw_event_stream(context.market))
        objective_at = lambda it: shared
    else:
        objective_at = lambda it: fresh_objective(context, it)
    return projected_sgd(objective_at, theta0, config.eta, config.n_iter, config.fd_step, context.q)


# ----------------------------------------------------------------- Elagnitram

@dataclass(frozen=True)
class ElagnitramConfig:
    delta1: float = 0.0
    delta2: float = 0.01
    learning_rate: float = 0.05
    n_iter: int = 100
    fd_step: float = 1e-6
    max_backtracks: int = 20
    tol: float = 1e-7

    def __post_init__(self) -> None:
        if self.delta1 > self.delta2:
            raise DomainError("delta1 must not exceed delta2")
        if self.learning_rate <= 0 or self.n_iter < 1 or self.fd_step <= 0:
            raise DomainError("learning_rate, n_iter and fd_step must be positive")


def band_direction(g_cvar: np.ndarray, g_quant: np.ndarray, psi: float, zeta: float,
                   delta1: float, delta2: float) -> np.ndarray | None:
    """Descent direction from the quantile band; ``None`` inside the violating band."""
    if psi < zeta + delta1:
        return None
    if psi > zeta + delta2:
        return -g_cvar
    nq = float(g_quant @ g_quant)
    if nq == 0.0:
        return -g_cvar
    return -(g_cvar - (g_cvar @ g_quant) / nq * g_quant)


def _full(free: np.ndarray) -> np.ndarray:
    """Append the weight fixed by the budget, absorbing round-off at the boundary."""
    theta = np.maximum(np.append(free, 1.0 - free.sum()), 0.0)
    return theta / theta.sum()


def _max_feasible_step(theta: np.ndarray, step: np.ndarray) -> float:
    """Largest t in [0, 1] with theta + t * step >= 0."""
    neg = step < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-theta[neg] / step[neg])))


def elagnitram_optimize(config: ElagnitramConfig, context: PipelineConfig, theta0=None,
                        stream: EventStream | None = None) -> OptimizeResult:
    f = context.objective(stream if stream is not None else draw_event_stream(context.market))
    level = 1.0 - context.q
    zeta, d1, d2, h = context.xi, config.delta1, config.delta2, config.fd_step

    def stats(free: np.ndarray) -> tuple[float, float]:
        dist = f.distribution(_full(free))
        return var_cvar(dist, context.alpha).cvar_alpha, float(np.quantile(dist.returns, level))

    def grads(free: np.ndarray, here: tuple[float, float]) -> tuple[np.ndarray, np.ndarray]:
        # Moving free weight k moves the budget weight the other way; stay inside both bounds.
        gc, gq = np.zeros(len(free)), np.zeros(len(free))
        last = 1.0 - free.sum()
        for k in range(len(free)):
            e = np.zeros(len(free))
            e[k] = h
            up = stats(free + e) if last >= h else here
            down = stats(free - e) if free[k] >= h else here
            width = h * ((last >= h) + (free[k] >= h))
            if width:
                gc[k] = (up[0] - down[0]) / width
                gq[k] = (up[1] - down[1]) / width
        return gc, gq

    theta = equal_weights(context.n) if theta0 is None else project_simplex(theta0)
    free = theta[:-1].copy()
    cvar, psi = stats(free)
    trace = [(_full(free), cvar)]
    converged, rejected, it = False, 0, 0
    for it in range(1, config.n_iter + 1):
        gc, gq = grads(free, (cvar, psi))
        direction = band_direction(gc, gq, psi, zeta, d1, d2)
        restoring = direction is None
        if restoring:
            direction = gq  # outside the admissible band: climb the quantile first
        step = config.learning_rate * direction
        t = _max_feasible_step(np.append(free, 1.0 - free.sum()), np.append(step, -step.sum()))
        accepted = False
        for _ in range(config.max_backtracks + 1):
            cand = _full(free + t * step)[:-1]
            c_cvar, c_psi = stats(cand)
            if restoring:
                accepted = c_psi > psi
            else:
                accepted = c_psi >= zeta + d1 and c_cvar <= cvar
            if accepted:
                break
            t *= 0.5
        if not accepted:
            rejected += 1
            continue
        move = float(np.linalg.norm(cand - free))
        free, cvar, psi = cand, c_cvar, c_psi
        trace.append((_full(free), cvar))
        if move < config.tol and not restoring:
            converged = True
            break
    if converged:
        message = "step below tolerance"
    elif rejected:
        message = f"iteration cap reached with {rejected} rejected steps"
    else:
        message = "iteration cap reached"
    theta_hat = _full(free)
    return OptimizeResult(theta_hat, cvar, it, converged, trace, message, f.n_evals,
                          info={"rejected_steps": rejected, "final_quantile": psi,
                                "pool_model": "exact simulator"})


# -------------------------------------------------------------------- helpers

def timed(fn, *args, **kwargs) -> tuple[OptimizeResult, float]:
    t = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t


__all__ = [
    "BlancoConfig", "FinaticsConfig", "ElagnitramConfig", "blanco_losses", "blanco_optimize",
    "finatics_optimize", "elagnitram_optimize", "projected_sgd", "band_direction", "fresh_market", "fresh_objective",
    "timed",
]
