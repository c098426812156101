"""Surrogate-assisted CVaR minimization in three stages.

1. Evaluate the true CVaR at ``n_train`` uniform simplex points and fit a
   chi-squared KRR surrogate.
2. Minimize the surrogate from equal weights (cheap).
3. Refine by SQP on the true objective, starting from the stage-2 point.

Every evaluation replays one cached :class:`EventStream`, so all stages see
the same deterministic objective.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .errors import DomainError
from .lifecycle import CvarObjective, RiskReport, equal_weights
from .market import EventStream, MarketParams, draw_event_stream
from .optimize import OptimizeResult, SqpConfig, random_grid_search, sample_simplex, sqp_minimize
from .pool_engine import MultiPool
from .surrogate import SurrogateModel, fit, predict_many, r_squared

log = logging.getLogger(__name__)

# Spawn keys for auxiliary generators; path generators use one-element keys.
ANCHOR_KEY = (1 << 32, 1)
GRID_KEY = (1 << 32, 2)


def derived_rng(master_seed: int, key: tuple[int, ...]) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=key)))


@dataclass(frozen=True)
class PipelineConfig:
    market: MarketParams = field(default_factory=MarketParams)
    initial_pools: MultiPool | None = None
    x0: float = 10.0
    n_train: int = 10
    alpha: float = 0.9
    xi: float = 0.05
    q: float = 0.8
    ridge_lambda: float = 1e-3
    fit_intercept: bool = True
    sqp: SqpConfig = field(default_factory=SqpConfig)
    workers: int = 1

    def __post_init__(self) -> None:
        if self.initial_pools is None:
            object.__setattr__(self, "initial_pools", MultiPool.uniform(self.market.n_pools))
        if len(self.initial_pools) != self.market.n_pools:
            raise DomainError(
                f"initial_pools has {len(self.initial_pools)} pools, market has {self.market.n_pools}")
        if not (math.isfinite(self.x0) and self.x0 > 0):
            raise DomainError("x0 must be > 0")
        if self.n_train < 1:
            raise DomainError("n_train must be >= 1")
        if not (0 < self.alpha < 1) or not (0 <= self.q <= 1):
            raise DomainError("alpha must lie in (0, 1) and q in [0, 1]")
        if self.ridge_lambda < 0:
            raise DomainError("ridge_lambda must be >= 0")
        if self.workers < 1:
            raise DomainError("workers must be >= 1")

    @property
    def n(self) -> int:
        return self.market.n_pools

    def with_(self, **changes) -> PipelineConfig:
        return replace(self, **changes)

    def objective(self, stream: EventStream) -> CvarObjective:
        return CvarObjective(self.initial_pools, self.x0, stream, self.market, self.alpha, self.xi)


@dataclass
class PipelineReport:
    anchors: np.ndarray
    train_cvar: np.ndarray
    model: SurrogateModel
    train_r2: float
    theta_app: np.ndarray
    surrogate_value: float
    theta_app_cvar: float
    stage2: OptimizeResult | None
    stage2_fallback: bool
    stage3: OptimizeResult
    risk: RiskReport
    equal_weight_cvar: float
    constraint_satisfied: bool
    timings: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def theta_hat(self) -> np.ndarray:
        return self.stage3.theta_hat

    @property
    def min_train_cvar(self) -> float:
        return float(self.train_cvar.min())

    @property
    def converged(self) -> bool:
        return self.stage3.converged

    def as_dict(self, *, timings: bool = True) -> dict:
        fl = lambda a: [float(v) for v in np.ravel(a)]
        doc = {
            "stage1": {
                "anchors": [fl(row) for row in self.anchors],
                "train_cvar": fl(self.train_cvar),
                "train_r2": float(self.train_r2),
                "min_train_cvar": self.min_train_cvar,
                "ridge_lambda": float(self.model.ridge_lambda),
                "intercept": float(self.model.intercept),
                "gamma": fl(self.model.gamma),
            },
            "stage2": {
                "theta_app": fl(self.theta_app),
                "surrogate_value": float(self.surrogate_value),
                "true_cvar": float(self.theta_app_cvar),
                "fallback_to_best_anchor": self.stage2_fallback,
                "iterations": self.stage2.iterations if self.stage2 else 0,
                "beats_best_anchor": bool(self.theta_app_cvar < self.min_train_cvar),
            },
            "stage3": {
                "theta_hat": fl(self.theta_hat),
                "objective_value": float(self.stage3.objective_value),
                "iterations": self.stage3.iterations,
                "evaluations": self.stage3.n_evaluations,
                "converged": self.stage3.converged,
                "message": self.stage3.message,
            },
            "risk": self.risk.as_dict(),
            "equal_weight_cvar": float(self.equal_weight_cvar),
            "constraint_satisfied": self.constraint_satisfied,
            "warnings": list(self.warnings),
        }
        if timings:
            doc["timings"] = {k: float(v) for k, v in self.timings.items()}
        return doc

    def to_yaml(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.as_dict(), sort_keys=False))


def build_dataset(config: PipelineConfig, objective: CvarObjective) -> tuple[np.ndarray, np.ndarray]:
    """Anchors depend on (master seed, n_train) only; evaluations keep index order."""
    anchors = sample_simplex(derived_rng(config.market.master_seed, ANCHOR_KEY), config.n_train, config.n)
    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            values = list(pool.map(objective, anchors))
    else:
        values = [objective(a) for a in anchors]
    return anchors, np.array(values, dtype=np.float64)


def run_pipeline(config: PipelineConfig, stream: EventStream | None = None) -> PipelineReport:
    timings: dict[str, float] = {}
    warnings: list[str] = []

    t = time.perf_counter()
    if stream is None:
        stream = draw_event_stream(config.market)
    f = config.objective(stream)
    timings["stream"] = time.perf_counter() - t

    t = time.perf_counter()
    anchors, y = build_dataset(config, f)
    model = fit(anchors, y, config.ridge_lambda, fit_intercept=config.fit_intercept)
    train_r2 = r_squared(model, anchors, y) if np.ptp(y) > 0 else math.nan
    timings["stage1"] = time.perf_counter() - t

    t = time.perf_counter()
    stage2, fallback = None, False
    try:
        stage2 = sqp_minimize(model, equal_weights(config.n), config.sqp)
        theta_app = stage2.theta_hat
    except (ArithmeticError, ValueError) as exc:
        fallback = True
        theta_app = anchors[int(np.argmin(y))].copy()
        warnings.append(f"surrogate minimization failed ({exc}); starting stage 3 at the best anchor")
    surrogate_value = float(predict_many(model, theta_app[None, :])[0])
    timings["stage2"] = time.perf_counter() - t

    t = time.perf_counter()
    stage3 = sqp_minimize(f, theta_app, config.sqp)
    risk = f.report(stage3.theta_hat)
    timings["stage3"] = time.perf_counter() - t

    ew = f(equal_weights(config.n))
    satisfied = risk.prob_above_xi > config.q
    if not satisfied:
        msg = f"P[r_T > {config.xi}] = {risk.prob_above_xi:.4f} does not exceed q = {config.q}"
        warnings.append(msg)
        log.warning(msg)
    return PipelineReport(
        anchors=anchors, train_cvar=y, model=model, train_r2=train_r2,
        theta_app=theta_app, surrogate_value=surrogate_value,
        theta_app_cvar=stage3.trace[0][1], stage2=stage2, stage2_fallback=fallback,
        stage3=stage3, risk=risk, equal_weight_cvar=ew, constraint_satisfied=satisfied,
        timings=timings, warnings=warnings,
    )


@dataclass(frozen=True)
class AblationRow:
    method: str
    risk: RiskReport
    theta: np.ndarray
    wall_time: float

    def csv_cells(self) -> list[str]:
        r = self.risk
        nums = [r.prob_above_xi, r.mean_return, r.var_alpha, r.cvar_alpha, *self.theta, self.wall_time]
        return [self.method, *[f"{v:.17g}" for v in nums]]


def ablation_header(n: int) -> list[str]:
    return ["method", "prob_above_xi", "mean_return", "var_alpha", "cvar_alpha",
            *[f"theta_{j + 1}" for j in range(n)], "wall_time_s"]


def ablation(config: PipelineConfig, grid_points: int = 10_000,
             stream: EventStream | None = None) -> list[AblationRow]:
    """Grid search, surrogate only, SQP only and the full pipeline on one stream."""
    if stream is None:
        stream = draw_event_stream(config.market)
    f = config.objective(stream)
    rows = []

    t = time.perf_counter()
    grid_seed = int(derived_rng(config.market.master_seed, GRID_KEY).integers(2**63))
    g = random_grid_search(f, grid_points, grid_seed, config.n)
    rows.append(AblationRow("grid", f.report(g.theta_hat), g.theta_hat, time.perf_counter() - t))

    t = time.perf_counter()
    anchors, y = build_dataset(config, f)
    model = fit(anchors, y, config.ridge_lambda, fit_intercept=config.fit_intercept)
    krr = sqp_minimize(model, equal_weights(config.n), config.sqp)
    rows.append(AblationRow("krr", f.report(krr.theta_hat), krr.theta_hat, time.perf_counter() - t))

    t = time.perf_counter()
    sqp = sqp_minimize(f, equal_weights(config.n), config.sqp)
    rows.append(AblationRow("sqp", f.report(sqp.theta_hat), sqp.theta_hat, time.perf_counter() - t))

    t = time.perf_counter()
    rep = run_pipeline(config, stream)
    rows.append(AblationRow("pipeline", rep.risk, rep.theta_hat, time.perf_counter() - t))
    return rows


def write_ablation_csv(rows: list[AblationRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ablation_header(len(rows[0].theta)))
        for row in rows:
            w.writerow(row.csv_cells())
