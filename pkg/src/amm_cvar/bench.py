"""Method dispatch, benchmark rows and parameter sweeps."""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import blanco_optimize, elagnitram_optimize, finatics_optimize
from .config import RunConfig
from .lifecycle import RiskReport, equal_weights
from .market import draw_event_stream
from .optimize import random_grid_search, sqp_minimize
from .pipeline import GRID_KEY, build_dataset, derived_rng, run_pipeline
from .surrogate import fit

SWEEP_AXES = ("seed", "t_horizon", "alpha", "sigma")


@dataclass(frozen=True)
class RunOutcome:
    method: str
    seed: int
    theta: np.ndarray
    risk: RiskReport
    converged: bool
    wall_time: float
    details: dict


def run_method(cfg: RunConfig, method: str, seed: int) -> RunOutcome:
    """Run one method for one seed; the risk report is always computed on the
    seed's own cached stream so every method is scored on the same market."""
    problem = cfg.for_seed(seed)
    t = time.perf_counter()
    stream = draw_event_stream(problem.market)
    f = problem.objective(stream)
    details: dict = {}
    if method == "pipeline":
        rep = run_pipeline(problem, stream)
        theta, converged = rep.theta_hat, rep.converged
        details = rep.as_dict(timings=False)
    elif method == "krr":
        anchors, y = build_dataset(problem, f)
        model = fit(anchors, y, problem.ridge_lambda, fit_intercept=problem.fit_intercept)
        res = sqp_minimize(model, equal_weights(problem.n), problem.sqp)
        theta, converged = res.theta_hat, res.converged
    elif method == "sqp":
        res = sqp_minimize(f, equal_weights(problem.n), problem.sqp)
        theta, converged = res.theta_hat, res.converged
        details = {"iterations": res.iterations, "message": res.message}
    elif method == "grid":
        grid_seed = int(derived_rng(seed, GRID_KEY).integers(2**63))
        res = random_grid_search(f, cfg.grid_points, grid_seed, problem.n)
        theta, converged = res.theta_hat, True
    elif method in ("finatics", "blanco", "elagnitram"):
        if method == "finatics":
            res = finatics_optimize(cfg.finatics, problem, stream=stream)
        elif method == "blanco":
            res = blanco_optimize(cfg.blanco, problem, stream=stream)
        else:
            res = elagnitram_optimize(cfg.elagnitram, problem, stream=stream)
        theta, converged = res.theta_hat, res.converged
        details = {"iterations": res.iterations, "message": res.message,
                   **{k: v for k, v in res.info.items() if k != "raw_theta"}}
    else:
        raise ValueError(f"unknown method {method!r}")
    risk = f.report(theta)
    wall = time.perf_counter() - t
    return RunOutcome(method, seed, np.asarray(theta, dtype=float), risk, bool(converged), wall, details)


# -------------------------------------------------------------- benchmark rows

def row_header(n: int) -> list[str]:
    return ["method", "axis", "value", "seed", "status", "cvar_alpha", "var_alpha", "mean_return",
            "prob_above_xi", *[f"theta_{j + 1}" for j in range(n)]]


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def outcome_cells(o: RunOutcome, axis: str, value) -> list[str]:
    r = o.risk
    return [o.method, axis, str(value), str(o.seed), "converged" if o.converged else "not_converged",
            *[_fmt(x) for x in (r.cvar_alpha, r.var_alpha, r.mean_return, r.prob_above_xi)],
            *[_fmt(t) for t in o.theta]]


def failure_cells(method: str, axis: str, value, seed: int, n: int, exc: Exception) -> list[str]:
    return [method, axis, str(value), str(seed), f"error: {type(exc).__name__}: {exc}",
            *[""] * (4 + n)]


def apply_axis(cfg: RunConfig, axis: str, value, sigma_index: int | None = None) -> RunConfig:
    p = cfg.problem
    if axis == "seed":
        return cfg.with_(seeds=(int(value),))
    if axis == "t_horizon":
        return cfg.with_(problem=p.with_(market=p.market.with_(t_horizon=float(value))))
    if axis == "alpha":
        return cfg.with_(problem=p.with_(alpha=float(value)))
    if axis == "sigma":
        if sigma_index is None or not (0 <= sigma_index < len(p.market.sigma)):
            raise ValueError("the sigma axis needs a valid --sigma-index")
        sigma = list(p.market.sigma)
        sigma[sigma_index] = float(value)
        return cfg.with_(problem=p.with_(market=p.market.with_(sigma=tuple(sigma))))
    raise ValueError(f"axis must be one of {SWEEP_AXES}")


def _task(args):
    cfg, method, seed = args
    try:
        return run_method(cfg, method, seed), None
    except Exception as exc:  # recorded as a failed row; the sweep continues
        return None, exc


def sweep(cfg: RunConfig, axis: str, values, methods, sigma_index: int | None = None,
          workers: int = 1) -> list[tuple[str, object, int, RunOutcome | None, Exception | None]]:
    """One run per (method, value, seed), returned sorted by (method, value, seed)."""
    jobs = []
    for method in methods:
        for value in values:
            vcfg = apply_axis(cfg, axis, value, sigma_index)
            for seed in vcfg.seeds:
                jobs.append((method, value, seed, vcfg))
    args = [(vcfg, method, seed) for method, value, seed, vcfg in jobs]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_task, args))
    else:
        results = [_task(a) for a in args]
    out = [(m, v, s, o, e) for (m, v, s, _), (o, e) in zip(jobs, results)]
    order = {m: i for i, m in enumerate(methods)}
    out.sort(key=lambda r: (order[r[0]], float(r[1]), r[2]))
    return out


def aggregate(results) -> list[dict]:
    """Mean and standard deviation of CVaR and P[r_T > xi] per (method, value)."""
    groups: dict[tuple[str, object], list[RunOutcome]] = {}
    for method, value, _, o, _ in results:
        groups.setdefault((method, value), [])
        if o is not None:
            groups[(method, value)].append(o)
    rows = []
    for (method, value), outs in groups.items():
        cv = np.array([o.risk.cvar_alpha for o in outs])
        pr = np.array([o.risk.prob_above_xi for o in outs])
        th = np.array([o.theta for o in outs]) if outs else np.zeros((0, 0))
        rows.append({
            "method": method, "value": value, "runs": len(outs),
            "cvar_mean": float(cv.mean()) if outs else float("nan"),
            "cvar_std": float(cv.std(ddof=1)) if len(outs) > 1 else 0.0,
            "prob_mean": float(pr.mean()) if outs else float("nan"),
            "prob_std": float(pr.std(ddof=1)) if len(outs) > 1 else 0.0,
            "theta_mean": th.mean(axis=0).tolist() if outs else [],
        })
    return rows


def write_rows(path: str | Path, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_timings(path: str | Path, outcomes: list[RunOutcome], hardware: str) -> None:
    write_rows(path, ["method", "seed", "wall_time_s", "hardware"],
               [[o.method, str(o.seed), _fmt(o.wall_time), hardware] for o in outcomes])
