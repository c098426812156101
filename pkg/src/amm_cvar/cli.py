"""``amm-cvar`` command line: optimize, sweep, simulate, ablate, config dump.

Exit status: 0 when every run converged, 2 when some run did not, 1 on error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import bench
from .config import METHODS, ConfigError, RunConfig, dump, load, to_dict
from .errors import ContractError, DomainError, NumericalError, PreconditionError
from .market import draw_event_stream, replay
from .pipeline import ablation, ablation_header
from .pool_engine import marginal_price

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--seed", type=int, action="append", dest="seeds",
                   help="master seed (repeatable; overrides the config's seed list)")
    p.add_argument("--seeds", type=int, nargs="+", dest="seed_list", help="several master seeds")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--workers", type=int)
    p.add_argument("--grid-points", type=int)
    p.add_argument("--t-horizon", type=float)
    p.add_argument("--alpha", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amm-cvar", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="run one method per seed and write reports")
    _common(p)

    p = sub.add_parser("sweep", help="run methods across a parameter axis")
    _common(p)
    p.add_argument("--axis", choices=bench.SWEEP_AXES, required=True)
    p.add_argument("--values", type=float, nargs="+", help="axis values (seed axis: integers)")
    p.add_argument("--sigma-index", type=int, help="entry of sigma to vary on the sigma axis")
    p.add_argument("--methods", nargs="+", choices=METHODS)

    p = sub.add_parser("simulate", help="dump per-event pool trajectories")
    _common(p)
    p.add_argument("--paths", type=int, help="number of paths to simulate (default: market.b_paths)")

    p = sub.add_parser("ablate", help="grid / krr / sqp / pipeline on one stream")
    _common(p)

    p = sub.add_parser("config", help="configuration utilities")
    csub = p.add_subparsers(dest="config_command", required=True)
    d = csub.add_parser("dump", help="print the effective configuration")
    _common(d)
    return parser


def effective_config(args) -> RunConfig:
    cfg = load(args.config) if args.config else RunConfig()
    if args.method:
        cfg = cfg.with_(method=args.method)
    seeds = (args.seeds or []) + (args.seed_list or [])
    if seeds:
        cfg = cfg.with_(seeds=tuple(seeds))
    if args.out is not None:
        cfg = cfg.with_(output_dir=str(args.out))
    if args.workers is not None:
        cfg = cfg.with_(workers=args.workers)
    if args.grid_points is not None:
        cfg = cfg.with_(grid_points=args.grid_points)
    p = cfg.problem
    if args.t_horizon is not None:
        p = p.with_(market=p.market.with_(t_horizon=args.t_horizon))
    if args.alpha is not None:
        p = p.with_(alpha=args.alpha)
    if getattr(args, "paths", None) is not None:
        p = p.with_(market=p.market.with_(b_paths=args.paths))
    return cfg.with_(problem=p)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump(cfg))
    return out


def cmd_optimize(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    n = cfg.problem.n
    rows, outcomes = [], []
    for seed in cfg.seeds:
        o = bench.run_method(cfg, cfg.method, seed)
        outcomes.append(o)
        rows.append(bench.outcome_cells(o, "seed", seed))
        report = {
            "config": to_dict(cfg), "method": o.method, "seed": seed, "converged": o.converged,
            "theta_hat": o.theta.tolist(), "risk": o.risk.as_dict(), "details": o.details,
        }
        (out / f"report_{o.method}_{seed}.yaml").write_text(yaml.safe_dump(report, sort_keys=False))
        print(f"{o.method} seed={seed} cvar={o.risk.cvar_alpha:.6g} P={o.risk.prob_above_xi:.4f} "
              f"converged={o.converged} theta={np.round(o.theta, 4).tolist()}")
    bench.write_rows(out / "summary.csv", bench.row_header(n), rows)
    bench.write_timings(out / "timings.csv", outcomes, cfg.hardware)
    return EXIT_OK if all(o.converged for o in outcomes) else EXIT_NOT_CONVERGED


def cmd_sweep(cfg: RunConfig, args) -> int:
    if args.axis == "seed":
        values = [int(v) for v in (args.values or cfg.seeds)]
    elif args.values:
        values = args.values
    else:
        raise ConfigError("--values", f"required for the {args.axis} axis")
    methods = args.methods or [cfg.method]
    out = _out_dir(cfg)
    results = bench.sweep(cfg, args.axis, values, methods, args.sigma_index, cfg.workers)
    n = cfg.problem.n
    rows = [bench.outcome_cells(o, args.axis, v) if o is not None
            else bench.failure_cells(m, args.axis, v, s, n, e) for m, v, s, o, e in results]
    bench.write_rows(out / "sweep.csv", bench.row_header(n), rows)
    agg = bench.aggregate(results)
    bench.write_rows(out / "aggregate.csv",
                     ["method", "value", "runs", "cvar_mean", "cvar_std", "prob_mean", "prob_std"],
                     [[a["method"], str(a["value"]), str(a["runs"]),
                       *[f"{a[k]:.17g}" for k in ("cvar_mean", "cvar_std", "prob_mean", "prob_std")]]
                      for a in agg])
    outcomes = [o for *_, o, _ in results if o is not None]
    bench.write_timings(out / "timings.csv", outcomes, cfg.hardware)
    for a in agg:
        print(f"{a['method']} {args.axis}={a['value']}: CVaR {a['cvar_mean']:.6g} ± {a['cvar_std']:.2g}, "
              f"P {a['prob_mean']:.4f} ({a['runs']} runs)")
    if any(e is not None for *_, e in results):
        return EXIT_ERROR
    return EXIT_OK if all(o.converged for o in outcomes) else EXIT_NOT_CONVERGED


def cmd_simulate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    p = cfg.problem
    n = p.n
    header = ["path", "event", "type", "x_to_y"]
    for j in range(n):
        header += [f"rx_{j + 1}", f"ry_{j + 1}", f"price_{j + 1}"]
    rows = []
    for seed in cfg.seeds:
        market = p.market.with_(master_seed=seed)
        stream = draw_event_stream(market)
        stream.save(out / f"stream_{seed}.npz")
        record = replay(p.initial_pools, stream, market)
        init = [c for pool in p.initial_pools for c in (pool.rx, pool.ry, marginal_price(pool))]
        for k in range(record.b_paths):
            rows.append([str(k), "0", "", "", *[f"{v:.17g}" for v in init]])
            tr = record.path(k)
            ev = stream.path(k)
            for m in range(len(ev["types"])):
                rx, ry = tr["rx"][m], tr["ry"][m]
                cells = []
                for j in range(n):
                    cells += [f"{rx[j]:.17g}", f"{ry[j]:.17g}", f"{rx[j] / ry[j]:.17g}"]
                rows.append([str(k), str(m + 1), str(int(ev["types"][m])),
                             str(int(ev["x_to_y"][m])), *cells])
        bench.write_rows(out / f"trajectories_{seed}.csv", header, rows)
        rows = []
        print(f"seed={seed}: {record.b_paths} paths, {stream.n_events} events -> "
              f"{out / f'trajectories_{seed}.csv'}")
    return EXIT_OK


def cmd_ablate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    rows = []
    for seed in cfg.seeds:
        for r in ablation(cfg.for_seed(seed), cfg.grid_points):
            cells = r.csv_cells()
            rows.append([cells[0], str(seed), *cells[1:-1]])
            print(f"seed={seed} {r.method}: CVaR {r.risk.cvar_alpha:.6g} P {r.risk.prob_above_xi:.4f}")
    header = ablation_header(cfg.problem.n)[:-1]
    bench.write_rows(out / "ablation.csv", [header[0], "seed", *header[1:]], rows)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
        if args.command == "config":
            sys.stdout.write(dump(cfg))
            return EXIT_OK
        if args.command == "optimize":
            return cmd_optimize(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg, args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        return cmd_ablate(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except (DomainError, PreconditionError, ContractError, NumericalError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
