"""Run configuration: one YAML file, hierarchical keys, validated into dataclasses."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .baselines import BlancoConfig, ElagnitramConfig, FinaticsConfig
from .market import MarketParams
from .optimize import SqpConfig
from .pipeline import PipelineConfig
from .pool_engine import DEFAULT_FEE, MultiPool

METHODS = ("pipeline", "krr", "sqp", "grid", "finatics", "blanco", "elagnitram")


class ConfigError(ValueError):
    """A configuration problem, tagged with the offending dotted field name."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class RunConfig:
    problem: PipelineConfig = field(default_factory=PipelineConfig)
    method: str = "pipeline"
    seeds: tuple[int, ...] = (MarketParams().master_seed,)
    grid_points: int = 10_000
    blanco: BlancoConfig = field(default_factory=BlancoConfig)
    finatics: FinaticsConfig = field(default_factory=FinaticsConfig)
    elagnitram: ElagnitramConfig = field(default_factory=ElagnitramConfig)
    output_dir: str = "out"
    hardware: str = ""
    workers: int = 1

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigError("method", f"must be one of {', '.join(METHODS)}; got {self.method!r}")
        if not self.seeds:
            raise ConfigError("seeds", "seed list must be non-empty")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.grid_points < 1:
            raise ConfigError("grid_points", "must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")

    def with_(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)

    def for_seed(self, seed: int) -> PipelineConfig:
        return self.problem.with_(market=self.problem.market.with_(master_seed=int(seed)))


# ------------------------------------------------------------------ to YAML

def _plain(obj):
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    return obj


def to_dict(cfg: RunConfig) -> dict:
    p = cfg.problem
    rx, ry, l_total, phi = p.initial_pools.arrays()
    return {
        "market": {k: _plain(v) for k, v in dataclasses.asdict(p.market).items()},
        "pools": {"rx": rx.tolist(), "ry": ry.tolist(), "l_total": l_total.tolist(), "phi": phi.tolist()},
        "x0": p.x0,
        "alpha": p.alpha,
        "xi": p.xi,
        "q": p.q,
        "n_train": p.n_train,
        "ridge_lambda": p.ridge_lambda,
        "fit_intercept": p.fit_intercept,
        "sqp": dataclasses.asdict(p.sqp),
        "method": cfg.method,
        "seeds": list(cfg.seeds),
        "grid_points": cfg.grid_points,
        "baselines": {
            "blanco": {k: _plain(v) for k, v in dataclasses.asdict(cfg.blanco).items()},
            "finatics": dataclasses.asdict(cfg.finatics),
            "elagnitram": dataclasses.asdict(cfg.elagnitram),
        },
        "output": {"dir": cfg.output_dir},
        "hardware": cfg.hardware,
        "workers": cfg.workers,
    }


def dump(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


# ---------------------------------------------------------------- from YAML

_TOP_KEYS = {"market", "pools", "x0", "alpha", "xi", "q", "n_train", "ridge_lambda", "fit_intercept",
             "sqp", "method", "seeds", "grid_points", "baselines", "output", "hardware", "workers"}


def _section(doc: dict, name: str, required: tuple[str, ...], allowed: set[str]) -> dict:
    sec = doc.get(name, {})
    if sec is None:
        sec = {}
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be a mapping")
    for key in sec:
        if key not in allowed:
            raise ConfigError(f"{name}.{key}", "unknown field")
    for key in required:
        if key not in sec:
            raise ConfigError(f"{name}.{key}", "missing required field")
    return sec


def _build(prefix: str, cls, kwargs: dict):
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix, str(exc)) from exc


def _pools(sec: dict, n: int) -> MultiPool:
    defaults = {"rx": 100.0, "ry": 100.0, "l_total": 100.0, "phi": DEFAULT_FEE}
    cols = {}
    for key, default in defaults.items():
        v = sec.get(key, default)
        v = [v] * n if isinstance(v, (int, float)) else list(v)
        if len(v) != n:
            raise ConfigError(f"pools.{key}", f"expected {n} values (one per pool), got {len(v)}")
        cols[key] = v
    try:
        return MultiPool.from_arrays(cols["rx"], cols["ry"], cols["l_total"], cols["phi"])
    except ValueError as exc:
        raise ConfigError("pools", str(exc)) from exc


def from_dict(doc: dict | None) -> RunConfig:
    doc = doc or {}
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a mapping")
    for key in doc:
        if key not in _TOP_KEYS:
            raise ConfigError(key, "unknown field")
    market_fields = {f.name for f in dataclasses.fields(MarketParams)}
    m = _section(doc, "market", ("kappa", "p", "sigma"), market_fields) if "market" in doc else {}
    market = _build("market", MarketParams, m)
    pools = _pools(_section(doc, "pools", (), {"rx", "ry", "l_total", "phi"}), market.n_pools)
    sqp = _build("sqp", SqpConfig, _section(doc, "sqp", (), {f.name for f in dataclasses.fields(SqpConfig)}))
    b = _section(doc, "baselines", (), {"blanco", "finatics", "elagnitram"})
    sub = {}
    for name, cls in (("blanco", BlancoConfig), ("finatics", FinaticsConfig), ("elagnitram", ElagnitramConfig)):
        sec = _section(b, name, (), {f.name for f in dataclasses.fields(cls)})
        if name == "blanco" and sec.get("omega") is not None:
            sec = {**sec, "omega": tuple(sec["omega"])}
        sub[name] = _build(f"baselines.{name}", cls, sec)
    out = _section(doc, "output", (), {"dir"})
    scalars = {k: doc[k] for k in ("x0", "alpha", "xi", "q", "n_train", "ridge_lambda", "fit_intercept")
               if k in doc}
    problem = _build("problem", PipelineConfig, {"market": market, "initial_pools": pools, "sqp": sqp,
                                                 "workers": int(doc.get("workers", 1)), **scalars})
    seeds = doc.get("seeds", [market.master_seed])
    if not isinstance(seeds, list):
        seeds = [seeds]
    return RunConfig(problem=problem, method=doc.get("method", "pipeline"), seeds=tuple(seeds),
                     grid_points=int(doc.get("grid_points", 10_000)), output_dir=str(out.get("dir", "out")),
                     hardware=str(doc.get("hardware", "")), workers=int(doc.get("workers", 1)), **sub)


def load(path: str | Path) -> RunConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else "<yaml>"
        raise ConfigError(where, f"malformed YAML ({getattr(exc, 'problem', exc)})") from exc
    return from_dict(doc)
