"""CVaR-optimal liquidity allocation across constant-product AMM pools."""

from .errors import ContractError, DomainError, NumericalError, PreconditionError
from .lifecycle import (
    CvarObjective,
    ReturnDistribution,
    RiskReport,
    deploy,
    equal_weights,
    objective,
    return_distribution,
    unwind,
    var_cvar,
)
from .market import EventStream, MarketParams, PathRecord, draw_event_stream, replay, simulate
from .optimize import OptimizeResult, SqpConfig, project_simplex, random_grid_search, sqp_minimize
from .pipeline import PipelineConfig, PipelineReport, ablation, run_pipeline
from .pool_engine import MultiPool, PoolState
from .surrogate import SurrogateModel, fit, predict, r_squared

__version__ = "0.1.0"
