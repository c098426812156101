import sys

import numpy as np
import pytest

from amm_cvar.market import EventStream, MarketParams, draw_event_stream
from amm_cvar.pipeline import PipelineConfig
from amm_cvar.pool_engine import MultiPool


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def default_params():
    return MarketParams()


@pytest.fixture(scope="session")
def default_stream(default_params):
    return draw_event_stream(default_params)


@pytest.fixture(scope="session")
def small_params():
    return MarketParams(b_paths=200, t_horizon=20.0, master_seed=11)


@pytest.fixture(scope="session")
def small_config(small_params):
    return PipelineConfig(market=small_params)


def empty_stream(n_pools: int, b_paths: int = 5) -> EventStream:
    empty = {"types": [], "x_to_y": [], "normals": []}
    return EventStream.from_paths(n_pools, [empty] * b_paths)


def zero_fee_pools(n: int) -> MultiPool:
    return MultiPool.uniform(n, phi=0.0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
