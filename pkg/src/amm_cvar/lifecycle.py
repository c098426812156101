"""The liquidity provider's round trip and its risk statistics.

An allocation ``theta`` on the simplex splits ``x0`` token-X across the
pools. Each slice is partly swapped to Y (the psi split) and minted; the
market is replayed; the LP coins are burned and all Y proceeds are swapped
back to X in whichever pool pays the most. The log return per path feeds
VaR/CVaR.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import _kernels
from .errors import DomainError, NumericalError
from .market import EventStream, MarketParams, check_compatible, replay
from .pool_engine import (
    MultiPool,
    burn,
    mint,
    swap_fraction_psi,
    swap_x_to_y,
    swap_y_to_x,
)

SIMPLEX_ATOL = 1e-9
ZERO_ALLOCATION = 1e-12


def as_weights(theta: Sequence[float], n: int | None = None, *, atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """Validate a simplex point and return it as a float64 vector."""
    w = np.asarray(theta, dtype=np.float64).reshape(-1)
    if n is not None and len(w) != n:
        raise DomainError(f"expected {n} weights, got {len(w)}")
    if not np.all(np.isfinite(w)):
        raise DomainError("weights must be finite")
    if np.any(w < -atol) or abs(w.sum() - 1.0) > atol:
        raise DomainError(f"weights are off the simplex: {w.tolist()}")
    return w


def equal_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def deploy(initial: MultiPool, theta: Sequence[float], x0: float) -> tuple[np.ndarray, MultiPool]:
    w = as_weights(theta, len(initial))
    if not (math.isfinite(x0) and x0 > 0):
        raise DomainError(f"x0 must be > 0, got {x0!r}")
    lp = np.zeros(len(initial))
    pools = initial
    for j, wj in enumerate(w):
        amount = wj * x0
        if amount < ZERO_ALLOCATION * x0:
            continue
        pool = pools[j]
        psi = swap_fraction_psi(pool, amount)
        y, pool = swap_x_to_y(pool, (1.0 - psi) * amount)
        lp[j], pool = mint(pool, psi * amount, y)
        pools = pools.with_pool(j, pool)
    return lp, pools


def unwind(final_pools: MultiPool, lp_coins: Sequence[float]) -> float:
    """Burn every LP position and swap the pooled Y back to X in the best-paying pool."""
    lp_coins = np.asarray(lp_coins, dtype=np.float64)
    if len(lp_coins) != len(final_pools):
        raise DomainError("one LP amount per pool required")
    states = list(final_pools)
    xbar = ybar = 0.0
    for j, l in enumerate(lp_coins):
        if l > 0:
            if l > states[j].l_total:
                raise DomainError(f"pool {j}: holding {l!r} exceeds supply {states[j].l_total!r}")
            xb, yb, states[j] = burn(states[j], l)
            if states[j] is None:
                raise DomainError(f"pool {j} would be fully drained by the LP's burn")
            xbar += xb
            ybar += yb
    if ybar == 0.0:
        return xbar
    outs = [swap_y_to_x(s, ybar)[0] for s in states]
    return xbar + outs[int(np.argmax(outs))]


@dataclass(frozen=True, eq=False)
class ReturnDistribution:
    returns: np.ndarray
    x0: float

    def __post_init__(self) -> None:
        r = np.asarray(self.returns, dtype=np.float64)
        if r.ndim != 1 or len(r) == 0:
            raise DomainError("returns must be a non-empty vector")
        if not np.all(np.isfinite(r)):
            raise NumericalError("non-finite log return")
        object.__setattr__(self, "returns", r)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r_T"])
            w.writerows([[f"{v:.17g}"] for v in self.returns])

    @classmethod
    def from_csv(cls, path: str | Path, x0: float) -> ReturnDistribution:
        with open(path) as fh:
            rows = list(csv.reader(fh))[1:]
        return cls(np.array([float(r[0]) for r in rows]), x0)


@dataclass(frozen=True)
class RiskReport:
    var_alpha: float
    cvar_alpha: float
    prob_above_xi: float
    mean_return: float
    alpha: float
    xi: float

    def as_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in asdict(self).items()}

    def to_yaml(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.as_dict(), sort_keys=False))

    @classmethod
    def from_yaml(cls, path: str | Path) -> RiskReport:
        return cls(**yaml.safe_load(Path(path).read_text()))


def tail_size(alpha: float, b: int) -> int:
    """ceil((1 - alpha) * b), guarded against float noise such as (1 - 0.85) * 100 = 15.000000000000002."""
    return math.ceil(round((1.0 - alpha) * b, 9))


def var_cvar(dist: ReturnDistribution, alpha: float, xi: float = 0.05) -> RiskReport:
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    r = dist.returns
    b = len(r)
    m = tail_size(alpha, b)
    if m < 1:
        raise DomainError(f"tail is empty for alpha={alpha} and B={b}")
    worst = np.sort(-r)[::-1][:m]
    return RiskReport(
        var_alpha=float(worst[-1]),
        cvar_alpha=float(worst.mean()),
        prob_above_xi=float(np.count_nonzero(r > xi)) / b,
        mean_return=float(r.mean()),
        alpha=float(alpha),
        xi=float(xi),
    )


def return_distribution(
    initial: MultiPool, theta: Sequence[float], x0: float, stream: EventStream, params: MarketParams,
) -> ReturnDistribution:
    check_compatible(stream, params)
    lp, deployed = deploy(initial, theta, x0)
    rx0, ry0, l_total, phi = deployed.arrays()
    sigma_all, sigma = params.sigma_arrays()
    r = _kernels.lp_log_returns(
        rx0, ry0, l_total, phi, lp, float(x0), stream.offsets, stream.types, stream.x_to_y,
        stream.normals, stream.normal_offsets, sigma_all, sigma)
    return ReturnDistribution(r, float(x0))


def return_distribution_reference(
    initial: MultiPool, theta: Sequence[float], x0: float, stream: EventStream, params: MarketParams,
) -> ReturnDistribution:
    """Slow path: recorded replay plus the pure-Python :func:`unwind`, path by path."""
    lp, deployed = deploy(initial, theta, x0)
    record = replay(deployed, stream, params)
    r = [math.log(unwind(record.final_pools(k), lp) / x0) for k in range(record.b_paths)]
    return ReturnDistribution(np.array(r), float(x0))


class CvarObjective:
    """CVaR of the LP return as a deterministic function of the allocation.

    Every call replays the same cached stream (common random numbers), so
    two calls with the same ``theta`` agree to the last bit.
    """

    def __init__(self, initial: MultiPool, x0: float, stream: EventStream, params: MarketParams,
                 alpha: float = 0.9, xi: float = 0.05):
        check_compatible(stream, params)
        self.initial = initial
        self.x0 = float(x0)
        self.stream = stream
        self.params = params
        self.alpha = float(alpha)
        self.xi = float(xi)
        self.n_evals = 0

    @property
    def n(self) -> int:
        return len(self.initial)

    def distribution(self, theta: Sequence[float]) -> ReturnDistribution:
        self.n_evals += 1
        return return_distribution(self.initial, theta, self.x0, self.stream, self.params)

    def report(self, theta: Sequence[float]) -> RiskReport:
        return var_cvar(self.distribution(theta), self.alpha, self.xi)

    def __call__(self, theta: Sequence[float]) -> float:
        return self.report(theta).cvar_alpha


def objective(theta: Sequence[float], initial: MultiPool, x0: float, stream: EventStream,
              params: MarketParams, alpha: float = 0.9) -> float:
    return var_cvar(return_distribution(initial, theta, x0, stream, params), alpha).cvar_alpha
