"""Constant-product pool arithmetic.

Every operation is a pure function of an immutable :class:`PoolState` and
returns the new state alongside its output. Quantities are float64; there is
no integer token arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, PreconditionError

DEFAULT_FEE = 0.003
MINT_RATIO_RTOL = 1e-9


def _check_amount(name: str, value: float, *, strict: bool = False) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value!r}")
    if value < 0 or (strict and value == 0):
        bound = "> 0" if strict else ">= 0"
        raise DomainError(f"{name} must be {bound}, got {value!r}")
    return value


@dataclass(frozen=True)
class PoolState:
    rx: float
    ry: float
    l_total: float
    phi: float = DEFAULT_FEE

    def __post_init__(self) -> None:
        for name in ("rx", "ry", "l_total"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"pool {name} must be finite and > 0, got {v!r}")
        if not (0.0 <= self.phi < 1.0):
            raise DomainError(f"pool fee must lie in [0, 1), got {self.phi!r}")

    @property
    def product(self) -> float:
        return self.rx * self.ry


def swap_x_to_y(pool: PoolState, x: float) -> tuple[float, PoolState]:
    """Sell ``x`` token-X into the pool; the whole ``x`` (fee included) lands in R^X.

    The drained reserve is computed as ``R^Y R^X / (R^X + (1 - phi) x)``, which
    equals ``R^Y - y`` but cannot round to zero when ``x`` dwarfs the pool.
    """
    x = _check_amount("x", x)
    if x == 0.0:
        return 0.0, pool
    g = 1.0 - pool.phi
    den = pool.rx + g * x
    y = x * g * pool.ry / den
    return y, replace(pool, rx=pool.rx + x, ry=pool.ry * pool.rx / den)


def swap_y_to_x(pool: PoolState, y: float) -> tuple[float, PoolState]:
    """Mirror of :func:`swap_x_to_y`; the fee stays in R^Y."""
    y = _check_amount("y", y)
    if y == 0.0:
        return 0.0, pool
    g = 1.0 - pool.phi
    den = pool.ry + g * y
    x = y * g * pool.rx / den
    return x, replace(pool, rx=pool.rx * pool.ry / den, ry=pool.ry + y)


def marginal_price(pool: PoolState) -> float:
    """Token-X paid per token-Y at the margin."""
    return pool.rx / pool.ry


def mint(pool: PoolState, x: float, y: float) -> tuple[float, PoolState]:
    x = _check_amount("x", x, strict=True)
    y = _check_amount("y", y, strict=True)
    target = pool.rx / pool.ry
    if abs(x / y - target) > MINT_RATIO_RTOL * target:
        raise PreconditionError(
            f"mint ratio x/y={x / y!r} does not match reserve ratio {target!r}"
        )
    lp = pool.l_total * x / pool.rx
    return lp, replace(pool, rx=pool.rx + x, ry=pool.ry + y, l_total=pool.l_total + lp)


def burn(pool: PoolState, lp: float) -> tuple[float, float, PoolState | None]:
    """Redeem ``lp`` LP coins pro rata; burning the whole supply drains the pool (state ``None``)."""
    lp = _check_amount("l", lp)
    if lp > pool.l_total:
        raise DomainError(f"cannot burn {lp!r} LP coins out of {pool.l_total!r}")
    if lp == 0.0:
        return 0.0, 0.0, pool
    share = lp / pool.l_total
    x = share * pool.rx
    y = share * pool.ry
    if lp == pool.l_total:
        return pool.rx, pool.ry, None
    return x, y, replace(pool, rx=pool.rx - x, ry=pool.ry - y, l_total=pool.l_total - lp)


def swap_fraction_psi(pool: PoolState, x: float) -> float:
    """Fraction of an X-only endowment to keep so the rest, swapped to Y, mints cleanly.

    Positive root of ``g s^2 + (2 - phi) R^X s - x R^X = 0`` in the swapped
    amount ``s = (1 - psi) x``; ``1 - sqrt(1 + u)`` is rewritten as
    ``-u / (1 + sqrt(1 + u))`` to avoid cancellation for small ``x / R^X``.
    """
    x = _check_amount("x", x, strict=True)
    g = 1.0 - pool.phi
    a = 2.0 - pool.phi
    u = 4.0 * x * g / (pool.rx * a * a)
    return 1.0 - a * pool.rx / (2.0 * g * x) * u / (1.0 + math.sqrt(1.0 + u))


@dataclass(frozen=True)
class MultiPool:
    pools: tuple[PoolState, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "pools", tuple(self.pools))
        if not self.pools:
            raise DomainError("MultiPool needs at least one pool")

    def __len__(self) -> int:
        return len(self.pools)

    def __getitem__(self, j: int) -> PoolState:
        return self.pools[j]

    def __iter__(self):
        return iter(self.pools)

    @classmethod
    def uniform(
        cls, n: int, rx: float = 100.0, ry: float = 100.0, l_total: float = 100.0,
        phi: float = DEFAULT_FEE,
    ) -> MultiPool:
        return cls(tuple(PoolState(rx, ry, l_total, phi) for _ in range(n)))

    @classmethod
    def from_arrays(
        cls, rx: Iterable[float], ry: Iterable[float], l_total: Iterable[float],
        phi: Iterable[float],
    ) -> MultiPool:
        return cls(tuple(
            PoolState(float(a), float(b), float(c), float(d))
            for a, b, c, d in zip(rx, ry, l_total, phi, strict=True)
        ))

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(rx, ry, l_total, phi) as float64 vectors."""
        cols = np.array([(p.rx, p.ry, p.l_total, p.phi) for p in self.pools], dtype=np.float64)
        return cols[:, 0].copy(), cols[:, 1].copy(), cols[:, 2].copy(), cols[:, 3].copy()

    def with_pool(self, j: int, pool: PoolState) -> MultiPool:
        pools = list(self.pools)
        pools[j] = pool
        return MultiPool(tuple(pools))

    def prices(self) -> np.ndarray:
        return np.array([marginal_price(p) for p in self.pools])


def swap_all_x_to_y(pools: MultiPool, volumes: Sequence[float]) -> tuple[np.ndarray, MultiPool]:
    """Apply one X->Y swap per pool (zero volumes leave a pool untouched)."""
    out = np.zeros(len(pools))
    new = list(pools.pools)
    for j, v in enumerate(volumes):
        out[j], new[j] = swap_x_to_y(new[j], v)
    return out, MultiPool(tuple(new))


def swap_all_y_to_x(pools: MultiPool, volumes: Sequence[float]) -> tuple[np.ndarray, MultiPool]:
    out = np.zeros(len(pools))
    new = list(pools.pools)
    for j, v in enumerate(volumes):
        out[j], new[j] = swap_y_to_x(new[j], v)
    return out, MultiPool(tuple(new))
