"""Poisson order-flow simulator for a set of independent constant-product pools.

Randomness is split in two. :func:`draw_event_stream` produces everything
that does not depend on pool state (event counts, types, directions and the
standard-normal deviates behind the volumes). :func:`replay` then walks the
events against a concrete initial state, applying the state-dependent drift.
A stream drawn once can be replayed against any number of initial states,
which is what makes the CVaR objective deterministic in the allocation.

PRNG: numpy ``PCG64``; path ``k`` draws from
``SeedSequence(master_seed, spawn_key=(k,))`` so paths are independent of
generation order. Within a path the draw order is: event count, all event
types, all direction uniforms, all normal deviates.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import ContractError, DomainError
from .pool_engine import MultiPool

PRNG_NAME = "numpy.PCG64/SeedSequence(master_seed, spawn_key=(path,))"
STREAM_FORMAT_VERSION = 1

DEFAULT_KAPPA = (0.25, 0.5, 0.5, 0.45, 0.45, 0.4, 0.3)
DEFAULT_P = (0.45, 0.45, 0.4, 0.38, 0.36, 0.34, 0.3)
DEFAULT_SIGMA = (1.0, 0.3, 0.5, 1.0, 1.25, 2.0, 4.0)
DEFAULT_T = 60.0
DEFAULT_B = 1000
DEFAULT_SEED = 4294967143

ALLPOOL_SIGMA_MODES = ("common", "per_pool")


@dataclass(frozen=True)
class MarketParams:
    kappa: tuple[float, ...] = DEFAULT_KAPPA
    p: tuple[float, ...] = DEFAULT_P
    sigma: tuple[float, ...] = DEFAULT_SIGMA
    t_horizon: float = DEFAULT_T
    b_paths: int = DEFAULT_B
    master_seed: int = DEFAULT_SEED
    allpool_sigma: str = "common"

    def __post_init__(self) -> None:
        for name in ("kappa", "p", "sigma"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        k, p, s = np.array(self.kappa), np.array(self.p), np.array(self.sigma)
        if not (len(k) == len(p) == len(s)) or len(k) < 2:
            raise DomainError(
                f"kappa, p, sigma must share a length n+1 >= 2; got {len(k)}, {len(p)}, {len(s)}"
            )
        if not np.all(np.isfinite(k)) or np.any(k < 0) or k.sum() <= 0:
            raise DomainError("kappa must be non-negative with a positive sum")
        if not np.all(np.isfinite(p)) or np.any((p < 0) | (p > 1)):
            raise DomainError("p must lie in [0, 1]")
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise DomainError("sigma must be > 0")
        if not (np.isfinite(self.t_horizon) and self.t_horizon > 0):
            raise DomainError("t_horizon must be > 0")
        if int(self.b_paths) != self.b_paths or self.b_paths < 1:
            raise DomainError("b_paths must be a positive integer")
        object.__setattr__(self, "b_paths", int(self.b_paths))
        if not (0 <= int(self.master_seed) < 2**64):
            raise DomainError("master_seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "master_seed", int(self.master_seed))
        if self.allpool_sigma not in ALLPOOL_SIGMA_MODES:
            raise DomainError(f"allpool_sigma must be one of {ALLPOOL_SIGMA_MODES}")

    @property
    def n_pools(self) -> int:
        return len(self.kappa) - 1

    @property
    def total_rate(self) -> float:
        return float(sum(self.kappa))

    def sigma_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(per-pool sigma used by all-pools events, full sigma vector)."""
        sigma = np.array(self.sigma)
        if self.allpool_sigma == "common":
            sigma_all = np.full(self.n_pools, sigma[0])
        else:
            sigma_all = sigma[1:].copy()
        return sigma_all, sigma

    def stream_hash(self) -> str:
        """Digest of every parameter the event stream depends on (sigma is not one)."""
        payload = json.dumps({
            "version": STREAM_FORMAT_VERSION, "prng": PRNG_NAME,
            "kappa": list(self.kappa), "p": list(self.p),
            "t_horizon": float(self.t_horizon), "b_paths": self.b_paths,
            "master_seed": self.master_seed,
        }, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    def with_(self, **changes) -> MarketParams:
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class EventStream:
    """State-independent randomness of ``b_paths`` paths, stored flat.

    Event ``m`` of path ``k`` lives at flat index ``offsets[k] + m``; its
    normal deviates are ``normals[normal_offsets[i]:normal_offsets[i + 1]]``
    (``n_pools`` of them for an all-pools event, one otherwise).
    """

    n_pools: int
    counts: np.ndarray
    types: np.ndarray
    x_to_y: np.ndarray
    normals: np.ndarray
    master_seed: int
    params_hash: str
    offsets: np.ndarray = field(init=False, repr=False)
    normal_offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        types = np.ascontiguousarray(self.types, dtype=np.int64)
        x_to_y = np.ascontiguousarray(self.x_to_y, dtype=np.bool_)
        normals = np.ascontiguousarray(self.normals, dtype=np.float64)
        offsets = np.zeros(len(counts) + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        if not (len(types) == len(x_to_y) == offsets[-1]):
            raise ContractError("event arrays disagree with per-path counts")
        if len(types) and (types.min() < 0 or types.max() > self.n_pools):
            raise ContractError("event type out of range")
        per_event = np.where(types == 0, self.n_pools, 1)
        noff = np.zeros(len(types) + 1, dtype=np.int64)
        np.cumsum(per_event, out=noff[1:])
        if noff[-1] != len(normals):
            raise ContractError("normal deviates disagree with event types")
        for name, arr in (("counts", counts), ("types", types), ("x_to_y", x_to_y),
                          ("normals", normals), ("offsets", offsets), ("normal_offsets", noff)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def b_paths(self) -> int:
        return len(self.counts)

    @property
    def n_events(self) -> int:
        return int(self.offsets[-1])

    def path(self, k: int) -> dict[str, np.ndarray]:
        a, b = self.offsets[k], self.offsets[k + 1]
        return {
            "types": self.types[a:b],
            "x_to_y": self.x_to_y[a:b],
            "normals": self.normals[self.normal_offsets[a]:self.normal_offsets[b]],
        }

    @classmethod
    def from_paths(
        cls, n_pools: int, paths: Sequence[dict], *, master_seed: int = 0, params_hash: str = "",
    ) -> EventStream:
        """Assemble a stream from per-path dicts with keys types, x_to_y, normals."""
        counts = [len(p["types"]) for p in paths]
        cat = lambda key, dt: (np.concatenate([np.asarray(p[key], dtype=dt) for p in paths])
                               if paths else np.zeros(0, dtype=dt))
        return cls(n_pools, np.array(counts, dtype=np.int64), cat("types", np.int64),
                   cat("x_to_y", np.bool_), cat("normals", np.float64), master_seed, params_hash)

    def take(self, order: Sequence[int]) -> EventStream:
        """Same stream with paths reordered (or subset)."""
        return EventStream.from_paths(self.n_pools, [self.path(int(k)) for k in order],
                                      master_seed=self.master_seed, params_hash=self.params_hash)

    def identical_to(self, other: EventStream) -> bool:
        return (self.n_pools == other.n_pools and self.master_seed == other.master_seed
                and self.params_hash == other.params_hash
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("counts", "types", "x_to_y", "normals")))

    def save(self, path: str | Path) -> None:
        """Write a versioned ``.npz`` (header fields + flat per-path arrays)."""
        with open(path, "wb") as fh:
            np.savez(
                fh, format_version=np.int64(STREAM_FORMAT_VERSION), prng=np.str_(PRNG_NAME),
                params_hash=np.str_(self.params_hash),
                master_seed=np.uint64(self.master_seed), n_pools=np.int64(self.n_pools),
                counts=self.counts, types=self.types, x_to_y=self.x_to_y, normals=self.normals,
            )

    @classmethod
    def load(cls, path: str | Path) -> EventStream:
        with np.load(path, allow_pickle=False) as z:
            version = int(z["format_version"])
            if version != STREAM_FORMAT_VERSION:
                raise ContractError(f"unsupported event-stream format version {version}")
            return cls(int(z["n_pools"]), z["counts"], z["types"], z["x_to_y"], z["normals"],
                       int(z["master_seed"]), str(z["params_hash"]))


def _path_generator(master_seed: int, k: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=(k,))))


def draw_event_stream(params: MarketParams) -> EventStream:
    n = params.n_pools
    kappa = np.array(params.kappa)
    probs = kappa / kappa.sum()
    p_xy = np.array(params.p)
    lam = params.total_rate * params.t_horizon
    counts = np.empty(params.b_paths, dtype=np.int64)
    types, dirs, normals = [], [], []
    for k in range(params.b_paths):
        rng = _path_generator(params.master_seed, k)
        n_ev = int(rng.poisson(lam))
        t = rng.choice(n + 1, size=n_ev, p=probs)
        d = rng.random(n_ev) < p_xy[t]
        z = rng.standard_normal(int(np.where(t == 0, n, 1).sum()))
        counts[k] = n_ev
        types.append(t)
        dirs.append(d)
        normals.append(z)
    return EventStream(n, counts, np.concatenate(types), np.concatenate(dirs),
                       np.concatenate(normals), params.master_seed, params.stream_hash())


def check_compatible(stream: EventStream, params: MarketParams) -> None:
    if stream.n_pools != params.n_pools:
        raise ContractError(f"stream has {stream.n_pools} pools, params have {params.n_pools}")
    if stream.params_hash and stream.params_hash != params.stream_hash():
        raise ContractError("event stream was drawn with different market parameters")


@dataclass(frozen=True, eq=False)
class PathRecord:
    """Reserve trajectories after each event, flat over all paths (see EventStream)."""

    offsets: np.ndarray
    rx_t: np.ndarray
    ry_t: np.ndarray
    volumes: np.ndarray
    final_rx: np.ndarray
    final_ry: np.ndarray
    l_total: np.ndarray
    phi: np.ndarray

    @property
    def b_paths(self) -> int:
        return len(self.offsets) - 1

    def path(self, k: int) -> dict[str, np.ndarray]:
        a, b = self.offsets[k], self.offsets[k + 1]
        return {"rx": self.rx_t[a:b], "ry": self.ry_t[a:b], "volumes": self.volumes[a:b]}

    def final_pools(self, k: int) -> MultiPool:
        return MultiPool.from_arrays(self.final_rx[k], self.final_ry[k], self.l_total, self.phi)

    def identical_to(self, other: PathRecord) -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("offsets", "rx_t", "ry_t", "volumes", "final_rx", "final_ry"))


def replay(initial: MultiPool, stream: EventStream, params: MarketParams) -> PathRecord:
    check_compatible(stream, params)
    if len(initial) != params.n_pools:
        raise ContractError(f"{len(initial)} pools given, params describe {params.n_pools}")
    rx0, ry0, l_total, phi = initial.arrays()
    sigma_all, sigma = params.sigma_arrays()
    final_rx, final_ry, rx_t, ry_t, vol = _kernels.replay_paths(
        rx0, ry0, phi, stream.offsets, stream.types, stream.x_to_y, stream.normals,
        stream.normal_offsets, sigma_all, sigma, True)
    return PathRecord(stream.offsets.copy(), rx_t, ry_t, vol, final_rx, final_ry, l_total, phi)


def simulate(initial: MultiPool, params: MarketParams) -> tuple[PathRecord, EventStream]:
    stream = draw_event_stream(params)
    return replay(initial, stream, params), stream
