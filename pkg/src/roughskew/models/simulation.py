"""Model specifications and path simulation.

Rough Bergomi paths are exact in law at the grid points: the Gaussian vector
``(Y_t1..Y_tN, W_t1..W_tN)`` is drawn through one Cholesky factor of its
covariance, and ``V_ti = v(ti) exp(Y_ti - Var(Y_ti)/2)``. The log-price is
advanced with left-point variance over each step, which keeps the discrete
price an exact martingale because ``W_{t_{i+1}} - W_{t_i}`` is independent of
everything known at ``t_i``.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .._rng import NormalStream
from ..errors import GridError
from .curves import ForwardVarianceCurve
from .volterra import joint_factor

CHOLESKY_EXACT = "cholesky_exact"
EULER = "euler"
MAX_EXACT_STEPS = 4096
# normals generated per block; bounds peak memory independently of n_paths
_BLOCK_DRAWS = 1 << 21


@dataclass(frozen=True)
class RoughBergomi:
    H: float
    eta: float
    rho: float

    def __post_init__(self):
        if not 0.0 < self.H <= 0.5:
            raise ValueError(f"H must lie in (0, 1/2], got {self.H}")
        if self.eta < 0:
            raise ValueError(f"eta must be non-negative, got {self.eta}")
        if not -1.0 <= self.rho <= 0.0:
            raise ValueError(f"rho must lie in [-1, 0] (martingale regime), got {self.rho}")


@dataclass(frozen=True)
class LocalVol:
    """Local volatility ``sigma_fn(S, t)``, vectorised in ``S``."""

    sigma_fn: Callable
    name: str = ""


@dataclass(frozen=True)
class ConstantVol:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


def _callable_fingerprint(fn) -> str:
    code = getattr(fn, "__code__", None)
    h = hashlib.sha256(f"{getattr(fn, '__module__', '')}.{getattr(fn, '__qualname__', repr(fn))}".encode())
    if code is not None:
        h.update(code.co_code)
        h.update(repr(code.co_consts).encode())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class ModelSpec:
    variant: object
    s0: float = 1.0
    fvc: ForwardVarianceCurve | None = None

    def __post_init__(self):
        if not self.s0 > 0:
            raise ValueError(f"s0 must be positive, got {self.s0}")
        if isinstance(self.variant, RoughBergomi):
            if self.fvc is None:
                raise ValueError("rough Bergomi needs a forward variance curve")
        elif not isinstance(self.variant, (LocalVol, ConstantVol)):
            raise TypeError(f"unknown model variant {type(self.variant).__name__}")

    @property
    def forward_variance(self) -> ForwardVarianceCurve | None:
        """``v(t)`` when it is known in closed form (not for local vol)."""
        if isinstance(self.variant, ConstantVol):
            return self.fvc or ForwardVarianceCurve.flat(self.variant.sigma**2)
        if isinstance(self.variant, LocalVol):
            return self.fvc
        return self.fvc

    def describe(self) -> dict:
        v = self.variant
        if isinstance(v, RoughBergomi):
            d = {"model": "rough_bergomi", "H": v.H, "eta": v.eta, "rho": v.rho}
        elif isinstance(v, ConstantVol):
            d = {"model": "constant", "sigma": v.sigma}
        else:
            d = {"model": "local_vol", "name": v.name, "fn": _callable_fingerprint(v.sigma_fn)}
        d["s0"] = self.s0
        if self.fvc is not None:
            d["fvc"] = self.fvc.describe()
        return d

    def spec_hash(self) -> str:
        payload = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass(frozen=True)
class SimGrid:
    """Time grid, path count and seed of a simulation.

    Uniform grids come from ``horizon`` and ``n_steps``; graded grids are
    built with :meth:`from_times`. With ``antithetic`` the paths come in
    pairs ``(2j, 2j+1)`` driven by opposite normals.
    """

    horizon: float
    n_steps: int
    n_paths: int
    seed: int = 0
    scheme: str = CHOLESKY_EXACT
    antithetic: bool = True
    explicit_times: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.n_steps < 2:
            raise ValueError(f"n_steps must be at least 2, got {self.n_steps}")
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even number of paths")
        if self.scheme not in (CHOLESKY_EXACT, EULER):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_times(cls, times, n_paths: int, seed: int = 0, **kw) -> "SimGrid":
        t = np.asarray(times, dtype=float)
        if t.ndim != 1 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("explicit grid must start at 0 and increase strictly")
        return cls(float(t[-1]), t.size - 1, n_paths, seed, explicit_times=tuple(t.tolist()), **kw)

    @property
    def times(self) -> np.ndarray:
        if self.explicit_times is not None:
            return np.array(self.explicit_times)
        return np.linspace(0.0, self.horizon, self.n_steps + 1)


@dataclass
class PathBundle:
    """Simulated paths on a common grid.

    ``prices``, ``variances`` and ``drivers`` (the Brownian motion driving the
    log-price) have shape ``(n_paths, len(times))``. With ``antithetic`` rows
    ``2j`` and ``2j+1`` form a pair and statistics use pair means.
    """

    times: np.ndarray
    prices: np.ndarray
    variances: np.ndarray
    drivers: np.ndarray
    seed: int
    spec_hash: str
    antithetic: bool = False

    @property
    def n_paths(self) -> int:
        return self.prices.shape[0]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def sample_units(self, values: np.ndarray) -> np.ndarray:
        """Independent sample units: pair means under antithetic sampling."""
        values = np.asarray(values, dtype=float)
        if self.antithetic:
            return values.reshape(-1, 2, *values.shape[1:]).mean(axis=1)
        return values


def _interleave(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.stack((a, b), axis=1).reshape(-1, *a.shape[1:])


class _Sampler:
    """Turns blocks of independent normals into path blocks for one model."""

    def __init__(self, spec: ModelSpec, grid: SimGrid):
        self.spec = spec
        self.grid = grid
        self.t = grid.times
        self.dt = np.diff(self.t)
        self.n = self.dt.size
        v = spec.variant
        if isinstance(v, RoughBergomi):
            if grid.scheme != CHOLESKY_EXACT:
                raise ValueError("rough Bergomi paths are only available with cholesky_exact")
            if self.n > MAX_EXACT_STEPS:
                gb = (2 * self.n) ** 2 * 8 / 1e9
                raise GridError(
                    f"cholesky_exact with {self.n} steps needs a {2 * self.n}x{2 * self.n} "
                    f"covariance (~{gb:.1f} GB per copy); use at most {MAX_EXACT_STEPS} "
                    "steps or a graded grid")
            self.draws = 3 * self.n
            self.factor = joint_factor(self.t[1:], v.H, v.eta) if v.eta > 0 else None
            self.fwd = np.concatenate(([spec.fvc.v0], spec.fvc(self.t[1:])))
            self.half_var = 0.5 * v.eta**2 * self.t[1:] ** (2 * v.H) / (2 * v.H)
        else:
            self.draws = self.n
        self.units = grid.n_paths // 2 if grid.antithetic else grid.n_paths
        self.stream = NormalStream(grid.seed, self.draws)

    def _signed(self, z: np.ndarray) -> np.ndarray:
        return _interleave(z, -z) if self.grid.antithetic else z

    def block(self, start: int, count: int):
        z = self.stream.normals(start, count)
        v = self.spec.variant
        sdt = np.sqrt(self.dt)
        log_s0 = math.log(self.spec.s0)
        if isinstance(v, RoughBergomi):
            n = self.n
            if self.factor is not None:
                g = self._signed(z[:, : 2 * n] @ self.factor.T)
                y, w = g[:, :n], g[:, n:]
                var = np.empty((g.shape[0], n + 1))
                var[:, 0] = self.fwd[0]
                var[:, 1:] = self.fwd[1:] * np.exp(y - self.half_var)
                dw = np.diff(w, axis=1, prepend=0.0)
            else:
                dw = self._signed(z[:, n : 2 * n] * sdt)
                var = np.broadcast_to(self.fwd, (dw.shape[0], n + 1)).copy()
            dperp = self._signed(z[:, 2 * n :] * sdt)
            db = v.rho * dw + math.sqrt(1.0 - v.rho**2) * dperp
            left = var[:, :-1]
            dlog = np.sqrt(left) * db - 0.5 * left * self.dt
        elif isinstance(v, ConstantVol):
            db = self._signed(z * sdt)
            sig = v.sigma
            dlog = sig * db - 0.5 * sig * sig * self.dt
            var = np.full((db.shape[0], self.n + 1), sig * sig)
        else:
            db = self._signed(z * sdt)
            m = db.shape[0]
            var = np.empty((m, self.n + 1))
            dlog = np.empty((m, self.n))
            s = np.full(m, self.spec.s0)
            for i in range(self.n):
                sig = np.abs(np.asarray(v.sigma_fn(s, self.t[i]), dtype=float))
                var[:, i] = sig * sig
                dlog[:, i] = sig * db[:, i] - 0.5 * var[:, i] * self.dt[i]
                s = s * np.exp(dlog[:, i])
            sig = np.abs(np.asarray(v.sigma_fn(s, self.t[-1]), dtype=float))
            var[:, -1] = sig * sig
        m = dlog.shape[0]
        log_s = np.empty((m, self.n + 1))
        log_s[:, 0] = log_s0
        np.cumsum(dlog, axis=1, out=log_s[:, 1:])
        log_s[:, 1:] += log_s0
        drivers = np.zeros((m, self.n + 1))
        np.cumsum(db, axis=1, out=drivers[:, 1:])
        return np.exp(log_s), var, drivers


def _layout(sampler: _Sampler, grid: SimGrid):
    per_unit = sampler.draws * (2 if grid.antithetic else 1)
    block_units = max(1, _BLOCK_DRAWS // per_unit)
    return block_units, list(range(0, sampler.units, block_units))


def _fill(spec, grid, sampler, starts, block_units, first, stop, keep, workers):
    """Paths of units ``[first, stop)`` assembled from the fixed block layout."""
    cols = slice(None) if keep == "all" else [0, -1]
    times = grid.times if keep == "all" else grid.times[[0, -1]]
    mult = 2 if grid.antithetic else 1
    out = [np.empty(((stop - first) * mult, times.size)) for _ in range(3)]

    def run(start):
        count = min(block_units, stop - start)
        arrays = sampler.block(start, count)
        rows = slice((start - first) * mult, (start - first + count) * mult)
        for dst, src in zip(out, arrays):
            dst[rows] = src[:, cols]

    mine = [s for s in starts if first <= s < stop]
    if workers > 1 and len(mine) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, mine))
    else:
        for s in mine:
            run(s)
    return PathBundle(times, out[0], out[1], out[2], grid.seed, spec.spec_hash(), grid.antithetic)


def simulate(spec: ModelSpec, grid: SimGrid, keep: str = "all", workers: int = 1) -> PathBundle:
    """Simulate ``grid.n_paths`` paths of ``spec``.

    ``keep="terminal"`` stores only the first and last grid columns, which is
    all that European pricing needs and keeps memory flat in ``n_steps``.
    Results depend only on ``(spec, grid)``, never on ``workers``.
    """
    if keep not in ("all", "terminal"):
        raise ValueError("keep must be 'all' or 'terminal'")
    sampler = _Sampler(spec, grid)
    block_units, starts = _layout(sampler, grid)
    return _fill(spec, grid, sampler, starts, block_units, 0, sampler.units, keep, workers)


def simulate_chunks(spec: ModelSpec, grid: SimGrid, max_paths: int, keep: str = "all",
                    workers: int = 1):
    """Yield the paths of :func:`simulate` in consecutive bundles of at most ``max_paths``.

    Chunks are unions of whole simulation blocks, so the concatenated rows are
    bit-identical to a single :func:`simulate` call; only peak memory changes.
    """
    if keep not in ("all", "terminal"):
        raise ValueError("keep must be 'all' or 'terminal'")
    sampler = _Sampler(spec, grid)
    block_units, starts = _layout(sampler, grid)
    mult = 2 if grid.antithetic else 1
    chunk_units = max(block_units, (max_paths // mult) // block_units * block_units)
    for first in range(0, sampler.units, chunk_units):
        stop = min(first + chunk_units, sampler.units)
        yield _fill(spec, grid, sampler, starts, block_units, first, stop, keep, workers)


CONSTANT_PATH = math.inf


def holder_estimate(bundle: PathBundle, max_lag: int | None = None) -> float:
    """Pathwise Hoelder exponent of the variance from dyadic increment scaling.

    For each path the mean squared increment of ``log V`` at lags
    ``1, 2, 4, ...`` is regressed on the lag in log-log scale; half the slope
    estimates the exponent. The per-path estimates are averaged. Paths with
    identically zero increments are skipped; if every path is constant the
    sentinel :data:`CONSTANT_PATH` (``inf``) is returned.
    """
    n_steps = bundle.times.size - 1
    if n_steps < 64:
        raise GridError(f"holder_estimate needs at least 64 steps, got {n_steps}")
    dt = np.diff(bundle.times)
    if not np.allclose(dt, dt[0], rtol=1e-9):
        raise GridError("holder_estimate needs a uniform grid")
    max_lag = max_lag or n_steps // 16
    lags = [1 << k for k in range(int(math.log2(max_lag)) + 1)]
    logv = np.log(bundle.variances)
    sf = np.stack([np.mean((logv[:, l:] - logv[:, :-l]) ** 2, axis=1) for l in lags], axis=1)
    live = np.all(sf > 0, axis=1)
    if not np.any(live):
        return CONSTANT_PATH
    x = np.log(lags)
    xc = x - x.mean()
    y = np.log(sf[live])
    slopes = (y - y.mean(axis=1, keepdims=True)) @ xc / (xc @ xc)
    return float(np.mean(slopes) / 2.0)
