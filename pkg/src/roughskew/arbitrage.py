"""Synthetic power-law skew market and the building-block skew trade.

Block ``n`` trades at ``tau_n = T - 1/n``: short one put at
``K_n = S exp(Z/sqrt(n))`` and long ``K_n/S`` calls at the mirror strike
``S^2/K_n``, both bought or sold at market quotes and delta-hedged to ``T``
with Black-Scholes deltas at the frozen volatility ``sqrt(V_tau_n)``. Under
Black-Scholes the portfolio is worth zero, so its market premium is pure
skew; weighted by ``n^(H - 1/2)`` the premia behave like ``c/n`` while the
hedge residuals are summable when the volatility is smoother than ``H``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._rng import derive_seed
from .bs_pricing import CALL, PUT, bs_price
from .errors import GridError, QuoteError
from .hedging import hedge_integral
from .models.simulation import ModelSpec, PathBundle, SimGrid, simulate

DIVERGING = "diverging"
INCONCLUSIVE = "inconclusive"
BLOCK_COLUMNS = ("replica", "n", "tau_n", "K_n", "premium_diff", "hedge_term", "pi_n",
                 "weighted", "partial_sum")
# moneyness band, in units of sqrt(T - tau), inside which quotes are defined
MONEYNESS_BAND = 5.0
R2_THRESHOLD = 0.9
MAX_CELLS = 2e8
MIN_BLOCK_STEPS = 4


def _evaluate(proc, tau, spot, variance):
    if callable(proc):
        return np.asarray(proc(tau, spot, variance), dtype=float)
    return np.full(np.shape(spot), float(proc))


@dataclass(frozen=True)
class SkewMarket:
    """Implied vols ``sigma + (T - tau)^(H - 1/2) alpha log(K/S) + remainder``.

    ``sigma`` and ``alpha`` are numbers or adapted functions
    ``f(tau, spot, variance)``; ``remainder(gap, log_moneyness)`` is an
    optional ``o(gap^H)`` perturbation.
    """

    T: float
    H: float
    sigma: float | Callable = 0.2
    alpha: float | Callable = -0.5
    remainder: Callable | None = None

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not 0.0 < self.H < 0.5:
            raise ValueError(f"skew exponent H must lie in (0, 1/2), got {self.H}")
        if not callable(self.sigma) and not self.sigma > 0:
            raise ValueError("base volatility must be positive")
        if not callable(self.alpha) and not self.alpha <= 0:
            raise ValueError("skew level alpha must be non-positive (negative skew)")

    def base_vol(self, tau, spot, variance=None) -> np.ndarray:
        s = _evaluate(self.sigma, tau, spot, variance)
        if np.any(~np.isfinite(s)) or np.any(s <= 0):
            raise QuoteError("base volatility process left (0, inf)")
        return s

    def skew_level(self, tau, spot, variance=None) -> np.ndarray:
        a = _evaluate(self.alpha, tau, spot, variance)
        if np.any(~np.isfinite(a)) or np.any(a > 0):
            raise QuoteError("skew process left (-inf, 0]")
        return a


def power_remainder(c: float, eps: float, H: float) -> Callable:
    """Remainder ``c * gap^(H + eps)``, which is ``o(gap^H)`` for ``eps > 0``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return lambda gap, logm: c * gap ** (H + eps)


@dataclass(frozen=True)
class Quote:
    iv: np.ndarray
    call_price: np.ndarray
    put_price: np.ndarray


def market_quote(mkt: SkewMarket, tau: float, spot, strike, variance=None) -> Quote:
    """Quote rule at time ``tau`` for strikes within ``5 sqrt(T - tau)`` log-moneyness."""
    gap = mkt.T - tau
    if not gap > 0:
        raise QuoteError(f"quotes need tau < T, got tau={tau}, T={mkt.T}")
    spot = np.asarray(spot, dtype=float)
    strike = np.asarray(strike, dtype=float)
    logm = np.log(strike / spot)
    if np.any(np.abs(logm) > MONEYNESS_BAND * math.sqrt(gap)):
        raise QuoteError(f"log-moneyness outside +-{MONEYNESS_BAND} sqrt(T - tau); "
                         "the power law only holds near the money")
    iv = mkt.base_vol(tau, spot, variance) + gap ** (mkt.H - 0.5) * mkt.skew_level(tau, spot, variance) * logm
    if mkt.remainder is not None:
        iv = iv + mkt.remainder(gap, logm)
    if np.any(iv <= 0):
        raise QuoteError(f"quote rule gives a non-positive implied vol (min {float(np.min(iv)):.4g}) "
                         f"at tau={tau}; reduce |Z| or |alpha|")
    ttm = np.full(np.broadcast(spot, strike).shape, gap)
    return Quote(iv, bs_price(spot, strike, ttm, iv, CALL), bs_price(spot, strike, ttm, iv, PUT))


@dataclass
class BlockResult:
    """Block ``n`` on every replica path (arrays have one entry per replica)."""

    n: int
    tau_n: float
    K_n: np.ndarray
    premium_diff: np.ndarray
    hedge_term: np.ndarray
    payoff_term: np.ndarray
    pi_n: np.ndarray
    weighted: np.ndarray


def run_block(mkt: SkewMarket, bundle: PathBundle, n: int, Z: float = -0.25) -> BlockResult:
    """P&L of block ``n`` along every path of ``bundle``.

    ``bundle`` must end at ``T`` and contain ``tau_n = T - 1/n`` as a grid point.
    """
    if not Z < 0:
        raise ValueError("Z must be negative")
    if n < 1:
        raise ValueError("block index starts at 1")
    T = mkt.T
    tau = T - 1.0 / n
    times = bundle.times
    if abs(times[-1] - T) > 1e-12 * T:
        raise GridError(f"bundle ends at {times[-1]}, market maturity is {T}")
    i0 = int(np.searchsorted(times, tau - 1e-12 * T))
    steps = times.size - 1 - i0
    if i0 >= times.size or abs(times[i0] - tau) > 1e-12 * T or steps < MIN_BLOCK_STEPS:
        raise GridError(f"block n={n} needs tau_n={tau:.10g} on the grid with at least "
                        f"{MIN_BLOCK_STEPS} steps to T (grid spacing near T must be "
                        f"<= {1.0 / (n * MIN_BLOCK_STEPS):.3g})")
    t = times[i0:]
    s = bundle.prices[:, i0:]
    s_tau = s[:, 0]
    v_tau = bundle.variances[:, i0]
    k_put = s_tau * math.exp(Z / math.sqrt(n))
    k_call = s_tau * s_tau / k_put
    ratio = k_put / s_tau
    qp = market_quote(mkt, tau, s_tau, k_put, v_tau)
    qc = market_quote(mkt, tau, s_tau, k_call, v_tau)
    premium = qp.put_price - ratio * qc.call_price
    vol = np.sqrt(v_tau)
    hedge = (hedge_integral(s, t, T, k_put, vol, PUT)
             - ratio * hedge_integral(s, t, T, k_call, vol, CALL))
    s_T = s[:, -1]
    payoff = -np.maximum(k_put - s_T, 0.0) + ratio * np.maximum(s_T - k_call, 0.0)
    pi = premium + hedge + payoff
    w = n ** (mkt.H - 0.5)
    return BlockResult(n, tau, k_put, premium, hedge, payoff, pi, w * pi)


def strategy_times(T: float, n_min: int, n_max: int, substeps: int, pre_steps: int = 16) -> np.ndarray:
    """Graded grid: coarse up to ``T - 1/n_min``, ``substeps`` per block interval after."""
    taus = T - 1.0 / np.arange(n_min, n_max + 1)
    head = np.linspace(0.0, taus[0], pre_steps + 1)
    knots = np.append(taus, T)
    pieces = [head]
    for a, b in zip(knots[:-1], knots[1:]):
        seg = np.linspace(a, b, substeps + 1)[1:]
        seg[-1] = b
        pieces.append(seg)
    return np.concatenate(pieces)


def _trend(ns: np.ndarray, sums: np.ndarray):
    """Per-row least-squares slope and r^2 of ``sums`` on ``log ns``."""
    x = np.log(ns)
    xc = x - x.mean()
    yc = sums - sums.mean(axis=1, keepdims=True)
    slope = yc @ xc / (xc @ xc)
    ss_tot = np.einsum("ij,ij->i", yc, yc)
    resid = yc - slope[:, None] * xc
    ss_res = np.einsum("ij,ij->i", resid, resid)
    with np.errstate(invalid="ignore", divide="ignore"):
        r2 = np.where(ss_tot > 0, 1.0 - ss_res / ss_tot, 0.0)
    return slope, r2


@dataclass
class ArbitrageReport:
    H: float
    H0_asserted: float | None
    Z: float
    ns: np.ndarray
    blocks: list = field(repr=False)
    partial_sums: np.ndarray = field(repr=False)
    premium_sums: np.ndarray = field(repr=False)
    residual_sums: np.ndarray = field(repr=False)
    slopes: np.ndarray = field(repr=False)
    r2: np.ndarray = field(repr=False)
    verdict: str = INCONCLUSIVE
    no_premium_leg: bool = False

    @property
    def replicas(self) -> int:
        return self.partial_sums.shape[0]

    @property
    def median_slope(self) -> float:
        return float(np.median(self.slopes))

    @property
    def median_r2(self) -> float:
        return float(np.median(self.r2))

    def upper_half(self) -> np.ndarray:
        return self.ns >= self.ns[-1] / 2

    def leg_trend(self, leg: str, n_from: int | None = None):
        """Per-replica slope and r^2 in ``log N`` of one leg's partial sums."""
        sums = {"total": self.partial_sums, "premium": self.premium_sums,
                "residual": self.residual_sums}[leg]
        sel = self.upper_half() if n_from is None else self.ns >= n_from
        return _trend(self.ns[sel], sums[:, sel])

    def leg_growth(self) -> dict:
        """Median premium growth and median residual range over the upper half."""
        sel = self.upper_half()
        prem = self.premium_sums[:, sel]
        res = self.residual_sums[:, sel]
        return {
            "premium_growth": float(np.median(prem[:, -1] - prem[:, 0])),
            "residual_range": float(np.median(res.max(axis=1) - res.min(axis=1))),
        }

    def to_dict(self) -> dict:
        prem_slope, _ = self.leg_trend("premium")
        res_slope, _ = self.leg_trend("residual")
        return {
            "H": self.H, "H0_asserted": self.H0_asserted,
            "n_range": [int(self.ns[0]), int(self.ns[-1])], "Z": self.Z,
            "replicas": self.replicas, "median_slope": self.median_slope,
            "r2": self.median_r2, "verdict": self.verdict,
            "premium_slope": float(np.median(prem_slope)),
            "residual_slope": float(np.median(res_slope)),
            **self.leg_growth(),
            "no_premium_leg": self.no_premium_leg,
            "note": "trend test of partial sums against log N on the upper half of N; "
                    "a finite-sample heuristic for divergence, not a proof",
        }

    def rows(self):
        for r in range(self.replicas):
            for j, b in enumerate(self.blocks):
                yield [r, b.n, b.tau_n, float(b.K_n[r]), float(b.premium_diff[r]),
                       float(b.hedge_term[r]), float(b.pi_n[r]), float(b.weighted[r]),
                       float(self.partial_sums[r, j])]


def summarize(mkt: SkewMarket, blocks: list, Z: float, H0_asserted=None,
              s_scale: float = 1.0) -> ArbitrageReport:
    ns = np.array([b.n for b in blocks], dtype=float)
    w = ns ** (mkt.H - 0.5)
    weighted = np.stack([b.weighted for b in blocks], axis=1)
    premium = np.stack([b.premium_diff for b in blocks], axis=1) * w
    residual = weighted - premium
    partial = np.cumsum(weighted, axis=1)
    prem_sums = np.cumsum(premium, axis=1)
    res_sums = np.cumsum(residual, axis=1)
    report = ArbitrageReport(mkt.H, H0_asserted, Z, ns.astype(int), blocks, partial,
                             prem_sums, res_sums, np.empty(0), np.empty(0))
    report.slopes, report.r2 = report.leg_trend("total")
    no_premium = bool(np.max(np.abs(np.stack([b.premium_diff for b in blocks]))) <= 1e-12 * s_scale)
    report.no_premium_leg = no_premium
    if not no_premium and report.median_slope > 0 and report.median_r2 > R2_THRESHOLD:
        report.verdict = DIVERGING
    return report


def run_strategy(mkt: SkewMarket, spec: ModelSpec, n_max: int = 512, Z: float = -0.25,
                 replicas: int = 200, seed: int = 0, n_min: int = 16, substeps: int = 64,
                 pre_steps: int = 16, H0_asserted: float | None = None,
                 workers: int = 1) -> ArbitrageReport:
    """Blocks ``n_min..n_max`` on ``replicas`` independent master paths.

    Replica ``r`` is path ``r`` of one simulation seeded by ``(seed, 0)``, so
    every replica is reproducible on its own. The verdict is ``"diverging"``
    when the median slope of the partial sums against ``log N`` over the
    upper half of ``N`` is positive with median r^2 above 0.9 and the premium
    leg is not identically zero.
    """
    if n_max < 16:
        raise ValueError("n_max must be at least 16")
    if not 1 <= n_min < n_max:
        raise ValueError("need 1 <= n_min < n_max")
    times = strategy_times(mkt.T, n_min, n_max, substeps, pre_steps)
    if replicas * times.size > MAX_CELLS:
        raise ValueError(f"{replicas} replicas x {times.size} grid points exceeds the "
                         f"resource guard of {MAX_CELLS:.0e} cells; lower substeps or replicas")
    grid = SimGrid.from_times(times, replicas, derive_seed(seed, 0), antithetic=False)
    bundle = simulate(spec, grid, workers=workers)
    blocks = [run_block(mkt, bundle, n, Z) for n in range(n_min, n_max + 1)]
    return summarize(mkt, blocks, Z, H0_asserted, s_scale=spec.s0)
