"""Frozen-volatility delta hedging of the symmetric put/call portfolio.

At trade time ``tau`` the put strike is ``K = S_tau exp(Z sqrt(T - tau))``
and the call strike its mirror ``S_tau^2 / K``. Both legs are priced and
hedged with Black-Scholes at the volatility ``sqrt(V_tau)`` observed at
``tau``; the hedge error of the portfolio (short put, long ``K/S_tau``
calls) is then of order ``(T - tau)^(H0 + 1/2)`` when ``V`` is
``H0``-Hoelder.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._rng import derive_seed
from .bs_pricing import CALL, PUT, bs_delta, bs_price
from .errors import ContractRefusal, GridError
from .models.simulation import ModelSpec, PathBundle, SimGrid, simulate_chunks

LEDGER_COLUMNS = ("tau", "T", "median_abs_err", "p90_abs_err", "n_paths", "rebalance_steps")


@dataclass(frozen=True)
class HedgePlan:
    tau: float
    T: float
    Z: float = -0.02
    rebalance_steps: int = 512

    def __post_init__(self):
        if not 0.0 <= self.tau < self.T:
            raise ValueError(f"need 0 <= tau < T, got tau={self.tau}, T={self.T}")
        if self.rebalance_steps < 1:
            raise ValueError("rebalance_steps must be at least 1")
        if not math.isfinite(self.Z):
            raise ValueError("Z must be finite")

    def put_strike(self, spot):
        return spot * math.exp(self.Z * math.sqrt(self.T - self.tau))


@dataclass
class HedgeLedger:
    """Per-path hedge accounting; every ``err_*`` satisfies its bookkeeping identity."""

    tau: float
    T: float
    strikes: np.ndarray
    spot_tau: np.ndarray
    var_tau: np.ndarray
    payoff_call: np.ndarray
    payoff_put: np.ndarray
    bs_call_0: np.ndarray
    bs_put_0: np.ndarray
    hedge_integral_call: np.ndarray
    hedge_integral_put: np.ndarray
    rebalance_steps: int

    @property
    def ratio(self) -> np.ndarray:
        return self.strikes / self.spot_tau

    @property
    def err_call(self) -> np.ndarray:
        return self.payoff_call - self.bs_call_0 - self.hedge_integral_call

    @property
    def err_put(self) -> np.ndarray:
        return self.payoff_put - self.bs_put_0 - self.hedge_integral_put

    @property
    def err_portfolio(self) -> np.ndarray:
        return self.err_put - self.ratio * self.err_call

    @property
    def portfolio_value_0(self) -> np.ndarray:
        return self.bs_put_0 - self.ratio * self.bs_call_0

    def max_relative_value_0(self) -> float:
        """Largest ``|portfolio_value_0|`` relative to the gross premium of the two legs."""
        gross = self.bs_put_0 + self.ratio * self.bs_call_0
        v = np.abs(self.portfolio_value_0)
        rel = np.divide(v, gross, out=v.copy(), where=gross > 0)
        return float(rel.max()) if rel.size else 0.0

    def summary(self) -> dict:
        e = np.abs(self.err_portfolio)
        return {
            "tau": self.tau, "T": self.T,
            "median_abs_err": float(np.median(e)),
            "p90_abs_err": float(np.quantile(e, 0.9)),
            "n_paths": int(e.size), "rebalance_steps": self.rebalance_steps,
        }


def _grid_index(times: np.ndarray, t: float, what: str) -> int:
    i = int(np.argmin(np.abs(times - t)))
    step = np.min(np.diff(times))
    if abs(times[i] - t) > 1e-9 * max(1.0, abs(t)) + 1e-3 * step:
        raise GridError(f"{what}={t} is not a grid point (nearest {times[i]})")
    return i


def hedge_window(bundle: PathBundle, tau: float, T: float, rebalance_steps: int):
    """Indices of the rebalance dates ``tau = t_0 < ... < t_m = T`` in the bundle grid."""
    times = bundle.times
    i0 = _grid_index(times, tau, "tau")
    i1 = _grid_index(times, T, "T")
    span = i1 - i0
    if span < rebalance_steps:
        raise GridError(f"grid has {span} steps on [tau, T], need at least {rebalance_steps}")
    if span % rebalance_steps:
        raise GridError(f"{span} grid steps on [tau, T] are not a multiple of {rebalance_steps}")
    return np.arange(i0, i1 + 1, span // rebalance_steps)


def hedge_integral(s: np.ndarray, t: np.ndarray, T: float, strike, vol, kind: str) -> np.ndarray:
    """``sum_i delta(S_ti, T - t_i) (S_{t_{i+1}} - S_ti)`` row by row, frozen ``vol``."""
    ttm = T - t[:-1]
    k = np.asarray(strike, dtype=float)[:, None]
    v = np.asarray(vol, dtype=float)[:, None]
    d = bs_delta(s[:, :-1], k, ttm[None, :], v, kind)
    return np.einsum("ij,ij->i", d, np.diff(s, axis=1))


def delta_hedge(bundle: PathBundle, plan: HedgePlan) -> HedgeLedger:
    """Hedge the put at ``K_tau`` and the call at ``S_tau^2/K_tau`` along every path.

    The volatility parameter is ``sqrt(V_tau)`` throughout, read from the
    variance path at the grid point ``tau``.
    """
    idx = hedge_window(bundle, plan.tau, plan.T, plan.rebalance_steps)
    t = bundle.times[idx]
    s = bundle.prices[:, idx]
    s_tau = s[:, 0]
    var_tau = bundle.variances[:, idx[0]]
    vol = np.sqrt(var_tau)
    ttm = t[-1] - t[0]
    x_put = plan.Z * math.sqrt(ttm)
    k_put = s_tau * np.exp(x_put)
    k_call = s_tau * s_tau / k_put
    s_T = s[:, -1]
    return HedgeLedger(
        tau=float(t[0]), T=float(t[-1]), strikes=k_put, spot_tau=s_tau, var_tau=var_tau,
        payoff_call=np.maximum(s_T - k_call, 0.0),
        payoff_put=np.maximum(k_put - s_T, 0.0),
        # priced at the defining log-moneyness so the legs mirror exactly
        bs_call_0=bs_price(s_tau, k_call, ttm, vol, CALL, log_moneyness=-x_put),
        bs_put_0=bs_price(s_tau, k_put, ttm, vol, PUT, log_moneyness=x_put),
        hedge_integral_call=hedge_integral(s, t, t[-1], k_call, vol, CALL),
        hedge_integral_put=hedge_integral(s, t, t[-1], k_put, vol, PUT),
        rebalance_steps=plan.rebalance_steps,
    )


def graded_times(tau: float, T: float, pre_steps: int, window_steps: int) -> np.ndarray:
    """Coarse uniform grid on ``[0, tau]`` followed by a fine one on ``[tau, T]``."""
    head = np.linspace(0.0, tau, pre_steps + 1) if tau > 0 else np.array([0.0])
    tail = np.linspace(tau, T, window_steps + 1)[1:]
    return np.concatenate((head, tail))


def rebalance_rule(gap: float, per_unit: int = 64, max_steps: int = 2048) -> int:
    """Steps ``~ per_unit / gap``, rounded up to a power of two and capped."""
    target = max(1, math.ceil(per_unit / gap))
    return min(1 << (target - 1).bit_length(), max_steps)


@dataclass(frozen=True)
class ScalingResult:
    slope: float
    intercept: float
    r2: float
    rows: tuple
    degenerate: bool = False
    reason: str = ""
    max_value_0: float = 0.0

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2,
                "degenerate": self.degenerate, "reason": self.reason,
                "max_relative_value_0": self.max_value_0,
                "rows": [dict(r) for r in self.rows]}


def error_scaling(spec: ModelSpec, gaps, T: float = 0.25, n_paths: int = 10_000,
                  seed: int = 0, Z: float = -0.02, pre_steps: int = 16,
                  steps_per_unit: int = 64, max_steps: int = 2048,
                  workers: int = 1, chunk_paths: int = 20_000) -> ScalingResult:
    """Regress ``log median|err_portfolio|`` on ``log(T - tau)`` over a ladder of gaps.

    Each gap gets a fresh simulation on a graded grid (``pre_steps`` up to
    ``tau``, :func:`rebalance_rule` steps on ``[tau, T]``) seeded by
    ``(seed, gap index)``; paths are processed in chunks of ``chunk_paths``
    to bound memory (results do not depend on the chunk size). When the variance never moves inside the hedge
    windows the Lemma residual vanishes identically and a degenerate result
    (no fit) is returned. ``max_value_0`` records the largest relative
    initial Black-Scholes value of the portfolio over all runs (zero by
    put-call symmetry).
    """
    gaps = [float(g) for g in gaps]
    if len(gaps) < 4:
        raise ValueError("need at least 4 values of T - tau")
    if any(not 0 < g < T for g in gaps):
        raise ValueError("every gap must lie in (0, T)")

    def one(item):
        i, gap = item
        steps = rebalance_rule(gap, steps_per_unit, max_steps)
        tau = T - gap
        times = graded_times(tau, T, pre_steps, steps)
        grid = SimGrid.from_times(times, n_paths, derive_seed(seed, i), antithetic=n_paths % 2 == 0)
        errs, frozen, v0_rel = [], True, 0.0
        for bundle in simulate_chunks(spec, grid, chunk_paths):
            ledger = delta_hedge(bundle, HedgePlan(tau, T, Z, steps))
            errs.append(np.abs(ledger.err_portfolio))
            window = bundle.variances[:, times.size - steps - 1:]
            frozen = frozen and bool(np.all(window == window[:, :1]))
            v0_rel = max(v0_rel, ledger.max_relative_value_0())
        e = np.concatenate(errs)
        row = {"tau": float(times[-steps - 1]), "T": float(times[-1]),
               "median_abs_err": float(np.median(e)), "p90_abs_err": float(np.quantile(e, 0.9)),
               "n_paths": int(e.size), "rebalance_steps": steps}
        return row, frozen, v0_rel

    items = list(enumerate(gaps))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(it) for it in items]
    rows = tuple(r[0] for r in results)
    v0_max = max(r[2] for r in results)
    if all(r[1] for r in results):
        return ScalingResult(math.nan, math.nan, math.nan, rows, True,
                             "variance constant on every hedge window; only discretization error remains",
                             v0_max)
    x = np.log([r["T"] - r["tau"] for r in rows])
    y = np.log([r["median_abs_err"] for r in rows])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    r2 = 1.0 - (resid @ resid) / ((y - y.mean()) @ (y - y.mean()))
    return ScalingResult(float(slope), float(intercept), float(r2), rows, max_value_0=v0_max)


def require_fit(result: ScalingResult) -> ScalingResult:
    """Raise :class:`ContractRefusal` for a degenerate scaling experiment."""
    if result.degenerate:
        raise ContractRefusal(result.reason)
    return result
