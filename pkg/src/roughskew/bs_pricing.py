"""Closed-form Black-Scholes and Bachelier analytics at zero interest rate.

Prices are computed from the out-of-the-money side in normalised units
(price / spot as a function of log-moneyness and total volatility) and the
in-the-money side is recovered through put-call parity, which keeps the
time value accurate for deep strikes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import erfcx, ndtr, roots_laguerre

from .errors import ConvergenceError, DegenerateInputError, PriceBandError

CALL = "call"
PUT = "put"

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)
_IV_MAX_ITER = 100


def _check_kind(kind: str) -> bool:
    if kind == CALL:
        return True
    if kind == PUT:
        return False
    raise ValueError(f"kind must be 'call' or 'put', got {kind!r}")


def _npdf(d):
    return np.exp(-0.5 * d * d) / _SQRT_2PI


_SQRT_PI = math.sqrt(math.pi)
# below this half-width the erfcx difference is summed without cancellation
_GAP_SMALL_H = 0.3
_GAP_TAYLOR_U = 1.5
_GAP_TAYLOR_TERMS = 30
_LAGUERRE_R, _LAGUERRE_W = roots_laguerre(64)


def _erfcx_gap(u, h):
    """``erfcx(u - h) - erfcx(u + h)`` for ``u >= 0``, ``h > 0``.

    For small ``h`` the direct difference cancels. Near zero an odd Taylor
    series in ``h`` is summed, with derivatives from the forward recurrence
    ``f^(n+1) = 2u f^(n) + 2n f^(n-1)``. Further out the integral
    ``(4/sqrt(pi)) int_0^inf exp(-t^2 - 2ut) sinh(2ht) dt`` is evaluated by
    Gauss-Laguerre quadrature.
    """
    out = erfcx(u - h) - erfcx(u + h)
    small = h < _GAP_SMALL_H
    near = small & (u < _GAP_TAYLOR_U)
    if np.any(near):
        uu, hh = u[near], h[near]
        f_prev = erfcx(uu)
        f_cur = 2.0 * uu * f_prev - 2.0 / _SQRT_PI
        acc = np.zeros_like(uu)
        hp, fact = hh.copy(), 1.0
        for n in range(1, 2 * _GAP_TAYLOR_TERMS + 1):
            if n % 2:
                acc += hp * f_cur / fact
            f_prev, f_cur = f_cur, 2.0 * uu * f_cur + 2.0 * n * f_prev
            fact *= n + 1
            hp = hp * hh
        out[near] = -2.0 * acc
    far = small & ~near
    if np.any(far):
        uu, hh = u[far], h[far]
        t = _LAGUERRE_R[None, :] / (2.0 * uu[:, None])
        g = np.exp(-t * t) * np.sinh(2.0 * hh[:, None] * t)
        out[far] = (2.0 / _SQRT_PI) * (g @ _LAGUERRE_W) / uu
    return out


def _otm_normalized(x, s):
    """Normalised OTM value: call/S where x >= 0, put/S where x < 0.

    ``x = log(K/S)`` and ``s = vol * sqrt(ttm) > 0``.
    """
    # With a = |x|/s both normal tails share the factor exp(-(a^2 + s^2/4)/2),
    # so the value is a difference of scaled complementary error functions,
    # evaluated without cancellation; this also covers the far tail.
    ax = np.abs(x)
    a = ax / s
    diff = _erfcx_gap(a / _SQRT2, s / (2.0 * _SQRT2))
    expo = -0.5 * (a * a + 0.25 * s * s) + np.where(x >= 0, 0.5 * ax, -0.5 * ax)
    return np.maximum(0.5 * np.exp(expo) * diff, 0.0)


def _as_arrays(spot, strike, ttm, vol):
    S, K, T, v = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (spot, strike, ttm, vol))
    )
    if not (np.all(np.isfinite(S)) and np.all(np.isfinite(K))
            and np.all(np.isfinite(T)) and np.all(np.isfinite(v))):
        raise ValueError("non-finite option inputs")
    if np.any(S <= 0) or np.any(K <= 0):
        raise ValueError("spot and strike must be positive")
    if np.any(T < 0) or np.any(v < 0):
        raise ValueError("ttm and vol must be non-negative")
    return S, K, T, v


def _scalar_or_array(out, like):
    return float(out) if np.ndim(like) == 0 else out


def bs_price(spot, strike, ttm, vol, kind: str = CALL, *, log_moneyness=None):
    """Black-Scholes price with zero rates; intrinsic value when ttm or vol is 0.

    Accepts scalars or broadcastable arrays; ``kind`` applies to all entries.
    ``log_moneyness``, if given, is the exact ``log(K/S)`` the strike was built
    from; deep out of the money the price is sensitive to the last bit of x,
    so this avoids re-deriving it from a rounded strike.
    """
    is_call = _check_kind(kind)
    S, K, T, v = _as_arrays(spot, strike, ttm, vol)
    s = v * np.sqrt(T)
    out = np.maximum(S - K, 0.0) if is_call else np.maximum(K - S, 0.0)
    out = np.array(out, dtype=float, copy=True)
    live = s > 0
    if np.any(live):
        Sl, Kl, sl = S[live], K[live], s[live]
        if log_moneyness is None:
            x = np.log(Kl / Sl)
        else:
            x = np.broadcast_to(np.asarray(log_moneyness, dtype=float), np.shape(live))[live]
        otm = Sl * _otm_normalized(x, sl)
        if is_call:
            out[live] = np.where(x >= 0, otm, otm + (Sl - Kl))
        else:
            out[live] = np.where(x < 0, otm, otm + (Kl - Sl))
    return _scalar_or_array(out, np.broadcast(spot, strike, ttm, vol))


class Greeks(NamedTuple):
    delta: object
    gamma: object
    vega: object


def _d1(S, K, T, v):
    s = v * np.sqrt(T)
    return np.log(S / K) / s + 0.5 * s, s


def bs_greeks(spot, strike, ttm, vol, kind: str = CALL) -> Greeks:
    """Delta, gamma and vega of :func:`bs_price`.

    Raises :class:`DegenerateInputError` at ttm = 0 or vol = 0, where the
    payoff kink makes the derivatives undefined.
    """
    is_call = _check_kind(kind)
    S, K, T, v = _as_arrays(spot, strike, ttm, vol)
    if np.any(T <= 0) or np.any(v <= 0):
        raise DegenerateInputError("greeks need ttm > 0 and vol > 0")
    d1, s = _d1(S, K, T, v)
    pdf = _npdf(d1)
    delta = ndtr(d1) if is_call else ndtr(d1) - 1.0
    gamma = pdf / (S * s)
    vega = S * pdf * np.sqrt(T)
    like = np.broadcast(spot, strike, ttm, vol)
    return Greeks(*(_scalar_or_array(g, like) for g in (delta, gamma, vega)))


def bs_delta(spot, strike, ttm, vol, kind: str = CALL):
    """Delta only; the hot path of the hedging loops (no input validation)."""
    d1, _ = _d1(np.asarray(spot, float), strike, np.asarray(ttm, float), vol)
    return ndtr(d1) if kind == CALL else ndtr(d1) - 1.0


def implied_vol(price: float, spot: float, strike: float, ttm: float, kind: str = CALL) -> float:
    """Invert :func:`bs_price` for the volatility.

    Safeguarded Newton iteration on total volatility ``s = vol*sqrt(ttm)``
    against the out-of-the-money equivalent price, falling back to bisection
    whenever a Newton step leaves the current bracket.
    """
    is_call = _check_kind(kind)
    vals = (price, spot, strike, ttm)
    if not all(math.isfinite(float(a)) for a in vals):
        raise ValueError("non-finite input to implied_vol")
    price, S, K, T = (float(a) for a in vals)
    if S <= 0 or K <= 0:
        raise ValueError("spot and strike must be positive")
    if T <= 0:
        raise DegenerateInputError("implied vol needs ttm > 0")
    intrinsic = max(S - K, 0.0) if is_call else max(K - S, 0.0)
    upper = S if is_call else K
    if price <= intrinsic:
        raise PriceBandError(
            f"{kind} price {price!r} at or below intrinsic value {intrinsic!r}", "lower")
    if price >= upper:
        raise PriceBandError(
            f"{kind} price {price!r} at or above upper bound {upper!r}", "upper")

    m = K / S
    x = math.log(m)
    if is_call:
        otm = price if x >= 0 else price - (S - K)
    else:
        otm = price if x < 0 else price - (K - S)
    target = otm / S
    if target <= 0:
        raise PriceBandError(f"{kind} time value vanishes numerically", "lower")

    xa = np.array([x])

    def f(s):
        return float(_otm_normalized(xa, np.array([s]))[0]) - target

    # Corrado-Miller style starting point from the call-equivalent price
    call = price if is_call else price + S - K
    c = call - 0.5 * (S - K)
    disc = c * c - (S - K) ** 2 / math.pi
    s = _SQRT_2PI / (S + K) * (c + math.sqrt(max(disc, 0.0)))

    lo, hi = 0.0, max(1.0, 2.0 * s)
    while f(hi) < 0:
        hi *= 2.0
        if hi > 1e4:
            raise ConvergenceError("could not bracket implied volatility")
    if not lo < s < hi:
        s = 0.5 * (lo + hi)

    for _ in range(_IV_MAX_ITER):
        fv = f(s)
        if fv == 0.0:
            break
        if fv > 0:
            hi = s
        else:
            lo = s
        vega = math.exp(-0.5 * (-x / s + 0.5 * s) ** 2) / _SQRT_2PI
        s_new = s - fv / vega if vega > 0 else math.nan
        if not lo < s_new < hi:
            s_new = 0.5 * (lo + hi)
        if abs(s_new - s) <= 1e-15 * s_new:
            s = s_new
            break
        s = s_new
    else:
        raise ConvergenceError(f"implied vol did not converge in {_IV_MAX_ITER} iterations")

    vol = s / math.sqrt(T)
    resid = abs(bs_price(S, K, T, vol, kind) - price)
    if resid >= 1e-12 * S:
        raise ConvergenceError(f"implied vol residual {resid:.3e} exceeds tolerance")
    return vol


@dataclass(frozen=True)
class BsQuote:
    spot: float
    strike: float
    ttm: float
    vol: float
    kind: str = CALL

    def __post_init__(self):
        _check_kind(self.kind)
        _as_arrays(self.spot, self.strike, self.ttm, self.vol)

    def price(self) -> float:
        return bs_price(self.spot, self.strike, self.ttm, self.vol, self.kind)

    def greeks(self) -> Greeks:
        return bs_greeks(self.spot, self.strike, self.ttm, self.vol, self.kind)


class SymmetricStrikes(NamedTuple):
    put_strike: float
    call_strike: float


def symmetric_strikes(spot_at_trade: float, k_put: float) -> SymmetricStrikes:
    """Put strike ``K`` and its mirror call strike ``S**2 / K``.

    Their log-moneyness values are negatives of each other, which makes
    ``put(K) - (K/S) * call(S**2/K)`` worth zero under Black-Scholes at any
    common volatility.
    """
    if spot_at_trade <= 0 or k_put <= 0:
        raise ValueError("spot and strike must be positive")
    return SymmetricStrikes(k_put, spot_at_trade * spot_at_trade / k_put)


@dataclass(frozen=True)
class BachelierState:
    """Point ``(x, u)`` of the rescaled Bachelier put problem.

    ``wfun`` is the cumulative rescaled variance ``w(u)``; it is supplied by
    the caller (see :meth:`roughskew.models.ForwardVarianceCurve.rescaled_cumulative`).
    """

    x: object
    u: float
    delta_: float
    wfun: Callable[[float], float]

    def __post_init__(self):
        if not 0.0 <= self.u <= 1.0:
            raise ValueError(f"u must lie in [0, 1], got {self.u}")


class BachelierValue(NamedTuple):
    p: object
    dp_dx: object
    d2p_dx2: object


def bachelier_put(state: BachelierState) -> BachelierValue:
    """Value and x-derivatives of ``E[(delta - X_1)_+ | X_u = x]``.

    At ``u = 1`` only the terminal payoff is returned; the derivatives are NaN.
    """
    x = np.asarray(state.x, dtype=float)
    gap = state.delta_ - x
    rem = float(state.wfun(1.0)) - float(state.wfun(state.u))
    if state.u == 1.0 or rem <= 0.0:
        if state.u < 1.0:
            raise ValueError("w(1) - w(u) must be positive for u < 1")
        nan = np.full_like(gap, np.nan)
        p = np.maximum(gap, 0.0)
        return BachelierValue(*(_scalar_or_array(a, state.x) for a in (p, nan, nan)))
    sd = math.sqrt(rem)
    y = gap / sd
    pdf = _npdf(y)
    cdf = ndtr(y)
    p = gap * cdf + sd * pdf
    return BachelierValue(*(_scalar_or_array(a, state.x) for a in (p, -cdf, pdf / sd)))
