"""Monte Carlo smiles, power-law skew fits and the model-free skew bound."""

from __future__ import annotations

import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ._rng import derive_seed
from .bs_pricing import CALL, PUT, bs_greeks, bs_price, implied_vol
from .errors import ContractRefusal, PriceBandError
from .models.simulation import LocalVol, ModelSpec, PathBundle, SimGrid, simulate

SMILE_COLUMNS = ("theta", "z", "strike", "iv", "stderr_iv")
# |skew| at or below this (per unit log-moneyness) counts as no skew
ZERO_SKEW = 1e-9


@dataclass(frozen=True)
class MCPrice:
    price: float
    stderr: float


def _payoff(s, strike, kind):
    return np.maximum(s - strike, 0.0) if kind == CALL else np.maximum(strike - s, 0.0)


def mc_price(bundle: PathBundle, strike: float, kind: str = CALL,
             control_vol: float | None = None) -> MCPrice:
    """Sample-mean price of a European option at the bundle horizon.

    Standard errors are computed over independent units (antithetic pair
    means). With ``control_vol`` the payoff on the lognormal path
    ``s0 exp(sigma B_T - sigma^2 T/2)``, built from the same driving Brownian
    motion ``B``, is used as a control variate with its Black-Scholes mean;
    the coefficient is estimated from the sample.
    """
    if bundle.n_paths == 0:
        raise ValueError("empty bundle")
    if not strike > 0:
        raise ValueError("strike must be positive")
    if kind not in (CALL, PUT):
        raise ValueError(f"kind must be 'call' or 'put', got {kind!r}")
    y = bundle.sample_units(_payoff(bundle.prices[:, -1], strike, kind))
    if control_vol is not None:
        theta = bundle.horizon
        s0 = float(bundle.prices[0, 0])
        s_cv = s0 * np.exp(control_vol * bundle.drivers[:, -1] - 0.5 * control_vol**2 * theta)
        x = bundle.sample_units(_payoff(s_cv, strike, kind)) - bs_price(s0, strike, theta, control_vol, kind)
        xc = x - x.mean()
        var_x = xc @ xc
        beta = (xc @ (y - y.mean())) / var_x if var_x > 0 else 0.0
        y = y - beta * x
    n = y.size
    se = float(y.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return MCPrice(float(y.mean()), se)


@dataclass(frozen=True)
class SmilePoint:
    theta: float
    z: float
    strike: float
    iv: float
    stderr_iv: float
    kind: str = CALL
    price: float = math.nan
    stderr_price: float = math.nan

    def row(self) -> list:
        return [self.theta, self.z, self.strike, self.iv, self.stderr_iv]


def _control_vol(spec: ModelSpec, theta: float) -> float:
    fvc = spec.forward_variance
    if fvc is not None:
        return math.sqrt(fvc.vbar(theta))
    if isinstance(spec.variant, LocalVol):
        return abs(float(spec.variant.sigma_fn(spec.s0, 0.0)))
    raise ValueError("no control volatility available for this model")


def smile_from_bundle(bundle: PathBundle, zs, control_vol: float | None = None) -> list[SmilePoint]:
    """Implied vols at strikes ``s0 exp(z sqrt(theta))`` from one bundle.

    Out-of-the-money options are inverted: puts for ``z < 0``, calls otherwise.
    """
    theta = bundle.horizon
    s0 = float(bundle.prices[0, 0])
    out = []
    for z in zs:
        strike = s0 * math.exp(z * math.sqrt(theta))
        kind = PUT if z < 0 else CALL
        est = mc_price(bundle, strike, kind, control_vol)
        try:
            iv = implied_vol(est.price, s0, strike, theta, kind)
        except PriceBandError as exc:
            raise PriceBandError(f"theta={theta}, z={z}: {exc}", exc.bound) from exc
        vega = bs_greeks(s0, strike, theta, iv, kind).vega
        out.append(SmilePoint(theta, float(z), strike, iv, est.stderr / vega, kind,
                              est.price, est.stderr))
    return out


def mc_smile(spec: ModelSpec, thetas, zs, n_steps: int = 512, n_paths: int = 100_000,
             seed: int = 0, antithetic: bool = True, control_variate: bool = True,
             workers: int = 1) -> list[SmilePoint]:
    """Monte Carlo smile on a maturity x scaled-moneyness grid.

    Each maturity gets its own simulation on a uniform ``n_steps`` grid with
    seed derived from ``(seed, maturity index)``; output is sorted by
    ``(theta, z)`` whatever the worker count.
    """
    thetas = [float(t) for t in thetas]
    if any(not t > 0 for t in thetas):
        raise ValueError("all maturities must be positive")

    def one(item):
        i, theta = item
        grid = SimGrid(theta, n_steps, n_paths, derive_seed(seed, i), antithetic=antithetic)
        bundle = simulate(spec, grid, keep="terminal")
        cv = _control_vol(spec, theta) if control_variate else None
        return smile_from_bundle(bundle, zs, cv)

    items = list(enumerate(thetas))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            groups = list(pool.map(one, items))
    else:
        groups = [one(it) for it in items]
    points = [p for g in groups for p in g]
    return sorted(points, key=lambda p: (p.theta, p.z))


@dataclass(frozen=True)
class PowerLawFit:
    H_hat: float
    coeff_hat: float
    r2: float
    theta_range: tuple
    z_pair: tuple
    H_stderr: float = math.nan
    coeff_stderr: float = math.nan
    skews: tuple = field(default=(), repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["theta_range"] = list(self.theta_range)
        d["z_pair"] = list(self.z_pair)
        d["skews"] = [list(s) for s in self.skews]
        return d


def _find(group, z):
    for p in group:
        if math.isclose(p.z, z, rel_tol=1e-12, abs_tol=1e-12):
            return p
    return None


def skew_by_maturity(points, z_pair=(0.1, -0.1)) -> list[tuple[float, float, float]]:
    """``(theta, skew, stderr)`` with skew the finite difference in log-moneyness."""
    z, zeta = z_pair
    if z == zeta:
        raise ValueError("z and zeta must differ")
    groups = defaultdict(list)
    for p in points:
        groups[p.theta].append(p)
    out = []
    for theta in sorted(groups):
        a, b = _find(groups[theta], z), _find(groups[theta], zeta)
        if a is None or b is None:
            continue
        dk = (z - zeta) * math.sqrt(theta)
        out.append((theta, (a.iv - b.iv) / dk, math.hypot(a.stderr_iv, b.stderr_iv) / abs(dk)))
    return out


def fit_power_law(points, z_pair=(0.1, -0.1)) -> PowerLawFit:
    """Fit ``skew(theta) = c theta^(H - 1/2)`` by weighted least squares in log-log scale.

    Weights are inverse variances of ``log|skew|`` from the implied-vol
    standard errors (unweighted if any error is zero). Refuses to fit when
    the skew vanishes or changes sign across maturities.
    """
    sk = skew_by_maturity(points, z_pair)
    if len(sk) < 3:
        raise ValueError(f"need at least 3 maturities carrying both z values, got {len(sk)}")
    theta = np.array([s[0] for s in sk])
    skew = np.array([s[1] for s in sk])
    se = np.array([s[2] for s in sk])
    if np.any(np.abs(skew) <= ZERO_SKEW):
        raise ContractRefusal("skew is zero at some maturity; no power law to fit")
    sign = np.sign(skew)
    if np.any(sign != sign[0]):
        detail = ", ".join(f"{t:.4g}:{s:+.3g}" for t, s in zip(theta, skew))
        raise ContractRefusal(f"skew changes sign across maturities ({detail})")
    x = np.log(theta)
    y = np.log(np.abs(skew))
    w = (np.abs(skew) / se) ** 2 if np.all(se > 0) and np.all(np.isfinite(se)) else np.ones_like(x)
    X = np.column_stack((np.ones_like(x), x))
    XtW = X.T * w
    cov = np.linalg.inv(XtW @ X)
    beta = cov @ (XtW @ y)
    resid = y - X @ beta
    ybar = (w @ y) / w.sum()
    ss_tot = w @ (y - ybar) ** 2
    ss_res = w @ resid**2
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = x.size - 2
    if dof > 0:
        cov = cov * (ss_res / dof)
    coeff = float(sign[0] * math.exp(beta[0]))
    return PowerLawFit(
        H_hat=float(beta[1] + 0.5),
        coeff_hat=coeff,
        r2=float(r2),
        theta_range=(float(theta.min()), float(theta.max())),
        z_pair=tuple(float(v) for v in z_pair),
        H_stderr=float(math.sqrt(cov[1, 1])),
        coeff_stderr=float(abs(coeff) * math.sqrt(cov[0, 0])),
        skews=tuple(sk),
    )


def skew_bound(theta: float) -> float:
    """Model-free bound ``sqrt(pi / (2 theta))`` on the ATM skew."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    return math.sqrt(math.pi / (2.0 * theta))


@dataclass(frozen=True)
class SkewBoundCheck:
    theta: float
    slope_atm: float
    bound: float
    ok: bool


def skew_bound_check(points) -> SkewBoundCheck:
    """Central-difference ATM skew of a single-maturity smile against the bound."""
    points = list(points)
    thetas = {p.theta for p in points}
    if len(thetas) != 1:
        raise ValueError("skew_bound_check takes points of a single maturity")
    theta = thetas.pop()
    below = [p for p in points if p.z < 0]
    above = [p for p in points if p.z > 0]
    if not below or not above:
        raise ValueError("points must bracket z = 0")
    lo = max(below, key=lambda p: p.z)
    hi = min(above, key=lambda p: p.z)
    slope = (hi.iv - lo.iv) / ((hi.z - lo.z) * math.sqrt(theta))
    b = skew_bound(theta)
    return SkewBoundCheck(theta, slope, b, abs(slope) <= b * (1.0 + 1e-6))


__all__ = [
    "MCPrice", "PowerLawFit", "SMILE_COLUMNS", "SkewBoundCheck", "SmilePoint", "fit_power_law",
    "mc_price", "mc_smile", "skew_bound", "skew_bound_check", "skew_by_maturity",
    "smile_from_bundle",
]
