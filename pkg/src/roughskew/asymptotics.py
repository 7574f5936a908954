"""Short-maturity expansion of implied volatility and its closed forms.

For scaled log-moneyness ``z`` (``k = z sqrt(theta)``),

    sigma_BS(z sqrt(theta), theta) ~ sqrt(vbar(theta)) (1 + alpha(z) theta^H),

with ``alpha`` a double integral of the conditional mean ``E[eta | xi = x]``
of the limit law. The Gaussian limit gives ``alpha`` linear in ``z`` and a
power-law skew; the functions here evaluate both the general quadrature and
the closed forms so the two can be checked against each other.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad

from .errors import NumericalError
from .models.curves import ForwardVarianceCurve
from .models.simulation import PathBundle

GAUSSIAN = "gaussian"
CUSTOM = "custom"
N_HERMITE = 64

_GH_X, _GH_W = np.polynomial.hermite_e.hermegauss(N_HERMITE)
_GH_W = _GH_W / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class LimitLaw:
    """Limit in law of the rescaled (return, variance) pair at short maturity.

    ``cond_exp(x)`` is ``E[eta | xi = x]``; it must grow at most polynomially.
    """

    kind: str
    v0: float
    H: float
    sigma: tuple | None = None
    cond_exp: Callable | None = None

    def __post_init__(self):
        if not self.v0 > 0:
            raise ValueError("v0 must be positive")
        if not 0.0 < self.H <= 0.5:
            raise ValueError(f"H must lie in (0, 1/2], got {self.H}")
        if self.kind == GAUSSIAN:
            s = np.asarray(self.sigma, dtype=float)
            if s.shape != (2, 2) or s[0, 1] != s[1, 0]:
                raise ValueError("Sigma must be a symmetric 2x2 matrix")
            if not math.isclose(s[0, 0], self.v0, rel_tol=1e-12):
                raise ValueError("Sigma_11 must equal v(0)")
            if np.linalg.eigvalsh(s).min() < -1e-12 * np.abs(s).max():
                raise ValueError("Sigma must be positive semidefinite")
        elif self.kind == CUSTOM:
            if not callable(self.cond_exp):
                raise ValueError("custom law needs a callable cond_exp")
        else:
            raise ValueError(f"unknown limit law kind {self.kind!r}")

    @classmethod
    def gaussian(cls, v0: float, H: float, sigma12: float, sigma22: float | None = None) -> "LimitLaw":
        """Gaussian law; ``sigma22`` defaults to the smallest PSD value."""
        if sigma22 is None:
            sigma22 = sigma12 * sigma12 / v0
        return cls(GAUSSIAN, float(v0), float(H), ((float(v0), float(sigma12)), (float(sigma12), float(sigma22))))

    @classmethod
    def rough_bergomi(cls, v0: float, H: float, eta: float, rho: float) -> "LimitLaw":
        s12 = sigma12_rough_bergomi(v0, rho, eta, H)
        return cls.gaussian(v0, H, s12, eta * eta / (2.0 * H))

    @classmethod
    def custom(cls, v0: float, H: float, cond_exp: Callable) -> "LimitLaw":
        return cls(CUSTOM, float(v0), float(H), cond_exp=cond_exp)

    @property
    def sigma12(self) -> float:
        if self.kind != GAUSSIAN:
            raise AttributeError("sigma12 is only defined for the Gaussian law")
        return self.sigma[0][1]

    def conditional_mean(self, x):
        if self.kind == GAUSSIAN:
            return np.asarray(x, dtype=float) * (self.sigma12 / self.v0)
        return np.asarray(self.cond_exp(x), dtype=float)


def sigma12_rough_bergomi(v0: float, rho: float, eta: float, H: float) -> float:
    """Return/variance limit covariance ``sqrt(v0) rho eta / (H + 1/2)``."""
    return math.sqrt(v0) * rho * eta / (H + 0.5)


def alpha_quadrature(law: LimitLaw, z: float, epsrel: float = 1e-10) -> float:
    """``alpha(z) = 1/2 int_0^1 u^H int E[eta | xi = z sqrt(u) + sqrt(v0 (1-u)) w] phi(w) dw du``.

    The inner integral uses 64-node Gauss-Hermite; the outer one substitutes
    ``u = r^(1/(H+1))``, which absorbs the ``u^H`` weight, and runs adaptive
    quadrature in ``r``.
    """
    H, v0 = law.H, law.v0
    inv = 1.0 / (H + 1.0)

    def inner(r):
        u = r**inv
        x = z * math.sqrt(u) + math.sqrt(v0 * max(1.0 - u, 0.0)) * _GH_X
        vals = law.conditional_mean(x)
        if not np.all(np.isfinite(vals)):
            raise NumericalError(f"conditional mean is not finite near x = {x[0]:.4g}")
        return float(vals @ _GH_W)

    val, _ = quad(inner, 0.0, 1.0, epsabs=1e-13, epsrel=epsrel, limit=200)
    return 0.5 * val * inv


def alpha_gaussian(v0: float, H: float, sigma12: float, z: float) -> float:
    """Gaussian closed form ``Sigma_12 z / (2 v0 (H + 3/2))``."""
    if not v0 > 0:
        raise ValueError("v0 must be positive")
    return sigma12 / (2.0 * v0) * z / (H + 1.5)


def skew_slope_gaussian(v0: float, H: float, sigma12: float, theta: float) -> float:
    """ATM skew per unit log-moneyness, ``Sigma_12 / (sqrt(v0)(2H+3)) theta^(H-1/2)``."""
    if not v0 > 0 or not theta > 0:
        raise ValueError("v0 and theta must be positive")
    return sigma12 / (math.sqrt(v0) * (2.0 * H + 3.0)) * theta ** (H - 0.5)


def rough_bergomi_slope(rho: float, eta: float, H: float, theta: float) -> float:
    """``rho eta / ((H+1/2)(2H+3)) theta^(H-1/2)``; independent of ``v0``."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    return rho * eta / ((H + 0.5) * (2.0 * H + 3.0)) * theta ** (H - 0.5)


def half_rule_slope(sigma_fn: Callable, s0: float) -> float:
    """Half the spot derivative of a local volatility at ``(s0, 0)``.

    Central difference with step ``1e-6 s0``.
    """
    h = 1e-6 * s0
    up = float(sigma_fn(s0 + h, 0.0))
    dn = float(sigma_fn(s0 - h, 0.0))
    return 0.5 * (up - dn) / (2.0 * h)


@dataclass(frozen=True)
class ExpansionResult:
    theta: float
    z: float
    leading: float
    alpha_z: float
    iv: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha"] = d.pop("alpha_z")
        return d


def expansion_iv(fvc: ForwardVarianceCurve, law: LimitLaw, theta: float, z: float,
                 route: str = "auto") -> ExpansionResult:
    """Two-term expansion ``sqrt(vbar(theta)) (1 + alpha(z) theta^H)``.

    ``route`` picks the closed form (``"closed"``, Gaussian laws only), the
    quadrature (``"quadrature"``) or the closed form when available (``"auto"``).
    The remainder is not modelled.
    """
    if not theta > 0:
        raise ValueError("theta must be positive")
    if not math.isclose(fvc.v0, law.v0, rel_tol=1e-12):
        raise ValueError(f"law v0={law.v0} differs from the curve's v(0)={fvc.v0}")
    if route == "auto":
        route = "closed" if law.kind == GAUSSIAN else "quadrature"
    if route == "closed":
        if law.kind != GAUSSIAN:
            raise ValueError("closed-form alpha needs a Gaussian law")
        a = alpha_gaussian(law.v0, law.H, law.sigma12, z)
    elif route == "quadrature":
        a = alpha_quadrature(law, z)
    else:
        raise ValueError(f"unknown route {route!r}")
    lead = math.sqrt(fvc.vbar(theta))
    return ExpansionResult(theta, z, lead, a, lead * (1.0 + a * theta**law.H))


@dataclass(frozen=True)
class LeverageEstimate:
    theta: float
    lambda_: float
    stderr: float
    vbar: float
    slope_via_lambda: float
    slope_stderr: float


def implied_leverage(bundle: PathBundle) -> LeverageEstimate:
    """Model-free implied leverage over the bundle horizon and the skew it implies.

    ``lambda = E[int (S_t/S_0 - 1) V_t dt] / E[int V_t dt]`` with left-point
    sums; the implied skew is ``lambda / (2 theta sqrt(vbar))`` where ``vbar``
    is estimated from the same paths. Standard errors use the delta method on
    independent sample units.
    """
    if bundle.n_paths == 0 or bundle.times.size < 2:
        raise ValueError("implied_leverage needs a non-empty bundle with at least one step")
    theta = bundle.horizon
    dt = np.diff(bundle.times)
    left_v = bundle.variances[:, :-1]
    ret = bundle.prices[:, :-1] / bundle.prices[:, :1] - 1.0
    num = bundle.sample_units((ret * left_v) @ dt)
    den = bundle.sample_units(left_v @ dt)
    n = num.size
    mn, md = num.mean(), den.mean()
    lam = mn / md
    if n > 1:
        resid = num - lam * den
        se = float(resid.std(ddof=1) / math.sqrt(n) / md)
    else:
        se = math.nan
    vb = md / theta
    scale = 1.0 / (2.0 * theta * math.sqrt(vb))
    return LeverageEstimate(theta, float(lam), se, float(vb), float(lam * scale), se * scale)
