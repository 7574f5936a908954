"""Forward variance curves ``v(t) = E[V_t]``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad

FLAT = "flat"
AFFINE = "affine"
TABULATED = "tabulated"


@dataclass(frozen=True)
class ForwardVarianceCurve:
    """Expected spot variance as a function of time, in variance per year.

    Build with :meth:`flat`, :meth:`affine` or :meth:`tabulated`. Tabulated
    curves interpolate linearly between knots and extend flat outside them.
    """

    kind: str
    params: tuple
    knots_t: tuple = field(default=(), repr=False)
    knots_v: tuple = field(default=(), repr=False)

    @classmethod
    def flat(cls, v0: float) -> "ForwardVarianceCurve":
        if not v0 > 0:
            raise ValueError(f"flat variance must be positive, got {v0}")
        return cls(FLAT, (float(v0),))

    @classmethod
    def affine(cls, v0: float, slope: float) -> "ForwardVarianceCurve":
        if not v0 > 0:
            raise ValueError(f"v(0) must be positive, got {v0}")
        return cls(AFFINE, (float(v0), float(slope)))

    @classmethod
    def tabulated(cls, times, values) -> "ForwardVarianceCurve":
        t = np.asarray(times, dtype=float)
        v = np.asarray(values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise ValueError("tabulated curve needs matching 1-d knots (at least two)")
        if np.any(np.diff(t) <= 0) or t[0] < 0:
            raise ValueError("knot times must be non-negative and increasing")
        if np.any(v <= 0):
            raise ValueError("tabulated variances must be positive")
        return cls(TABULATED, (), tuple(t.tolist()), tuple(v.tolist()))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == FLAT:
            out = np.full_like(t, self.params[0])
        elif self.kind == AFFINE:
            v0, slope = self.params
            out = v0 + slope * t
        else:
            out = np.interp(t, self.knots_t, self.knots_v)
        if np.any(out <= 0):
            raise ValueError(f"forward variance non-positive on the requested times ({self.kind})")
        return float(out) if out.ndim == 0 else out

    @property
    def v0(self) -> float:
        return float(self(0.0))

    def integral(self, theta: float) -> float:
        """``int_0^theta v(t) dt``."""
        if theta < 0:
            raise ValueError("theta must be non-negative")
        if theta == 0:
            return 0.0
        if self.kind == FLAT:
            return self.params[0] * theta
        if self.kind == AFFINE:
            v0, slope = self.params
            self(theta)  # positivity on [0, theta]
            return v0 * theta + 0.5 * slope * theta * theta
        inner = [t for t in self.knots_t if 0.0 < t < theta]
        val, _ = quad(self.__call__, 0.0, theta, points=inner or None,
                      epsabs=0.0, epsrel=1e-10, limit=200)
        return val

    def vbar(self, theta: float) -> float:
        """Average forward variance ``(1/theta) int_0^theta v``; its root is the VIX-style level."""
        if not theta > 0:
            raise ValueError(f"theta must be positive, got {theta}")
        return self.integral(theta) / theta

    def rescaled_cumulative(self, theta: float) -> Callable[[float], float]:
        """``w(u) = (1/theta) int_0^{theta u} v(t) dt`` for the Bachelier put problem."""
        if not theta > 0:
            raise ValueError("theta must be positive")
        return lambda u: self.integral(theta * float(u)) / theta

    def describe(self) -> dict:
        if self.kind == TABULATED:
            return {"kind": self.kind, "times": list(self.knots_t), "values": list(self.knots_v)}
        names = ("v0",) if self.kind == FLAT else ("v0", "slope")
        return {"kind": self.kind, **dict(zip(names, self.params))}
