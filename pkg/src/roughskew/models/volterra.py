"""Covariances of the Volterra process ``Y_t = int_0^t eta (t-s)^(H-1/2) dW_s``.

Two independent routes for ``Cov(Y_t1, Y_t2)``:

* ``"beta"`` - the incomplete-beta closed form. With ``t1 <= t2``,
  ``d = t2 - t1`` and ``y = t1/t2``,
  ``int_0^t1 (t1-s)^a (t2-s)^a ds = d^(2H) B(y; H+1/2, -2H)`` and
  ``B(y; p, q) = y^p/p 2F1(p, 1-q; p+1; y)`` converges on ``[0, 1)``.
* ``"quad"`` - adaptive quadrature, splitting off the last 0.1% of the
  range and removing the endpoint singularity by ``s = t1 - r^(1/(H+1/2))``.
"""

from __future__ import annotations

import functools

import numpy as np
from scipy.integrate import quad
from scipy.special import hyp2f1

from ..errors import NumericalError


def _check_h(H: float) -> None:
    if not 0.0 < H <= 0.5:
        raise ValueError(f"Hurst exponent must lie in (0, 1/2], got {H}")


def _kernel_cov_beta(lo, hi, H):
    """Vectorised ``int_0^lo (lo-s)^a (hi-s)^a ds`` for ``0 <= lo <= hi``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if H == 0.5:
        return lo.copy()
    p = H + 0.5
    out = np.zeros(np.broadcast(lo, hi).shape)
    lo, hi = np.broadcast_arrays(lo, hi)
    diag = (lo == hi) & (lo > 0)
    out[diag] = lo[diag] ** (2 * H) / (2 * H)
    off = (lo > 0) & ~diag
    if np.any(off):
        l, h = lo[off], hi[off]
        y = l / h
        out[off] = (h - l) ** (2 * H) * y**p / p * hyp2f1(p, 1.0 + 2 * H, p + 1.0, y)
    return out


def _kernel_cov_quad(lo: float, hi: float, H: float) -> float:
    if lo == 0.0:
        return 0.0
    a = H - 0.5
    p = H + 0.5
    if hi == lo:
        val, _ = quad(lambda s: 1.0, 0.0, lo, weight="alg", wvar=(0.0, 2 * a),
                      epsabs=0.0, epsrel=1e-12)
        return val
    d = hi - lo
    split = lo - lo * 1e-3
    body, _ = quad(lambda s: (lo - s) ** a * (hi - s) ** a, 0.0, split,
                   epsabs=0.0, epsrel=1e-12, limit=200)
    r_max = (lo - split) ** p
    knee = d**p
    pts = [knee] if knee < r_max else None
    tail, _ = quad(lambda r: (d + r ** (1.0 / p)) ** a / p, 0.0, r_max,
                   points=pts, epsabs=0.0, epsrel=1e-12, limit=200)
    return body + tail


def volterra_cov(t1: float, t2: float, H: float, eta: float, method: str = "beta") -> float:
    """``Cov(Y_t1, Y_t2) = eta^2 int_0^min (t1-s)^(H-1/2) (t2-s)^(H-1/2) ds``."""
    _check_h(H)
    if t1 < 0 or t2 < 0:
        raise ValueError("times must be non-negative")
    lo, hi = (t1, t2) if t1 <= t2 else (t2, t1)
    if method == "beta":
        val = float(_kernel_cov_beta(lo, hi, H))
    elif method == "quad":
        val = _kernel_cov_quad(float(lo), float(hi), H)
    else:
        raise ValueError(f"unknown method {method!r}")
    return eta * eta * val


def volterra_cross_cov(t: float, u: float, H: float, eta: float):
    """``Cov(Y_t, W_u) = eta (t^(H+1/2) - (t - min(t,u))^(H+1/2)) / (H+1/2)``."""
    _check_h(H)
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(t < 0) or np.any(u < 0):
        raise ValueError("times must be non-negative")
    p = H + 0.5
    out = eta * (t**p - (t - np.minimum(t, u)) ** p) / p
    return float(out) if out.ndim == 0 else out


def joint_covariance(times, H: float, eta: float) -> np.ndarray:
    """Covariance of ``(Y_t1..Y_tN, W_t1..W_tN)`` for the positive grid times.

    ``times`` must be strictly increasing and positive (``t = 0`` excluded).
    """
    _check_h(H)
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size == 0 or t[0] <= 0 or np.any(np.diff(t) <= 0):
        raise ValueError("grid times must be positive and strictly increasing")
    n = t.size
    ti, tj = np.meshgrid(t, t, indexing="ij")
    lo = np.minimum(ti, tj)
    hi = np.maximum(ti, tj)
    iu = np.triu_indices(n)
    cyy = np.empty((n, n))
    cyy[iu] = _kernel_cov_beta(lo[iu], hi[iu], H)
    cyy.T[iu] = cyy[iu]
    cyy *= eta * eta
    cyw = volterra_cross_cov(ti, tj, H, eta)
    cov = np.empty((2 * n, 2 * n))
    cov[:n, :n] = cyy
    cov[:n, n:] = cyw
    cov[n:, :n] = cyw.T
    cov[n:, n:] = lo
    return cov


def cholesky_with_jitter(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; one diagonal jitter of ``1e-12 * trace/n`` is allowed."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    n = cov.shape[0]
    jittered = cov + np.eye(n) * (1e-12 * np.trace(cov) / n)
    try:
        return np.linalg.cholesky(jittered)
    except np.linalg.LinAlgError:
        raise NumericalError(
            f"joint Volterra covariance is not positive definite for a grid of {n // 2} "
            "points, even after jitter; coarsen the grid or separate coincident times"
        ) from None


@functools.lru_cache(maxsize=2)
def _cached_factor(times_bytes: bytes, H: float, eta: float) -> np.ndarray:
    times = np.frombuffer(times_bytes, dtype=float)
    return cholesky_with_jitter(joint_covariance(times, H, eta))


def joint_factor(times, H: float, eta: float) -> np.ndarray:
    """Cached lower Cholesky factor of :func:`joint_covariance`; read-only."""
    t = np.ascontiguousarray(times, dtype=float)
    L = _cached_factor(t.tobytes(), float(H), float(eta))
    L.setflags(write=False)
    return L
