"""Forward variance curves, Volterra covariances and path simulation."""

from .curves import ForwardVarianceCurve
from .export import read_binary, write_binary, write_csv
from .simulation import (
    CHOLESKY_EXACT,
    CONSTANT_PATH,
    EULER,
    ConstantVol,
    LocalVol,
    ModelSpec,
    PathBundle,
    RoughBergomi,
    SimGrid,
    holder_estimate,
    simulate,
    simulate_chunks,
)
from .volterra import joint_covariance, volterra_cov, volterra_cross_cov


def vbar(fvc: ForwardVarianceCurve, theta: float) -> float:
    """Average forward variance over ``[0, theta]``."""
    return fvc.vbar(theta)


__all__ = [
    "CHOLESKY_EXACT", "CONSTANT_PATH", "EULER", "ConstantVol", "ForwardVarianceCurve",
    "LocalVol", "ModelSpec", "PathBundle", "RoughBergomi", "SimGrid", "holder_estimate",
    "joint_covariance", "read_binary", "simulate", "simulate_chunks", "vbar", "volterra_cov",
    "volterra_cross_cov", "write_binary", "write_csv",
]
