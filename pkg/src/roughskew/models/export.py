"""PathBundle export: columnar CSV and the ``RSKW`` binary dump.

Binary layout (little-endian)::

    magic    4 bytes   b"RSKW"
    version  u16       1
    n_paths  u32
    n_times  u32
    times      f64[n_times]
    prices     f64[n_paths * n_times]   row-major, one row per path
    variances  f64[n_paths * n_times]
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .simulation import PathBundle

MAGIC = b"RSKW"
VERSION = 1
_HEADER = struct.Struct("<4sHII")


def write_csv(bundle: PathBundle, path) -> None:
    """One row per (time, path): ``time,path_id,S,V``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "path_id", "S", "V"])
        for p in range(bundle.n_paths):
            for t, s, v in zip(bundle.times, bundle.prices[p], bundle.variances[p]):
                w.writerow([repr(float(t)), p, repr(float(s)), repr(float(v))])


def write_binary(bundle: PathBundle, path) -> None:
    n_paths, n_times = bundle.prices.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n_paths, n_times))
        for arr in (bundle.times, bundle.prices, bundle.variances):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_binary(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(times, prices, variances)`` from an ``RSKW`` dump."""
    data = Path(path).read_bytes()
    magic, version, n_paths, n_times = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"not an RSKW file (magic {magic!r})")
    if version != VERSION:
        raise ValueError(f"unsupported RSKW version {version}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    expected = n_times + 2 * n_paths * n_times
    if body.size != expected:
        raise ValueError(f"RSKW payload has {body.size} values, expected {expected}")
    times = body[:n_times].copy()
    prices = body[n_times : n_times + n_paths * n_times].reshape(n_paths, n_times).copy()
    variances = body[n_times + n_paths * n_times :].reshape(n_paths, n_times).copy()
    return times, prices, variances
