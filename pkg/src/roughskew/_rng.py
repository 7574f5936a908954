"""Counter-based normal streams keyed by (seed, stream id, path index).

Every path (or antithetic pair) owns a fixed window of the Philox counter
space, so the draws for path ``p`` never depend on how paths are split into
blocks or how blocks are scheduled across workers.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_TWO_M53 = 2.0 ** -53


def stream_key(seed: int, *stream_id: int) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream_id))
    return ss.generate_state(2, np.uint64)


def derive_seed(seed: int, *keys: int) -> int:
    """64-bit child seed for a sub-experiment (maturity index, replica, ...)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


class NormalStream:
    """Standard normals for path indices, ``draws`` per path.

    Uniforms are built from one 64-bit Philox word each (53 high bits,
    centred in the cell) and mapped through the inverse normal CDF, so the
    consumption per path is exact and known in advance.
    """

    def __init__(self, seed: int, draws: int, stream_id: tuple[int, ...] = ()):
        if draws < 1:
            raise ValueError("draws must be positive")
        self.key = stream_key(seed, *stream_id)
        self.draws = int(draws)
        self._counters = -(-self.draws // 4)

    def normals(self, start: int, count: int) -> np.ndarray:
        """Array of shape ``(count, draws)`` for paths ``start .. start+count-1``."""
        bg = np.random.Philox(key=self.key, counter=[start * self._counters, 0, 0, 0])
        raw = bg.random_raw(count * self._counters * 4).reshape(count, self._counters * 4)
        u = ((raw[:, : self.draws] >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
        return ndtri(u)
