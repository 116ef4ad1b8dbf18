"""Counter-based random streams for reproducible simulation.

Stream ``(seed, index)`` is Philox4x64-10 keyed with the 128-bit value
``seed | index << 64``; blocks of four outputs come from counters 1, 2, ...
(numpy increments the counter before each block). Uniforms are formed
from the raw 64-bit outputs as ``((raw >> 11) + 0.5) * 2**-53``, which
lies strictly inside (0, 1). Normals and exponentials are inverse-CDF
transforms of those uniforms, so every draw is a fixed function of
integer arithmetic plus ``log``/``sqrt``.
"""
import numpy as np

from .normal import normal_quantile

MASK64 = (1 << 64) - 1
#: Stream index reserved for censoring-rate pilot samples.
PILOT_STREAM = (1 << 32) - 1


class Stream:
    def __init__(self, seed, index):
        self.seed = int(seed) & MASK64
        self.index = int(index) & MASK64
        self._bitgen = np.random.Philox(key=self.seed | (self.index << 64))

    def uniforms(self, size):
        raw = self._bitgen.random_raw(size)
        return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53

    def normals(self, size):
        return normal_quantile(self.uniforms(size))

    def exponentials(self, size):
        return -np.log1p(-self.uniforms(size))


def uniform_to_normal(u):
    return normal_quantile(u)


def uniform_to_exponential(u):
    return -np.log1p(-np.asarray(u, dtype=float))
