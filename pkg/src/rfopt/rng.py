"""Counter-based random streams.

Every stochastic routine in the library draws from a Philox generator keyed
by ``(seed, index)``, so sample ``k`` of a given seed is the same bit
pattern no matter how many samples are drawn, in what order, or on how many
threads.  Normal deviates use the Box-Muller transform on the raw uniforms,
which keeps the mapping from counter stream to output trivially portable.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError

_TWO64 = 1 << 64


def stream(seed: int, index: int) -> np.random.Generator:
    """Generator for the independent substream ``(seed, index)``."""
    if not 0 <= int(seed) < _TWO64:
        raise ParameterError(f"seed must be in [0, 2**64), got {seed}")
    if not 0 <= int(index) < _TWO64:
        raise ParameterError(f"stream index must be in [0, 2**64), got {index}")
    key = np.array([seed, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def standard_normals(seed: int, index: int, n: int) -> np.ndarray:
    """Draw ``n`` N(0,1) deviates from the substream ``(seed, index)``."""
    if n < 0:
        raise ParameterError(f"n must be nonnegative, got {n}")
    gen = stream(seed, index)
    pairs = (n + 1) // 2
    u = gen.random((pairs, 2))
    # 1-u lies in (0,1], so the log is always finite.
    radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    angle = 2.0 * np.pi * u[:, 1]
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:n]
