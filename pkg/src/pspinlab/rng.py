"""Counter-based deterministic random streams.

Every random quantity in the package is a pure function of a 64-bit key and
a stream index, so regeneration never depends on draw order, block size, or
thread schedule.  The mixer is SplitMix64; Gaussians come from applying the
inverse normal CDF to the mixed 53-bit uniforms.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """SplitMix64 finalizer on a Python int (mod 2^64)."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * _MIX1) & _MASK64
    x = ((x ^ (x >> 27)) * _MIX2) & _MASK64
    return x ^ (x >> 31)


def derive_key(*parts: int) -> int:
    """Fold integer labels (seed, degree, replica index, ...) into one 64-bit key.

    Strings are accepted as labels and hashed bytewise, so call sites can tag
    sub-streams, e.g. ``derive_key(seed, "tensor", p)``.
    """
    key = 0
    for part in parts:
        if isinstance(part, str):
            for byte in part.encode():
                key = mix64(key + _GOLDEN + byte)
            continue
        key = mix64(key + _GOLDEN + (int(part) & _MASK64))
    return key


def _mixed_bits(key: int, start: int, count: int) -> np.ndarray:
    idx = np.arange(start, start + count, dtype=np.uint64)
    state = np.uint64(key) + (idx + np.uint64(1)) * np.uint64(_GOLDEN)
    x = (state ^ (state >> np.uint64(30))) * np.uint64(_MIX1)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_MIX2)
    return x ^ (x >> np.uint64(31))


def uniforms(key: int, start: int, count: int) -> np.ndarray:
    """Uniform(0,1) values at stream positions [start, start+count)."""
    bits = _mixed_bits(key, start, count)
    return (bits >> np.uint64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54


def normals(key: int, start: int, count: int) -> np.ndarray:
    """Standard normal values at stream positions [start, start+count)."""
    return ndtri(uniforms(key, start, count))


def exponentials(key: int, start: int, count: int) -> np.ndarray:
    """Unit-rate exponential values at stream positions [start, start+count)."""
    return -np.log(uniforms(key, start, count))
