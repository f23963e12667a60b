"""Packed spin configurations on the hypercube."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SpinConfiguration:
    """A point of {-1,+1}^dimension, packed into an integer.

    Bit i is 0 for spin +1 and 1 for spin -1; site 0 is the first particle.
    """

    bits: int
    dimension: int

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if not 0 <= self.bits < (1 << self.dimension):
            raise ValueError("bits out of range for dimension")

    @classmethod
    def from_spins(cls, spins) -> "SpinConfiguration":
        arr = np.asarray(spins)
        if not np.all(np.abs(arr) == 1):
            raise ValueError("spins must be +/-1")
        bits = 0
        for i, s in enumerate(arr):
            if s < 0:
                bits |= 1 << i
        return cls(bits, len(arr))

    @classmethod
    def all_plus(cls, dimension: int) -> "SpinConfiguration":
        return cls(0, dimension)

    def spins(self) -> np.ndarray:
        """Dense +/-1 vector, site 0 first."""
        idx = np.arange(self.dimension)
        return 1.0 - 2.0 * ((self.bits >> idx) & 1).astype(np.float64)

    def spin(self, site: int) -> int:
        return 1 - 2 * ((self.bits >> site) & 1)

    def flip(self, site: int) -> "SpinConfiguration":
        if not 0 <= site < self.dimension:
            raise ValueError(f"site {site} out of range")
        return SpinConfiguration(self.bits ^ (1 << site), self.dimension)

    def drop_first(self) -> "SpinConfiguration":
        """rho(sigma): remove the first particle, keeping sites 1..N-1."""
        if self.dimension < 2:
            raise ValueError("cannot drop the only site")
        return SpinConfiguration(self.bits >> 1, self.dimension - 1)

    def negate(self) -> "SpinConfiguration":
        return SpinConfiguration(self.bits ^ ((1 << self.dimension) - 1), self.dimension)

    def spin_sum(self) -> int:
        return self.dimension - 2 * int(self.bits).bit_count()
