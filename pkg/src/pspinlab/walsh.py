"""Hypercube arithmetic: Walsh-Hadamard transforms and subset-mask polynomials.

Configurations on {-1,+1}^n are packed into integers: bit i is 0 when spin i
is +1 and 1 when it is -1, so index 0 is the all-(+1) configuration and
site 0 is the distinguished first particle.  Any multilinear function of the
spins is stored by its coefficients on the monomials chi_S(sigma) =
prod_{i in S} sigma_i, indexed by the subset mask S, and evaluated on the
whole cube with one O(n 2^n) transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def fwht(vec: np.ndarray) -> np.ndarray:
    """Walsh-Hadamard transform: out[i] = sum_j (-1)^popcount(i & j) vec[j].

    Returns a new float64 array; the transform is its own inverse up to a
    factor of len(vec).
    """
    a = np.array(vec, dtype=np.float64, copy=True)
    n = a.size
    if n & (n - 1):
        raise ValueError(f"length must be a power of two, got {n}")
    h = 1
    while h < n:
        b = a.reshape(-1, 2 * h)
        x = b[:, :h].copy()
        y = b[:, h:]
        b[:, :h] = x + y
        b[:, h:] = x - y
        h *= 2
    return a


def popcounts(n_sites: int) -> np.ndarray:
    """Number of -1 spins for every configuration index, as uint8."""
    pc = np.zeros(1, dtype=np.uint8)
    for _ in range(n_sites):
        pc = np.concatenate([pc, pc + 1])
    return pc


def spin_sums(n_sites: int) -> np.ndarray:
    """sum_i sigma_i for every configuration index."""
    return (n_sites - 2 * popcounts(n_sites).astype(np.int64)).astype(np.float64)


def signs_of_masks(masks: np.ndarray, index: int) -> np.ndarray:
    """chi_S(sigma) for an array of subset masks S at one configuration."""
    parity = np.bitwise_count(masks & np.int64(index)) & 1
    return 1.0 - 2.0 * parity.astype(np.float64)


@dataclass
class CubePolynomial:
    """Multilinear function on {-1,+1}^n_sites stored by subset-mask coefficients."""

    n_sites: int
    coef: np.ndarray  # dense, length 2^n_sites, coef[mask] multiplies chi_mask

    _nz_masks: np.ndarray = field(init=False, repr=False)
    _nz_coef: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.coef.shape != (1 << self.n_sites,):
            raise ValueError("coefficient array length must be 2^n_sites")
        nz = np.nonzero(self.coef)[0]
        self._nz_masks = nz.astype(np.int64)
        self._nz_coef = self.coef[nz]

    @classmethod
    def zeros(cls, n_sites: int) -> "CubePolynomial":
        return cls(n_sites, np.zeros(1 << n_sites))

    @classmethod
    def from_terms(cls, n_sites: int, masks: np.ndarray, values: np.ndarray) -> "CubePolynomial":
        """Accumulate (mask, value) terms; repeated masks add."""
        coef = np.zeros(1 << n_sites)
        np.add.at(coef, np.asarray(masks, dtype=np.int64), np.asarray(values, dtype=np.float64))
        return cls(n_sites, coef)

    @property
    def n_terms(self) -> int:
        return int(self._nz_masks.size)

    def evaluate_all(self) -> np.ndarray:
        """Values on every configuration, ordered by packed index."""
        return fwht(self.coef)

    def evaluate(self, index: int) -> float:
        """Value at one configuration, by direct summation over nonzero terms."""
        return float(np.dot(self._nz_coef, signs_of_masks(self._nz_masks, index)))

    def flip_delta(self, index: int, site: int) -> float:
        """f(flip(sigma, site)) - f(sigma): only terms whose mask contains the site react."""
        hit = (self._nz_masks >> np.int64(site)) & np.int64(1) == 1
        masks = self._nz_masks[hit]
        return float(-2.0 * np.dot(self._nz_coef[hit], signs_of_masks(masks, index)))

    def sum_of_coef(self) -> float:
        return float(self._nz_coef.sum())
