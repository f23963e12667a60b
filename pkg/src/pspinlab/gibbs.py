"""Exact Gibbs measures on the hypercube by enumeration.

Weights are exp(H(sigma)) with the couplings carrying all temperature
dependence (c_p absorbs beta^2), plus the external field term.  Everything
is kept in the log domain; overlap laws are computed exactly with
Walsh-Hadamard cross-correlations, so no pair enumeration or sampling
fallback is ever needed at supported sizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .disorder import DisorderRealization
from .rng import uniforms
from .walsh import fwht, popcounts, spin_sums

DEFAULT_ENUMERATION_CAP = 20


def log_cosh(x: np.ndarray) -> np.ndarray:
    """log(cosh(x)) without overflow."""
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - np.log(2.0)


@dataclass
class GibbsTable:
    """Exact weights over all 2^N configurations."""

    n_sites: int
    log_weights: np.ndarray  # unnormalized
    log_z: float
    probs: np.ndarray

    @classmethod
    def from_log_weights(cls, n_sites: int, log_weights: np.ndarray) -> "GibbsTable":
        if log_weights.shape != (1 << n_sites,):
            raise ValueError("log_weights length must be 2^n_sites")
        log_z = float(logsumexp(log_weights))
        return cls(n_sites, log_weights, log_z, np.exp(log_weights - log_z))

    def mass(self, subset) -> float:
        return float(self.probs[_as_indices(subset, self.n_sites)].sum())


def _as_indices(subset, n_sites: int) -> np.ndarray:
    """Accept a boolean mask over the cube or an array of configuration indices."""
    arr = np.asarray(subset)
    if arr.dtype == bool:
        if arr.shape != (1 << n_sites,):
            raise ValueError("boolean subset has wrong length")
        return np.nonzero(arr)[0]
    return arr.astype(np.int64).reshape(-1)


def _values_of(f, n_sites: int) -> np.ndarray:
    if callable(f):
        return np.asarray(f(np.arange(1 << n_sites)), dtype=np.float64)
    arr = np.asarray(f, dtype=np.float64)
    if arr.shape != (1 << n_sites,):
        raise ValueError("value array has wrong length")
    return arr


def build_gibbs(
    d: DisorderRealization,
    *,
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP,
    method: str = "walsh",
) -> GibbsTable:
    """Enumerate all 2^N log-weights.

    The default path evaluates the collapsed coupling polynomial with one
    Walsh transform; method="gray" walks the cube in Gray-code order using
    per-flip deltas and is kept as a slow cross-check.
    """
    if d.n_sites > enumeration_cap:
        raise ValueError(f"N={d.n_sites} exceeds the enumeration cap {enumeration_cap}")
    if method == "walsh":
        energies = d.enumerate_energies()
    elif method == "gray":
        energies = d.enumerate_energies_gray()
    else:
        raise ValueError(f"unknown method {method!r}")
    return GibbsTable.from_log_weights(d.n_sites, energies)


def expect(g: GibbsTable, f) -> float:
    """Integral of f against the measure; f is a length-2^N array or a callable on indices."""
    return float(np.dot(g.probs, _values_of(f, g.n_sites)))


def conditional_expect(g: GibbsTable, subset, f) -> float:
    """Expectation conditioned on the subset; a null subset yields f at (1,...,1)."""
    idx = _as_indices(subset, g.n_sites)
    values = _values_of(f, g.n_sites)
    mass = g.probs[idx].sum() if idx.size else 0.0
    if mass <= 0.0:
        return float(values[0])
    return float(np.dot(g.probs[idx], values[idx]) / mass)


@dataclass
class OverlapLaw:
    """Exact distribution of the overlap of two independent draws."""

    n_sites: int
    support: np.ndarray  # ascending multiples of 1/N
    masses: np.ndarray
    provenance: str = ""

    def mass_in(self, lo: float, hi: float) -> float:
        """Mass of [lo, hi], endpoints included up to grid rounding."""
        eps = 1e-9 / self.n_sites
        sel = (self.support >= lo - eps) & (self.support <= hi + eps)
        return float(self.masses[sel].sum())

    def mean_abs_deviation(self, center: float) -> float:
        return float(np.dot(np.abs(self.support - center), self.masses))


def overlap_law(g: GibbsTable, restrict=None, provenance: str = "") -> OverlapLaw:
    """Law of R_12 under mu x mu, optionally with each replica confined to a set.

    Pair masses are grouped by the XOR of the two configurations via the
    identity  sum_sigma f(sigma) h(sigma ^ x) = WHT(WHT(f) * WHT(h)) / 2^N,
    which is exact for any N within the enumeration cap.
    """
    n = g.n_sites
    if restrict is None:
        p1 = p2 = g.probs
    else:
        s1, s2 = restrict
        p1 = np.zeros(1 << n)
        idx1 = _as_indices(s1, n)
        p1[idx1] = g.probs[idx1]
        p2 = np.zeros(1 << n)
        idx2 = _as_indices(s2, n)
        p2[idx2] = g.probs[idx2]
    tot1, tot2 = p1.sum(), p2.sum()
    if tot1 <= 0.0 or tot2 <= 0.0:
        raise ValueError("restriction set has zero Gibbs mass")
    corr = fwht(fwht(p1) * fwht(p2)) / (1 << n)
    corr = np.maximum(corr, 0.0)
    by_distance = np.bincount(popcounts(n), weights=corr, minlength=n + 1)
    support = (n - 2 * np.arange(n + 1)) / n  # descending in distance
    order = np.argsort(support)
    return OverlapLaw(
        n_sites=n,
        support=support[order],
        masses=by_distance[order] / (tot1 * tot2),
        provenance=provenance,
    )


def pool_laws(laws: Sequence[OverlapLaw], provenance: str = "pooled") -> OverlapLaw:
    """Average atom masses across realizations (the disorder average of the law)."""
    if not laws:
        raise ValueError("no laws to pool")
    n = laws[0].n_sites
    if any(law.n_sites != n for law in laws):
        raise ValueError("laws live on different cubes")
    masses = np.mean([law.masses for law in laws], axis=0)
    return OverlapLaw(n, laws[0].support.copy(), masses, provenance)


def tilt(g: GibbsTable, y_values: np.ndarray) -> GibbsTable:
    """Reweight by cosh(y): the one-spin cavity integration of the base measure."""
    y = np.asarray(y_values, dtype=np.float64)
    if y.shape != g.log_weights.shape:
        raise ValueError("y values must cover the whole cube")
    return GibbsTable.from_log_weights(g.n_sites, g.log_weights + log_cosh(y))


@dataclass
class SpinFieldJoint:
    """Exact expectations of (s, y(sigma)) for s in {-1,+1} weighted by e^{s y}.

    Built from a base table on the reduced cube, the field values, and a
    conditioning set; a null set degenerates to s = +1 at (1,...,1).
    """

    y: np.ndarray  # field values on the conditioning set
    log_w_plus: np.ndarray
    log_w_minus: np.ndarray
    tilted_mass: float  # share of the set under the tilted measure
    degenerate: bool

    @classmethod
    def build(cls, g: GibbsTable, y_values: np.ndarray, subset) -> "SpinFieldJoint":
        y_all = np.asarray(y_values, dtype=np.float64)
        if y_all.shape != g.log_weights.shape:
            raise ValueError("y values must cover the whole cube")
        idx = _as_indices(subset, g.n_sites)
        mass = g.probs[idx].sum() if idx.size else 0.0
        if mass <= 0.0:
            return cls(
                y=np.array([y_all[0]]),
                log_w_plus=np.array([0.0]),
                log_w_minus=np.array([-np.inf]),
                tilted_mass=0.0,
                degenerate=True,
            )
        lw = g.log_weights[idx]
        y = y_all[idx]
        log_norm = logsumexp(np.concatenate([lw + y, lw - y]))
        full = logsumexp(g.log_weights + log_cosh(y_all)) + np.log(2.0)
        set_total = logsumexp(lw + log_cosh(y)) + np.log(2.0)
        return cls(
            y=y,
            log_w_plus=lw + y - log_norm,
            log_w_minus=lw - y - log_norm,
            tilted_mass=float(np.exp(set_total - full)),
            degenerate=False,
        )

    def expect(self, phi: Callable[[float, np.ndarray], np.ndarray]) -> float:
        """E phi(s, y) with phi vectorized in its second argument."""
        if self.degenerate:
            return float(np.asarray(phi(1.0, self.y)).reshape(-1)[0])
        plus = np.dot(np.exp(self.log_w_plus), np.asarray(phi(1.0, self.y)))
        minus = np.dot(np.exp(self.log_w_minus), np.asarray(phi(-1.0, self.y)))
        return float(plus + minus)

    @property
    def mean_s(self) -> float:
        return self.expect(lambda s, y: s * np.ones_like(y))

    @property
    def mean_y(self) -> float:
        return self.expect(lambda s, y: y)


def spin_field_joint(g: GibbsTable, y_values: np.ndarray, subset) -> SpinFieldJoint:
    return SpinFieldJoint.build(g, y_values, subset)


def tilted_tanh_mean(g: GibbsTable, y_values: np.ndarray, subset) -> float:
    """Analytic s-marginalization: the mean of tanh(y) under the tilted conditioned base.

    Independent route to SpinFieldJoint.mean_s, used as the exactness oracle.
    """
    y_all = np.asarray(y_values, dtype=np.float64)
    tilted = tilt(g, y_all)
    idx = _as_indices(subset, g.n_sites)
    if idx.size == 0 or g.probs[idx].sum() <= 0.0:
        return 1.0  # degenerate convention: s = +1
    return conditional_expect(tilted, idx, np.tanh(y_all))


def sample_indices(g: GibbsTable, count: int, seed: int) -> np.ndarray:
    """I.i.d. configuration indices from the table (inverse CDF, counter stream)."""
    cdf = np.cumsum(g.probs)
    cdf[-1] = 1.0
    u = uniforms(seed, 0, count)
    return np.searchsorted(cdf, u, side="left").astype(np.int64)


def uniform_table(n_sites: int) -> GibbsTable:
    """The zero-disorder, zero-field table (flat weights)."""
    return GibbsTable.from_log_weights(n_sites, np.zeros(1 << n_sites))


def product_field_table(n_sites: int, h: float) -> GibbsTable:
    """Zero disorder with field h: a product measure with single-site mean tanh(h)."""
    return GibbsTable.from_log_weights(n_sites, h * spin_sums(n_sites))
