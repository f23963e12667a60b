"""Gaussian coupling tensors, energies, and the exact cavity decomposition.

A disorder realization holds one fully-indexed tensor per active degree p,
entries i.i.d. standard Gaussian, applied with amplitude
sqrt(c_p) * N^{-(p-1)/2}.  With this convention the energy covariance of two
configurations is exactly N * xi(inner/N), where inner is the unnormalized
inner product.

The first particle (site 0) is special: partitioning every tensor entry by
the number ell of its indices equal to site 0 splits the energy exactly as

    H(sigma) = tilde(tau) + sigma_1 * y(tau) + r(sigma_1, tau),

with tau the remaining N-1 spins, tilde collecting ell = 0, y collecting
ell = 1, and r collecting ell >= 2 (even part constant in sigma_1, odd part
proportional to it).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import reduce
from itertools import combinations
from math import comb, sqrt

import numpy as np

from .mixture import MixtureSpec
from .rng import derive_key, normals
from .spins import SpinConfiguration
from .walsh import CubePolynomial, signs_of_masks, spin_sums

DEFAULT_MAX_SITES = 22
DENSE_MAX_DEGREE = 3  # degree-4 tensors are regenerated from the stream on demand
DEFAULT_MEMORY_BUDGET = 1 << 30


def _tensor_key(seed: int, p: int) -> int:
    return derive_key(seed, "tensor", p)


def _index_grids(n_sites: int, p: int) -> np.ndarray:
    """All index tuples of [0, n_sites)^p as an array of shape (p, n_sites^p)."""
    grids = np.indices((n_sites,) * p).reshape(p, -1)
    return grids.astype(np.int64)


def _fold_masks(grids: np.ndarray) -> np.ndarray:
    """XOR-fold one-hot site masks: the set of sites hit an odd number of times."""
    return reduce(np.bitwise_xor, (np.int64(1) << g for g in grids))


def _reduced_masks(grids: np.ndarray) -> np.ndarray:
    """Same fold on sites 1..N-1 re-indexed to 0..N-2; site 0 contributes nothing."""
    shifted = (np.int64(1) << np.maximum(grids - 1, 0)) * (grids > 0)
    return reduce(np.bitwise_xor, (shifted[k] for k in range(grids.shape[0])))


@dataclass
class DisorderRealization:
    """Coupling tensors for one disorder sample, plus its collapsed polynomial."""

    spec: MixtureSpec
    n_sites: int
    seed: int
    tensors: dict[int, np.ndarray | None]  # None for degrees regenerated on demand
    polynomial: CubePolynomial
    planted_shift: dict[int, float] = field(default_factory=dict)

    def amplitude(self, p: int) -> float:
        return sqrt(self.spec.coeffs[p]) * self.n_sites ** (-(p - 1) / 2)

    def tensor(self, p: int) -> np.ndarray:
        cached = self.tensors.get(p)
        if cached is not None:
            return cached
        if p not in self.spec.coeffs:
            raise KeyError(f"degree {p} not active in the model")
        return _raw_tensor(self.spec, self.n_sites, self.seed, p, self.planted_shift)

    def energy(self, sigma: SpinConfiguration) -> float:
        """Full contraction of every tensor with the spin vector, plus the field term."""
        if sigma.dimension != self.n_sites:
            raise ValueError(f"dimension mismatch: {sigma.dimension} vs {self.n_sites}")
        s = sigma.spins()
        total = self.spec.external_field * s.sum()
        for p in self.spec.degrees:
            g = self.tensor(p)
            contracted = g
            for _ in range(p):
                contracted = contracted @ s
            total += self.amplitude(p) * float(contracted)
        return total

    def energy_delta(self, sigma: SpinConfiguration, site: int) -> float:
        """energy(flip(sigma, site)) - energy(sigma) without re-contracting everything.

        Expanding the multilinear form in the flipped coordinate: only terms
        whose index tuple hits the site an odd number of times change sign, so
        the delta is a sum over nonempty axis subsets of sliced contractions.
        """
        if not 0 <= site < self.n_sites:
            raise ValueError(f"site {site} out of range")
        s = sigma.spins()
        s_k = s[site]
        delta = -2.0 * self.spec.external_field * s_k
        for p in self.spec.degrees:
            g = self.tensor(p)
            amp = self.amplitude(p)
            for m in range(1, p + 1):
                coeff = (-2.0 * s_k) ** m
                for axes in combinations(range(p), m):
                    sub = g
                    for ax in sorted(axes, reverse=True):
                        sub = np.take(sub, site, axis=ax)
                    while sub.ndim:
                        sub = sub @ s
                    delta += amp * coeff * float(sub)
        return delta

    def enumerate_energies(self) -> np.ndarray:
        """H(sigma) + h * sum(sigma) for every configuration, by Walsh transform."""
        values = self.polynomial.evaluate_all()
        h = self.spec.external_field
        if h:
            values = values + h * spin_sums(self.n_sites)
        return values

    def enumerate_energies_gray(self) -> np.ndarray:
        """Same values walked in Gray-code order with per-flip deltas (slow oracle)."""
        n = self.n_sites
        out = np.empty(1 << n)
        sigma = SpinConfiguration.all_plus(n)
        out[0] = self.energy(sigma)
        prev_gray = 0
        for i in range(1, 1 << n):
            gray = i ^ (i >> 1)
            site = (gray ^ prev_gray).bit_length() - 1
            out[gray] = out[prev_gray] + self.energy_delta(sigma, site)
            sigma = sigma.flip(site)
            prev_gray = gray
        return out


def _raw_tensor(spec: MixtureSpec, n_sites: int, seed: int, p: int,
                planted_shift: dict[int, float] | None = None) -> np.ndarray:
    g = normals(_tensor_key(seed, p), 0, n_sites**p).reshape((n_sites,) * p)
    if planted_shift and p in planted_shift:
        g = g + planted_shift[p]
    return g


def _memory_estimate(spec: MixtureSpec, n_sites: int) -> int:
    dense = sum(n_sites**p for p in spec.degrees if p <= DENSE_MAX_DEGREE)
    transient = max(n_sites**p for p in spec.degrees)
    # grids + masks for the collapse run about 6 int64 arrays of tensor size
    return 8 * (dense + 7 * transient) + 8 * (1 << n_sites)


def sample_disorder(
    spec: MixtureSpec,
    n_sites: int,
    seed: int,
    *,
    max_sites: int = DEFAULT_MAX_SITES,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
    _planted_shift: dict[int, float] | None = None,
) -> DisorderRealization:
    """Draw every coupling tensor from the counter-based stream keyed by (seed, p)."""
    if not 2 <= n_sites <= max_sites:
        raise ValueError(f"n_sites must be in [2, {max_sites}], got {n_sites}")
    estimate = _memory_estimate(spec, n_sites)
    if estimate > memory_budget:
        raise MemoryError(
            f"estimated {estimate} bytes exceeds the budget of {memory_budget}"
        )
    planted = dict(_planted_shift or {})
    tensors: dict[int, np.ndarray | None] = {}
    coef = np.zeros(1 << n_sites)
    for p in spec.degrees:
        g = _raw_tensor(spec, n_sites, seed, p, planted)
        amp = sqrt(spec.coeffs[p]) * n_sites ** (-(p - 1) / 2)
        masks = _fold_masks(_index_grids(n_sites, p))
        np.add.at(coef, masks, amp * g.reshape(-1))
        tensors[p] = g if p <= DENSE_MAX_DEGREE else None
    return DisorderRealization(
        spec=spec,
        n_sites=n_sites,
        seed=seed,
        tensors=tensors,
        polynomial=CubePolynomial(n_sites, coef),
        planted_shift=planted,
    )


def zero_disorder(spec: MixtureSpec, n_sites: int) -> DisorderRealization:
    """All-zero tensors (test hook): the energy reduces to the field term."""
    tensors = {p: np.zeros((n_sites,) * p) for p in spec.degrees}
    return DisorderRealization(
        spec=spec,
        n_sites=n_sites,
        seed=0,
        tensors=tensors,
        polynomial=CubePolynomial.zeros(n_sites),
    )


def planted_two_well(
    n_sites: int,
    seed: int,
    *,
    kappa: float = 2.0,
    noise_c2: float = 0.05,
) -> DisorderRealization:
    """Two-well instance: a mean-field ferromagnet of strength kappa plus weak disorder.

    Shifting every degree-2 entry by kappa / (2 sqrt(c2 N)) adds
    (kappa/2) * N * m^2 to the energy, so for kappa > 1 the Gibbs measure
    splits into wells around +-(1,...,1) of mass ~ 1/2 each.
    """
    spec = MixtureSpec({2: noise_c2}, external_field=0.0)
    shift = kappa / (2.0 * sqrt(noise_c2) * sqrt(n_sites))
    return sample_disorder(spec, n_sites, seed, _planted_shift={2: shift})


# ---------------------------------------------------------------------------
# Cavity decomposition
# ---------------------------------------------------------------------------


@dataclass
class CavitySplit:
    """The three processes of the first-particle split, as reduced polynomials.

    All four polynomials live on the (N-1)-site cube of tau = (sigma_2, ...,
    sigma_N); r(sigma_1, tau) = r_even(tau) + sigma_1 * r_odd(tau).
    """

    n_sites: int
    spec: MixtureSpec
    tilde: CubePolynomial
    y_field: CubePolynomial
    r_even: CubePolynomial
    r_odd: CubePolynomial
    ell_counts: dict[int, np.ndarray]  # per degree: entry count for each ell

    _y_values: np.ndarray | None = field(default=None, repr=False)
    _hprime_values: np.ndarray | None = field(default=None, repr=False)

    def amplitude(self, p: int) -> float:
        return sqrt(self.spec.coeffs[p]) * self.n_sites ** (-(p - 1) / 2)

    def y_values(self) -> np.ndarray:
        """y(tau) on all of the reduced cube."""
        if self._y_values is None:
            self._y_values = self.y_field.evaluate_all()
        return self._y_values

    def hprime_values(self) -> np.ndarray:
        """H'(tau) = tilde(tau) + r(+1, tau), the measure independent of y."""
        if self._hprime_values is None:
            self._hprime_values = (
                self.tilde.evaluate_all()
                + self.r_even.evaluate_all()
                + self.r_odd.evaluate_all()
            )
        return self._hprime_values

    def r_values(self, sigma1: int) -> np.ndarray:
        if sigma1 not in (-1, 1):
            raise ValueError("sigma1 must be +-1")
        return self.r_even.evaluate_all() + sigma1 * self.r_odd.evaluate_all()

    def reconstruct_energies(self) -> np.ndarray:
        """tilde + sigma_1 y + r assembled over the full cube (no field term)."""
        base = self.tilde.evaluate_all() + self.r_even.evaluate_all()
        odd = self.y_values() + self.r_odd.evaluate_all()
        out = np.empty(1 << self.n_sites)
        out[0::2] = base + odd  # bit0 = 0 means sigma_1 = +1
        out[1::2] = base - odd
        return out

    def flip_variance_structural(self) -> float:
        """Var(r(1,tau) - r(-1,tau)) from the counted odd-ell entries."""
        total = 0.0
        for p, counts in self.ell_counts.items():
            amp2 = self.amplitude(p) ** 2
            odd = sum(int(counts[ell]) for ell in range(3, p + 1, 2))
            total += 4.0 * amp2 * odd
        return total

    def r_second_moment_structural(self) -> float:
        """E r(sigma_1, tau)^2 at any fixed argument, from counted ell >= 2 entries."""
        total = 0.0
        for p, counts in self.ell_counts.items():
            amp2 = self.amplitude(p) ** 2
            total += amp2 * sum(int(counts[ell]) for ell in range(2, p + 1))
        return total


def cavity_split(d: DisorderRealization) -> CavitySplit:
    """Partition every tensor entry by ell = #(indices equal to site 0)."""
    n = d.n_sites
    if n < 2:
        raise ValueError("cavity split needs at least two sites")
    m = n - 1
    coef_tilde = np.zeros(1 << m)
    coef_y = np.zeros(1 << m)
    coef_even = np.zeros(1 << m)
    coef_odd = np.zeros(1 << m)
    ell_counts: dict[int, np.ndarray] = {}
    for p in d.spec.degrees:
        g = d.tensor(p).reshape(-1)
        amp = d.amplitude(p)
        grids = _index_grids(n, p)
        ell = np.sum(grids == 0, axis=0)
        masks = _reduced_masks(grids)
        ell_counts[p] = np.bincount(ell, minlength=p + 1)
        values = amp * g
        np.add.at(coef_tilde, masks[ell == 0], values[ell == 0])
        np.add.at(coef_y, masks[ell == 1], values[ell == 1])
        even = (ell >= 2) & (ell % 2 == 0)
        odd = (ell >= 3) & (ell % 2 == 1)
        np.add.at(coef_even, masks[even], values[even])
        np.add.at(coef_odd, masks[odd], values[odd])
    return CavitySplit(
        n_sites=n,
        spec=d.spec,
        tilde=CubePolynomial(m, coef_tilde),
        y_field=CubePolynomial(m, coef_y),
        r_even=CubePolynomial(m, coef_even),
        r_odd=CubePolynomial(m, coef_odd),
        ell_counts=ell_counts,
    )


def r_flip_variance_formula(spec: MixtureSpec, n_sites: int) -> float:
    """Closed form: 4 sum_p c_p N^{-(p-1)} sum_{ell >= 3 odd} C(p, ell) (N-1)^{p - ell}."""
    total = 0.0
    for p, c in spec.coeffs.items():
        inner = sum(comb(p, ell) * (n_sites - 1) ** (p - ell) for ell in range(3, p + 1, 2))
        total += 4.0 * c * n_sites ** (-(p - 1)) * inner
    return total


def r_second_moment_formula(spec: MixtureSpec, n_sites: int) -> float:
    """Closed form: sum_p c_p N^{-(p-1)} sum_{ell >= 2} C(p, ell) (N-1)^{p - ell}."""
    total = 0.0
    for p, c in spec.coeffs.items():
        inner = sum(comb(p, ell) * (n_sites - 1) ** (p - ell) for ell in range(2, p + 1))
        total += c * n_sites ** (-(p - 1)) * inner
    return total


def energy_covariance_exact(spec: MixtureSpec, n_sites: int, inner: int) -> float:
    """E H(sigma^1) H(sigma^2) = N xi(inner / N) for full configurations."""
    return n_sites * spec.xi(inner / n_sites)


def tilde_covariance_exact(spec: MixtureSpec, n_sites: int, inner: int) -> float:
    """E tilde(tau^1) tilde(tau^2) = N xi(inner / N); inner runs over N-1 sites."""
    return n_sites * spec.xi(inner / n_sites)


def y_covariance_exact(spec: MixtureSpec, n_sites: int, inner: int) -> float:
    """E y(tau^1) y(tau^2) = xi'(inner / N); inner runs over N-1 sites."""
    return spec.xi_prime(inner / n_sites)


# ---------------------------------------------------------------------------
# Monte Carlo over disorder replicas
# ---------------------------------------------------------------------------


def process_values_over_replicas(
    spec: MixtureSpec,
    n_sites: int,
    seeds: list[int],
    full_bits: list[int],
    reduced_bits: list[int],
) -> dict[str, np.ndarray]:
    """H, tilde, and y evaluated at fixed configurations for many replicas.

    Each process value is a linear functional of the Gaussian entries, so per
    degree we precompute one sign matrix per process and reduce each replica
    to matrix products.  Returns arrays of shape (len(seeds), n_configs).
    """
    n_full = len(full_bits)
    n_red = len(reduced_bits)
    out = {
        "H": np.zeros((len(seeds), n_full)),
        "tilde": np.zeros((len(seeds), n_red)),
        "y": np.zeros((len(seeds), n_red)),
    }
    for p in spec.degrees:
        amp = sqrt(spec.coeffs[p]) * n_sites ** (-(p - 1) / 2)
        grids = _index_grids(n_sites, p)
        ell = np.sum(grids == 0, axis=0)
        masks_full = _fold_masks(grids)
        masks_red = _reduced_masks(grids)
        sel_tilde = ell == 0
        sel_y = ell == 1
        sign_full = np.stack([signs_of_masks(masks_full, b) for b in full_bits], axis=1) if n_full else None
        sign_tilde = (
            np.stack([signs_of_masks(masks_red[sel_tilde], b) for b in reduced_bits], axis=1)
            if n_red else None
        )
        sign_y = (
            np.stack([signs_of_masks(masks_red[sel_y], b) for b in reduced_bits], axis=1)
            if n_red else None
        )
        for i, seed in enumerate(seeds):
            g = normals(_tensor_key(seed, p), 0, n_sites**p)
            if sign_full is not None:
                out["H"][i] += amp * (g @ sign_full)
            if sign_tilde is not None:
                out["tilde"][i] += amp * (g[sel_tilde] @ sign_tilde)
            if sign_y is not None:
                out["y"][i] += amp * (g[sel_y] @ sign_y)
    return out


@dataclass
class CovarianceRow:
    process: str
    pair: tuple[int, int]
    inner: int
    estimate: float
    stderr: float
    exact: float
    idealized: float

    @property
    def within_3se(self) -> bool:
        return abs(self.estimate - self.exact) <= 3.0 * self.stderr


@dataclass
class CovarianceReport:
    n_sites: int
    n_replicas: int
    rows: list[CovarianceRow]

    @property
    def all_within_3se(self) -> bool:
        return all(row.within_3se for row in self.rows)


def local_field_covariance_check(
    spec: MixtureSpec,
    n_sites: int,
    pairs: list[tuple[int, int]],
    n_replicas: int,
    seed: int,
) -> CovarianceReport:
    """Monte Carlo estimate of E y(tau^1) y(tau^2) against xi' of the inner product.

    The pairs are packed (N-1)-site configurations.  The exact column is
    xi'(inner / N) and the idealized one xi'(inner / (N-1)); they differ by
    O(1/N).
    """
    bits = sorted({b for pair in pairs for b in pair})
    pos = {b: i for i, b in enumerate(bits)}
    seeds = [derive_key(seed, "replica", r) for r in range(n_replicas)]
    values = process_values_over_replicas(spec, n_sites, seeds, [], bits)["y"]
    rows = []
    for b1, b2 in pairs:
        prods = values[:, pos[b1]] * values[:, pos[b2]]
        inner = (n_sites - 1) - 2 * int(b1 ^ b2).bit_count()
        rows.append(
            CovarianceRow(
                process="y",
                pair=(b1, b2),
                inner=inner,
                estimate=float(prods.mean()),
                stderr=float(prods.std(ddof=1) / sqrt(n_replicas)),
                exact=y_covariance_exact(spec, n_sites, inner),
                idealized=spec.xi_prime(inner / (n_sites - 1)),
            )
        )
    return CovarianceReport(n_sites=n_sites, n_replicas=n_replicas, rows=rows)


# ---------------------------------------------------------------------------
# Binary dump (little-endian float64 tensors with a small header)
# ---------------------------------------------------------------------------

_MAGIC = b"PSPINDIS"


def save_disorder(d: DisorderRealization, path) -> None:
    degrees = d.spec.degrees
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIQ", 1, d.n_sites, d.seed & (1 << 64) - 1))
        fh.write(struct.pack("<I", len(degrees)))
        for p in degrees:
            fh.write(struct.pack("<I", p))
            fh.write(d.tensor(p).astype("<f8").tobytes())


def load_disorder(path, spec: MixtureSpec) -> DisorderRealization:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError("not a disorder dump")
        _, n_sites, seed = struct.unpack("<IIQ", fh.read(16))
        (n_deg,) = struct.unpack("<I", fh.read(4))
        tensors: dict[int, np.ndarray | None] = {}
        coef = np.zeros(1 << n_sites)
        for _ in range(n_deg):
            (p,) = struct.unpack("<I", fh.read(4))
            raw = fh.read(8 * n_sites**p)
            g = np.frombuffer(raw, dtype="<f8").reshape((n_sites,) * p).copy()
            if p not in spec.coeffs:
                raise ValueError(f"dump has degree {p} absent from the model")
            amp = sqrt(spec.coeffs[p]) * n_sites ** (-(p - 1) / 2)
            np.add.at(coef, _fold_masks(_index_grids(n_sites, p)), amp * g.reshape(-1))
            tensors[p] = g
    if set(tensors) != set(spec.degrees):
        raise ValueError("dump degrees do not match the model")
    return DisorderRealization(
        spec=spec,
        n_sites=n_sites,
        seed=seed,
        tensors=tensors,
        polynomial=CubePolynomial(n_sites, coef),
    )
