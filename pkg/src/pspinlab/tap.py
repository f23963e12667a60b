"""Consistency residuals for the first spin, per cluster and in the limit law.

The residual of a conditional measure is

    m_1 - tanh(ybar + h - (xi'(1) - xi'(q_hat)) * m_1),

with m_1 the conditional mean of the first spin and ybar the conditional
mean of its local field.  The limiting two-variable law p(s, y) ~
exp(-(y - h_a)^2 / (2 sigma2)) * exp(s y) satisfies the same equation
exactly, which pins the quadrature implementation to closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt, tanh

import numpy as np
from numpy.polynomial.hermite import hermgauss

from .clusters import ClusterDecomposition
from .disorder import CavitySplit
from .gibbs import GibbsTable, expect, spin_field_joint
from .mixture import MixtureSpec
from .rng import derive_key, normals


@dataclass
class TapRecord:
    alpha: int          # 1-based rank
    mass: float
    m1: float
    ybar: float
    correction: float
    residual: float


@dataclass
class TapReport:
    q_hat: float
    correction: float
    records: list[TapRecord]

    @property
    def mass_weighted_mean_abs(self) -> float:
        masses = np.array([r.mass for r in self.records])
        if masses.sum() <= 0:
            return float("nan")
        weights = masses / masses.sum()
        return float(np.dot(weights, [abs(r.residual) for r in self.records]))

    @property
    def max_abs_residual(self) -> float:
        return max(abs(r.residual) for r in self.records)

    def rows(self) -> list[dict]:
        return [
            {
                "alpha": r.alpha,
                "mass": r.mass,
                "m1": r.m1,
                "ybar": r.ybar,
                "correction": r.correction,
                "residual": r.residual,
            }
            for r in self.records
        ]


def tap_residuals(
    g_full: GibbsTable,
    split: CavitySplit,
    dec: ClusterDecomposition,
    q_hat: float,
    spec: MixtureSpec,
    top_k: int | None = None,
) -> TapReport:
    """Per-cluster residuals under the conditioned full measure.

    m_1 and ybar are exact conditional expectations; an empty cluster takes
    the all-(+1) convention.
    """
    if g_full.n_sites != split.n_sites:
        raise ValueError("table and split disagree on N")
    y_all = split.y_values()
    corr = spec.onsager_coefficient(q_hat)
    h = spec.external_field
    k = dec.n_clusters if top_k is None else min(top_k, dec.n_clusters)
    records = []
    for a in range(k):
        idx = dec.clusters[a]
        mass = float(dec.masses[a])
        if mass <= 0.0 or idx.size == 0:
            m1, ybar = 1.0, float(y_all[0])
        else:
            p = g_full.probs[idx]
            p = p / p.sum()
            m1 = float(p @ (1.0 - 2.0 * (idx & 1)))
            ybar = float(p @ y_all[idx >> 1])
        residual = m1 - tanh(ybar + h - corr * m1)
        records.append(TapRecord(a + 1, mass, m1, ybar, corr, residual))
    return TapReport(q_hat=q_hat, correction=corr, records=records)


def naive_global_tap_residual(
    g_full: GibbsTable,
    split: CavitySplit,
    spec: MixtureSpec,
    q_hat: float = 0.0,
) -> float:
    """Single-measure residual over the whole cube, written independently of
    the cluster machinery (the high-temperature single-state check)."""
    y_all = split.y_values()
    idx = np.arange(1 << g_full.n_sites)
    m1 = expect(g_full, 1.0 - 2.0 * (idx & 1))
    ybar = expect(g_full, y_all[idx >> 1])
    corr = spec.onsager_coefficient(q_hat)
    return m1 - tanh(ybar + spec.external_field - corr * m1)


def cavity_tap_residuals(
    g_prime: GibbsTable,
    y_values: np.ndarray,
    base_dec: ClusterDecomposition,
    q_hat: float,
    spec: MixtureSpec,
    top_k: int | None = None,
) -> TapReport:
    """Residuals for the cavity coordinate under the tilted conditioned measure.

    <s> and <y> come from the explicit sum over s = +-1 weighted by e^{s y};
    the field h does not enter (the cavity form is stated at h = 0).  The
    mass column is the share of the set under the tilted measure.
    """
    corr = spec.onsager_coefficient(q_hat)
    k = base_dec.n_clusters if top_k is None else min(top_k, base_dec.n_clusters)
    records = []
    for a in range(k):
        joint = spin_field_joint(g_prime, y_values, base_dec.clusters[a])
        s_bar = joint.mean_s
        y_bar = joint.mean_y
        residual = s_bar - tanh(y_bar - corr * s_bar)
        records.append(TapRecord(a + 1, joint.tilted_mass, s_bar, y_bar, corr, residual))
    return TapReport(q_hat=q_hat, correction=corr, records=records)


class QuadratureError(RuntimeError):
    pass


@dataclass
class LimitLaw:
    """The limiting joint law of (s, y) given the conditioning value h_alpha."""

    h_alpha: float
    sigma2: float  # xi'(1) - xi'(q*)
    n_nodes: int = 200

    def __post_init__(self) -> None:
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")

    def _moments_at(self, n_nodes: int) -> tuple[float, float]:
        nodes, weights = hermgauss(n_nodes)
        y = self.h_alpha + sqrt(2.0 * self.sigma2) * nodes
        logw = np.log(weights)
        exps = np.concatenate([logw + y, logw - y])
        exps -= exps.max()
        w = np.exp(exps)
        w /= w.sum()
        half = n_nodes
        mean_s = float(w[:half].sum() - w[half:].sum())
        mean_y = float(np.dot(w[:half], y) + np.dot(w[half:], y))
        return mean_s, mean_y

    def moments(self, tol: float = 1e-10) -> tuple[float, float]:
        """Quadrature values of (<s>, <y>), cross-checked at a lower node count."""
        mean_s, mean_y = self._moments_at(self.n_nodes)
        check_s, check_y = self._moments_at(max(self.n_nodes - 40, 20))
        achieved = max(abs(mean_s - check_s), abs(mean_y - check_y))
        if achieved > tol:
            raise QuadratureError(f"quadrature did not settle: moved {achieved:.3e} > {tol:.1e}")
        return mean_s, mean_y

    def mean_s_exact(self) -> float:
        """Integrating y out: P(s) ~ e^{s h_alpha}, so <s> = tanh(h_alpha)."""
        return tanh(self.h_alpha)

    def mean_y_exact(self) -> float:
        """<y> = h_alpha + sigma2 tanh(h_alpha) (Gaussian shift under the s-tilt)."""
        return self.h_alpha + self.sigma2 * tanh(self.h_alpha)

    def tap_identity_residual(self) -> float:
        """<s> - tanh(<y> - sigma2 <s>) from the quadrature moments; zero in exact arithmetic."""
        mean_s, mean_y = self.moments()
        return mean_s - tanh(mean_y - self.sigma2 * mean_s)


def limit_law_moments(law: LimitLaw) -> tuple[float, float]:
    return law.moments()


def sample_h_alpha(spec: MixtureSpec, q_hat: float, seed: int) -> float:
    """One draw of the conditioning Gaussian, variance xi'(q_hat)."""
    if not 0.0 <= q_hat <= 1.0:
        raise ValueError("q_hat must be in [0, 1]")
    return float(normals(derive_key(seed, "h_alpha"), 0, 1)[0] * sqrt(spec.xi_prime(q_hat)))


def k_tilde(g_prime: GibbsTable, y_values: np.ndarray) -> float:
    """(integral of cosh(2y) under the reduced measure)^(1/2)."""
    return float(sqrt(np.dot(g_prime.probs, np.cosh(2.0 * np.asarray(y_values)))))
