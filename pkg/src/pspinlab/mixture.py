"""The model function xi and the overlap.

A mixed p-spin model is specified by nonnegative coefficients c_p (p >= 2)
and an external field h >= 0.  The Hamiltonian sampler uses coupling
amplitude sqrt(c_p) per degree, so that the energy covariance of two
configurations at overlap R is exactly N * xi(R) with
xi(t) = sum_p c_p t^p.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

from .spins import SpinConfiguration

DEFAULT_MAX_DEGREE = 4


@dataclass(frozen=True)
class MixtureSpec:
    """Model coefficients {c_p} and external field h."""

    coeffs: Mapping[int, float]
    external_field: float = 0.0
    max_degree: int = DEFAULT_MAX_DEGREE

    def __post_init__(self) -> None:
        cleaned = {}
        for p, c in dict(self.coeffs).items():
            p = int(p)
            c = float(c)
            if p < 2:
                raise ValueError(f"degree {p} < 2 not allowed")
            if p > self.max_degree:
                raise ValueError(f"degree {p} exceeds the configured limit {self.max_degree}")
            if c < 0:
                raise ValueError(f"coefficient c_{p} must be nonnegative")
            if c > 0:
                cleaned[p] = c
        if not cleaned:
            raise ValueError("at least one coefficient must be positive")
        if self.external_field < 0:
            raise ValueError("external field must be nonnegative")
        object.__setattr__(self, "coeffs", MappingProxyType(cleaned))
        object.__setattr__(self, "external_field", float(self.external_field))

    @classmethod
    def sk(cls, c2: float = 1.0, h: float = 0.0) -> "MixtureSpec":
        return cls({2: c2}, external_field=h)

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(sorted(self.coeffs))

    def xi(self, t: float) -> float:
        """xi(t) = sum_p c_p t^p, defined for |t| <= 1."""
        if abs(t) > 1:
            raise ValueError(f"xi is defined on [-1, 1], got t={t}")
        return sum(c * t**p for p, c in self.coeffs.items())

    def xi_prime(self, t: float) -> float:
        """xi'(t) = sum_p p c_p t^(p-1), defined for |t| <= 1."""
        if abs(t) > 1:
            raise ValueError(f"xi' is defined on [-1, 1], got t={t}")
        return sum(p * c * t ** (p - 1) for p, c in self.coeffs.items())

    def onsager_coefficient(self, q: float) -> float:
        """xi'(1) - xi'(q), the correction in the consistency equation."""
        return self.xi_prime(1.0) - self.xi_prime(q)

    def to_config(self) -> dict:
        return {
            "p": list(self.degrees),
            "c_p": [self.coeffs[p] for p in self.degrees],
            "h": self.external_field,
        }

    @classmethod
    def from_config(cls, table: Mapping) -> "MixtureSpec":
        allowed = {"p", "c_p", "h"}
        unknown = set(table) - allowed
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        if "p" not in table or "c_p" not in table:
            raise ValueError("model requires 'p' and 'c_p' lists")
        ps = list(table["p"])
        cs = list(table["c_p"])
        if len(ps) != len(cs):
            raise ValueError("'p' and 'c_p' must have equal length")
        if len(set(int(p) for p in ps)) != len(ps):
            raise ValueError("duplicate degrees in 'p'")
        return cls(dict(zip(ps, cs)), external_field=float(table.get("h", 0.0)))


def overlap(a: SpinConfiguration, b: SpinConfiguration) -> float:
    """R(a, b) = (#agreeing sites - #disagreeing sites) / N, via packed bits."""
    if a.dimension != b.dimension:
        raise ValueError(f"dimension mismatch: {a.dimension} vs {b.dimension}")
    disagree = int(a.bits ^ b.bits).bit_count()
    return (a.dimension - 2 * disagree) / a.dimension
