"""Cluster decompositions of the hypercube and their audits.

The construction is greedy heaviest-center overlap balls: repeatedly take
the heaviest unassigned configuration as a center and claim every unassigned
configuration within overlap q_cut of it.  The audit operations, not the
construction, carry the correctness burden: they measure exactly how well a
decomposition exhausts the measure, keeps within-cluster overlaps high,
keeps cross-cluster overlaps low, and concentrates the overlap near the
estimated top value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .gibbs import GibbsTable, OverlapLaw, _as_indices, overlap_law
from .walsh import popcounts


class NoOverlapJump(RuntimeError):
    """Raised when the overlap law shows no detectable mass lobe at the top."""


@dataclass
class QStarEstimate:
    q_hat: float
    a_hat: float
    lobe_mass: float
    lobe_lo: float
    lobe_hi: float

    @property
    def q_cut(self) -> float:
        return self.q_hat - self.a_hat


def estimate_qstar(
    law: OverlapLaw,
    jump_mass_floor: float = 0.05,
    atom_floor: float = 1e-3,
) -> QStarEstimate:
    """Locate the top lobe of an overlap law.

    Atoms below atom_floor are discarded and the search is confined to the
    upper half of the surviving support.  The lobe is everything above the
    largest internal support gap (in grid steps of 2/N, ties resolved
    upward); a gap-free region counts as the lobe only when it is separated
    from the support below it.  When the region touches the bulk, the lobe
    boundary falls back to the largest rise of the mass profile, so smeared
    finite-N laws with a genuine top bump are still usable; a profile that
    only decays toward +1 has no jump and raises NoOverlapJump.
    """
    n = law.n_sites
    keep = law.masses >= atom_floor
    if not keep.any():
        raise NoOverlapJump("no overlap atoms above the atom floor")
    support = law.support[keep]
    masses = law.masses[keep]
    grid = np.rint((support + 1.0) * n / 2.0).astype(np.int64)  # ascending

    mid = (support[0] + support[-1]) / 2.0
    region = support >= mid - 1e-12
    r_grid = grid[region]
    first_region = int(np.nonzero(region)[0][0])
    separated_below = first_region == 0 or grid[first_region] - grid[first_region - 1] >= 2

    lobe_start = None
    if r_grid.size >= 2:
        gaps = np.diff(r_grid)
        widest = int(gaps.max())
        if widest >= 2:
            cut = int(np.nonzero(gaps == widest)[0][-1])  # topmost widest gap
            lobe_start = first_region + cut + 1
        elif separated_below:
            lobe_start = first_region
        else:
            rises = np.diff(masses[region])
            if rises.max() > 0:
                cut = int(np.argmax(rises))  # steepest rise of the profile
                lobe_start = first_region + cut + 1
    elif separated_below:
        lobe_start = first_region
    if lobe_start is None:
        raise NoOverlapJump("no overlap jump detected")

    lobe_support = support[lobe_start:]
    lobe_masses = masses[lobe_start:]
    lobe_mass = float(lobe_masses.sum())
    if lobe_mass < jump_mass_floor:
        raise NoOverlapJump(
            f"no overlap jump detected: top lobe mass {lobe_mass:.4g} < floor {jump_mass_floor}"
        )
    q_hat = float(np.dot(lobe_support, lobe_masses) / lobe_mass)
    a_hat = max(q_hat - lobe_support[0], lobe_support[-1] - q_hat, 1.0 / n)
    return QStarEstimate(
        q_hat=q_hat,
        a_hat=float(a_hat),
        lobe_mass=lobe_mass,
        lobe_lo=float(lobe_support[0]),
        lobe_hi=float(lobe_support[-1]),
    )


@dataclass
class ClusterDecomposition:
    """Disjoint configuration-index sets ordered by nonincreasing Gibbs mass."""

    n_sites: int
    clusters: list[np.ndarray]
    masses: np.ndarray
    centers: np.ndarray
    q_cut: float
    residual_mass: float

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def center_bitstring(self, alpha: int) -> str:
        bits = int(self.centers[alpha])
        return "".join("-" if (bits >> i) & 1 else "+" for i in range(self.n_sites))

    def mass_partition(self):
        from .pd import MassPartition

        return MassPartition(weights=self.masses.copy(), truncation_deficit=self.residual_mass)

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_sites": self.n_sites,
                "q_cut": self.q_cut,
                "residual_mass": self.residual_mass,
                "clusters": [
                    {
                        "center": self.center_bitstring(a),
                        "mass": float(self.masses[a]),
                        "size": int(self.clusters[a].size),
                    }
                    for a in range(self.n_clusters)
                ],
            },
            indent=2,
            sort_keys=True,
        )


def build_clusters(
    g: GibbsTable,
    q_cut: float,
    max_clusters: int = 32,
    mass_floor: float = 0.01,
) -> ClusterDecomposition:
    """Greedy heaviest-center overlap balls; deterministic, ties by index ascending."""
    if not -1.0 <= q_cut < 1.0 + 1e-12:
        raise ValueError(f"q_cut must be in [-1, 1), got {q_cut}")
    n = g.n_sites
    pc = popcounts(n).astype(np.int64)
    d_max = int(np.floor(n * (1.0 - q_cut) / 2.0 + 1e-9))
    order = np.argsort(-g.probs, kind="stable")  # ties broken by index ascending
    assigned = np.zeros(1 << n, dtype=bool)
    clusters: list[np.ndarray] = []
    centers: list[int] = []
    masses: list[float] = []
    remaining = 1.0
    cursor = 0
    while len(clusters) < max_clusters and remaining >= mass_floor:
        while cursor < order.size and assigned[order[cursor]]:
            cursor += 1
        if cursor >= order.size:
            break
        center = int(order[cursor])
        ball = (pc[np.arange(1 << n) ^ center] <= d_max) & ~assigned
        members = np.nonzero(ball)[0]
        assigned[members] = True
        mass = float(g.probs[members].sum())
        clusters.append(members)
        centers.append(center)
        masses.append(mass)
        remaining -= mass
    mass_arr = np.array(masses)
    center_arr = np.array(centers, dtype=np.int64)
    rank = np.lexsort((center_arr, -mass_arr))
    return ClusterDecomposition(
        n_sites=n,
        clusters=[clusters[i] for i in rank],
        masses=mass_arr[rank],
        centers=center_arr[rank],
        q_cut=q_cut,
        residual_mass=max(remaining, 0.0),
    )


def single_cluster_decomposition(g: GibbsTable) -> ClusterDecomposition:
    """The whole cube as one cluster (the high-temperature convention)."""
    return ClusterDecomposition(
        n_sites=g.n_sites,
        clusters=[np.arange(1 << g.n_sites)],
        masses=np.array([1.0]),
        centers=np.array([int(np.argmax(g.probs))], dtype=np.int64),
        q_cut=-1.0,
        residual_mass=0.0,
    )


@dataclass
class ClusterAudit:
    """Exact measurements of the four exhaustion/overlap properties."""

    q_n: float
    a_n: float
    q_hat: float
    residual_mass: float          # item 1
    within_low_mass: float        # item 2: pairs in one cluster with R <= q_n - a_n
    cross_high_mass: float        # item 3: pairs across clusters with R >= q_n + a_n
    within_high_mass: float       # complement of item 2 within clusters
    within_pair_mass: float       # sum_alpha mu(C_alpha)^2
    mean_abs_dev: np.ndarray      # item 4 per cluster, normalized within-cluster E|R - q_hat|
    mean_abs_dev_weighted: float

    def rows(self) -> list[tuple[str, float, float]]:
        return [
            ("item1_residual_mass", self.residual_mass, np.nan),
            ("item2_within_low_mass", self.within_low_mass, self.q_n - self.a_n),
            ("item3_cross_high_mass", self.cross_high_mass, self.q_n + self.a_n),
            ("item4_mean_abs_dev_alpha1", float(self.mean_abs_dev[0]) if self.mean_abs_dev.size else np.nan, self.q_hat),
        ]


def audit_clusters(
    g: GibbsTable,
    dec: ClusterDecomposition,
    q_n: float,
    a_n: float,
    q_hat: float,
) -> ClusterAudit:
    """Measure items 1-4 exactly with restricted overlap laws."""
    low_cut = q_n - a_n
    high_cut = q_n + a_n
    within_low = 0.0
    within_high = 0.0
    within_total = 0.0
    devs = []
    union = np.concatenate(dec.clusters) if dec.clusters else np.array([], dtype=np.int64)
    union_high_total = 0.0
    if union.size:
        union_mass = float(g.probs[union].sum())
        if union_mass > 0.0:
            law_u = overlap_law(g, restrict=(union, union))
            union_high_total = law_u.mass_in(high_cut, 1.0) * union_mass**2
    within_high_samecut = 0.0
    for members, mass in zip(dec.clusters, dec.masses):
        if mass <= 0.0 or members.size == 0:
            devs.append(0.0)
            continue
        law = overlap_law(g, restrict=(members, members))
        within_low += law.mass_in(-1.0, low_cut) * mass**2
        within_high += (1.0 - law.mass_in(-1.0, low_cut)) * mass**2
        within_high_samecut += law.mass_in(high_cut, 1.0) * mass**2
        within_total += mass**2
        devs.append(law.mean_abs_deviation(q_hat))
    cross_high = max(union_high_total - within_high_samecut, 0.0)
    weights = dec.masses / dec.masses.sum() if dec.masses.sum() > 0 else dec.masses
    dev_arr = np.array(devs)
    return ClusterAudit(
        q_n=q_n,
        a_n=a_n,
        q_hat=q_hat,
        residual_mass=dec.residual_mass,
        within_low_mass=within_low,
        cross_high_mass=cross_high,
        within_high_mass=within_high,
        within_pair_mass=within_total,
        mean_abs_dev=dev_arr,
        mean_abs_dev_weighted=float(np.dot(weights, dev_arr)) if dev_arr.size else np.nan,
    )


@dataclass
class LiftedDecomposition:
    """Clusters of the reduced measure, doubled over the first spin and re-ranked."""

    n_sites: int                      # of the lifted cube
    base: ClusterDecomposition        # on the (N-1)-site cube
    sets: list[np.ndarray]            # rank order under the full measure
    masses: np.ndarray                # nonincreasing
    pi: np.ndarray                    # pi[rank] = base position (0-based)
    residual_mass: float

    def permutation_value(self, n: int) -> int:
        """pi_N(n) with 1-based rank and base labels."""
        return int(self.pi[n - 1]) + 1


def lift_clusters(base: ClusterDecomposition, g_full: GibbsTable) -> LiftedDecomposition:
    """Double each base cluster over the first spin, then order by full-measure mass.

    The base decomposition should come from the reduced measure built on
    tilde + r(+1, .), which is independent of the local field.
    """
    if base.n_sites != g_full.n_sites - 1:
        raise ValueError("base decomposition must live one site below the full table")
    lifted = []
    masses = []
    for members in base.clusters:
        doubled = np.sort(np.concatenate([members << 1, (members << 1) | 1]))
        lifted.append(doubled)
        masses.append(float(g_full.probs[doubled].sum()))
    mass_arr = np.array(masses)
    rank = np.lexsort((np.arange(len(lifted)), -mass_arr))
    return LiftedDecomposition(
        n_sites=g_full.n_sites,
        base=base,
        sets=[lifted[i] for i in rank],
        masses=mass_arr[rank],
        pi=rank.astype(np.int64),
        residual_mass=float(1.0 - mass_arr.sum()),
    )


def symmetric_difference_mass(g: GibbsTable, set_a, set_b) -> float:
    """mu(A Delta B), exactly."""
    in_a = np.zeros(1 << g.n_sites, dtype=bool)
    in_a[_as_indices(set_a, g.n_sites)] = True
    in_b = np.zeros(1 << g.n_sites, dtype=bool)
    in_b[_as_indices(set_b, g.n_sites)] = True
    return float(g.probs[in_a ^ in_b].sum())


def permutation_tail(lifts: list[LiftedDecomposition], n: int, m: int) -> float:
    """Empirical frequency of {pi_N(n) >= m} over the replicas that rank at least n sets."""
    if n < 1:
        raise ValueError("n must be >= 1")
    values = [lift.permutation_value(n) for lift in lifts if len(lift.sets) >= n]
    if not values:
        raise ValueError(f"no replicas with at least {n} lifted clusters")
    return float(np.mean([v >= m for v in values]))
