"""Rigidity analyses of an aligned patch framework.

Covers the consensus realization, the rigidity matrix, overlap ranks,
two-view verdicts, the overlap graphs and their coarsening, partition
checks, and extraction of certificates from the kernel of LL(S).
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from pydantic import BaseModel, Field
from scipy.linalg import block_diag, eigh, orth

from config import MAX_PARTITION_VIEWS, eig_threshold, numerical_rank
from certify import (
    AlignedStress,
    CertificateMatrix,
    build_aligned_stress,
    build_certificate_matrix,
    criticality_tolerance,
    is_perfect_alignment,
)
from errors import ContractError, PreconditionError
from framework import PatchFramework, affine_rank
from manifold import Alignment, skew_pairs
from stress import StressSystem

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Realization:
    """Consensus point positions x_k(S) and view translations t_i, with the point mean at zero."""

    alignment: Alignment
    points: np.ndarray
    translations: np.ndarray
    centered: bool = True

    def aligned_coord(self, fw: PatchFramework, k: int, i: int) -> np.ndarray:
        """S_i^T x_{k,i} + t_i."""
        return self.alignment.blocks[i].T @ fw.coord(k, i) + self.translations[i]


def realize(sys: StressSystem, s: Alignment) -> Realization:
    """Theta(S) = S^T B L_Gamma^+: columns 0..n-1 are points, n..n+m-1 are translations."""
    theta = s.stacked.T @ sys.B @ sys.laplacian_pinv
    points = theta[:, :sys.n].T
    translations = theta[:, sys.n:].T
    center = points.mean(axis=0) if sys.n else np.zeros(sys.d)
    return Realization(alignment=s, points=points - center, translations=translations - center)


def rigidity_matrix(fw: PatchFramework, realization: Realization) -> np.ndarray:
    """One row per unordered within-view pair (k1, k2): (x_k1 - x_k2)^T at k1, its negation at k2."""
    d, n = fw.d, fw.n
    rows = []
    for i in range(fw.m):
        members = fw.view_points(i)
        for a, k1 in enumerate(members):
            for k2 in members[a + 1:]:
                diff = realization.points[k1] - realization.points[k2]
                row = np.zeros(n * d)
                row[k1 * d:(k1 + 1) * d] = diff
                row[k2 * d:(k2 + 1) * d] = -diff
                rows.append(row)
    return np.array(rows).reshape(len(rows), n * d)


def infinitesimal_rigidity_test(fw: PatchFramework, realization: Realization) -> Tuple[int, bool]:
    R = rigidity_matrix(fw, realization)
    if R.size == 0:
        rank = 0
    else:
        rank = numerical_rank(np.linalg.svd(R, compute_uv=False), max(R.shape))
    target = fw.n * fw.d - fw.d * (fw.d + 1) // 2
    return rank, rank >= target


class OverlapRank(BaseModel):
    rank: int
    singular_values: List[float]
    shared_points: List[int] = Field(description="0-based indices of the points shared by A and B.")
    empty: bool


def _views_of(fw: PatchFramework, views: Sequence[int]) -> set:
    return {k for i in views for k in fw.view_points(i)}


def _centered_rank(columns: np.ndarray, d: int) -> Tuple[int, np.ndarray]:
    if columns.shape[1] == 0:
        return 0, np.zeros(0)
    centered = columns - columns.mean(axis=1, keepdims=True)
    sv = np.linalg.svd(centered, compute_uv=False)
    return numerical_rank(sv, max(d, columns.shape[1])), sv


def overlap_columns(
    fw: PatchFramework,
    a: Sequence[int],
    b: Sequence[int],
    realization: Optional[Realization] = None,
) -> Tuple[np.ndarray, List[int]]:
    """Columns of B-bar for the overlap of view sets A and B, one per shared point.

    Without a realization A and B must be single views and the columns are the
    local coordinates x_{k,i} of view i = A.  With one, each column is
    S_i^T x_{k,i} + t_i for the lowest view i in A containing k.
    """
    a, b = sorted(set(a)), sorted(set(b))
    if not a or not b or set(a) & set(b):
        raise ContractError(f"view sets must be non-empty and disjoint, got A={a}, B={b}")
    shared = sorted(_views_of(fw, a) & _views_of(fw, b))
    if realization is None:
        if len(a) != 1 or len(b) != 1:
            raise ContractError("overlap of view sets needs an aligned realization")
        cols = np.array([fw.coord(k, a[0]) for k in shared]).reshape(len(shared), fw.d).T
        return cols, shared

    scale = max(1.0, float(np.max(np.abs(fw.coords))) if fw.coords.size else 1.0)
    cols = np.zeros((fw.d, len(shared)))
    for c, k in enumerate(shared):
        owners = [i for i in a if fw.has_edge(k, i)]
        values = [realization.aligned_coord(fw, k, i) for i in owners]
        spread = max(np.linalg.norm(v - values[0]) for v in values)
        if spread > 1e-8 * scale:
            raise PreconditionError(
                f"views {[i + 1 for i in owners]} disagree on point {k + 1} by {spread:.3e}; "
                "the alignment is not perfect"
            )
        cols[:, c] = values[0]
    return cols, shared


def overlap_rank(
    fw: PatchFramework,
    a: Sequence[int],
    b: Sequence[int],
    realization: Optional[Realization] = None,
) -> OverlapRank:
    cols, shared = overlap_columns(fw, a, b, realization)
    rank, sv = _centered_rank(cols, fw.d)
    return OverlapRank(rank=rank, singular_values=sv.tolist(), shared_points=shared, empty=not shared)


def skew_basis(d: int) -> List[np.ndarray]:
    basis = []
    for r, s in skew_pairs(d):
        e = np.zeros((d, d))
        e[r, s], e[s, r] = 1.0, -1.0
        basis.append(e)
    return basis


class TwoViewVerdict(BaseModel):
    critical: bool = Field(description="M = B(S)_12 B(S)_21^T is symmetric.")
    skew_form_psd: bool = Field(description="Tr(Omega^T M Omega) >= 0 on Skew(d).")
    rank_condition: bool = Field(description="rank(M) >= d - 1.")
    nondegenerate: bool
    unique: bool
    symmetry_residual: float = Field(description="||M - M^T||_F / 2, the criticality residual of either view.")
    min_skew_form: Optional[float] = Field(description="Smallest eigenvalue of Omega -> Tr(Omega^T M Omega).")
    rank_M: int
    overlap_rank: int


def two_view_tests(fw: PatchFramework, sys: StressSystem, s: Alignment) -> TwoViewVerdict:
    """Criticality, non-degeneracy and uniqueness of a two-view alignment from M alone.

    The Hessian along the horizontal direction (Omega, -Omega) is
    2 Tr(Omega^T M Omega), so the verdict requires that form to be positive
    on Skew(d); with M PSD, as at a perfect alignment, this is the same as
    rank(M) >= d - 1.
    """
    if fw.m != 2:
        raise ContractError(f"two-view tests need exactly 2 views, got m={fw.m}")
    d = fw.d
    shared = fw.shared_points(0, 1)
    b12 = np.array([s.blocks[0].T @ fw.coord(k, 0) for k in shared]).reshape(len(shared), d).T
    b21 = np.array([s.blocks[1].T @ fw.coord(k, 1) for k in shared]).reshape(len(shared), d).T
    if shared:
        b12 = b12 - b12.mean(axis=1, keepdims=True)
        b21 = b21 - b21.mean(axis=1, keepdims=True)
    M = b12 @ b21.T
    residual = 0.5 * float(np.linalg.norm(M - M.T))
    critical = residual <= criticality_tolerance(sys)

    basis = skew_basis(d)
    tau = eig_threshold(max(len(basis), 1), float(np.linalg.norm(M)))
    if basis:
        form = np.array([[np.trace(ea.T @ M @ eb) for eb in basis] for ea in basis])
        min_form = float(eigh(0.5 * (form + form.T), eigvals_only=True)[0])
        psd, positive = min_form >= -tau, min_form > tau
    else:
        min_form, psd, positive = None, True, True
    rank_m = numerical_rank(np.linalg.svd(M, compute_uv=False), d)
    nondegenerate = critical and positive and rank_m >= d - 1
    return TwoViewVerdict(
        critical=critical,
        skew_form_psd=psd,
        rank_condition=rank_m >= d - 1,
        nondegenerate=nondegenerate,
        unique=nondegenerate and rank_m == d,
        symmetry_residual=residual,
        min_skew_form=min_form,
        rank_M=rank_m,
        overlap_rank=overlap_rank(fw, [0], [1]).rank,
    )


# --- Overlap graphs ---

class CoarseningRound(BaseModel):
    groups: int
    edges: int
    components: int


class GraphReport(BaseModel):
    graph_G_components: int = Field(description="Components of G: views joined when rank(B_ij) >= d - 1.")
    graph_Gbar_components: int = Field(description="Components of G-bar: views joined when rank(B_ij) = d.")
    coarse_G_size: int
    coarse_Gbar_size: int
    rounds_G: List[CoarseningRound]
    rounds_Gbar: List[CoarseningRound]
    nondegenerate_certified: bool
    unique_certified: bool


def _group_rank(fw: PatchFramework, realization: Realization, g1: set, g2: set) -> Optional[int]:
    """Rank of the centered aligned overlap of two super-views; None if they share no point."""
    shared = sorted(_views_of(fw, g1) & _views_of(fw, g2))
    if not shared:
        return None
    return _centered_rank(realization.points[shared].T, fw.d)[0]


def coarsen(fw: PatchFramework, realization: Realization, min_rank: int) -> Tuple[List[set], List[CoarseningRound]]:
    """Merge connected components of the overlap graph into super-views until nothing merges."""
    groups = [{i} for i in range(fw.m)]
    rounds = []
    while True:
        graph = nx.Graph()
        graph.add_nodes_from(range(len(groups)))
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                rank = _group_rank(fw, realization, groups[a], groups[b])
                if rank is not None and rank >= min_rank:
                    graph.add_edge(a, b)
        components = list(nx.connected_components(graph))
        rounds.append(CoarseningRound(groups=len(groups), edges=graph.number_of_edges(), components=len(components)))
        if len(components) == len(groups):
            return groups, rounds
        groups = [set().union(*(groups[a] for a in comp)) for comp in components]


def _require_perfect(sys: StressSystem, s: Alignment, what: str) -> None:
    if not is_perfect_alignment(sys, s):
        raise PreconditionError(f"{what} needs a perfect alignment (F(S) = 0 up to tolerance)")


def overlap_graph_analysis(sys: StressSystem, s: Alignment) -> GraphReport:
    _require_perfect(sys, s, "overlap graph coarsening")
    fw = sys.framework
    realization = realize(sys, s)
    groups_g, rounds_g = coarsen(fw, realization, fw.d - 1)
    groups_gbar, rounds_gbar = coarsen(fw, realization, fw.d)
    report = GraphReport(
        graph_G_components=rounds_g[0].components,
        graph_Gbar_components=rounds_gbar[0].components,
        coarse_G_size=len(groups_g),
        coarse_Gbar_size=len(groups_gbar),
        rounds_G=rounds_g,
        rounds_Gbar=rounds_gbar,
        nondegenerate_certified=len(groups_g) == 1,
        unique_certified=len(groups_gbar) == 1,
    )
    logger.info("overlap graphs: |G*|=%d |Gbar*|=%d", report.coarse_G_size, report.coarse_Gbar_size)
    return report


# --- Partition conditions ---

class PartitionReport(BaseModel):
    partitions: int
    min_rank: int
    argmin_A: List[int] = Field(description="1-based views of the minimizing side A (always holds view 1).")
    locally_necessary_holds: bool = Field(description="Every partition rank >= d - 1.")
    globally_necessary_holds: bool = Field(description="Every partition rank = d.")
    verdict: str = Field(description="'degenerate', 'not-unique' or 'inconclusive'.")


def partition_necessary_check(
    sys: StressSystem,
    s: Alignment,
    max_m: int = MAX_PARTITION_VIEWS,
) -> PartitionReport:
    """Minimum of rank(B(S)_{A,B}) over all bipartitions {A, B} of the views."""
    fw = sys.framework
    if fw.m > max_m:
        raise PreconditionError(
            f"partition enumeration over m={fw.m} views means {2 ** (fw.m - 1) - 1} partitions; "
            f"raise max_m above {max_m} explicitly if that is intended"
        )
    if fw.m < 2:
        raise PreconditionError("partitions need at least 2 views")
    _require_perfect(sys, s, "partition check")
    realization = realize(sys, s)
    best_rank, best_a, count = None, [], 0
    for mask in range(2 ** (fw.m - 1) - 1):
        a = [0] + [i for i in range(1, fw.m) if mask >> (i - 1) & 1]
        b = [i for i in range(fw.m) if i not in a]
        rank = overlap_rank(fw, a, b, realization).rank
        count += 1
        if best_rank is None or rank < best_rank:
            best_rank, best_a = rank, a
    d = fw.d
    if best_rank < d - 1:
        verdict = "degenerate"
    elif best_rank < d:
        verdict = "not-unique"
    else:
        verdict = "inconclusive"
    return PartitionReport(
        partitions=count,
        min_rank=best_rank,
        argmin_A=[i + 1 for i in best_a],
        locally_necessary_holds=best_rank >= d - 1,
        globally_necessary_holds=best_rank == d,
        verdict=verdict,
    )


# --- Certificates ---

@dataclass(frozen=True, eq=False)
class Certificate:
    """Skew blocks Omega_i with L(S) Omega = 0; trivial when every Omega_i is the same."""

    skews: np.ndarray
    trivial: bool
    perturbation: Optional[np.ndarray] = None


def flex_perturbation(sys: StressSystem, s: Alignment, skews: np.ndarray) -> np.ndarray:
    """Point displacements p_k, the consensus of the per-view rotations Omega_i^T S_i^T x_{k,i}."""
    omega = np.asarray(skews).reshape(s.m * s.d, s.d)
    p = omega.T @ block_diag(*s.blocks).T @ sys.B @ sys.laplacian_pinv
    return p[:, :sys.n].T


def _skews_from_omega(vec: np.ndarray, d: int, m: int) -> np.ndarray:
    skews = np.zeros((m, d, d))
    for a, (r, s) in enumerate(skew_pairs(d)):
        skews[:, r, s] = vec[a * m:(a + 1) * m]
        skews[:, s, r] = -vec[a * m:(a + 1) * m]
    return skews


def extract_certificates(sys: StressSystem, aligned: AlignedStress, cert: CertificateMatrix) -> List[Certificate]:
    """Kernel of LL(S) split into the trivial certificates and a basis of the non-trivial rest."""
    s = aligned.alignment
    if not aligned.critical or not is_perfect_alignment(sys, s):
        raise PreconditionError("certificates are only meaningful at a noiseless perfect alignment")
    d, m = s.d, s.m
    npairs = len(skew_pairs(d))
    trivial = np.zeros((npairs * m, npairs))
    for a in range(npairs):
        trivial[a * m:(a + 1) * m, a] = 1.0 / math.sqrt(m)

    certificates = [Certificate(skews=_skews_from_omega(trivial[:, a], d, m), trivial=True) for a in range(npairs)]
    kernel = cert.eigvecs[:, np.abs(cert.eigs) <= cert.tau]
    if kernel.size:
        rest = kernel - trivial @ (trivial.T @ kernel)
        basis = orth(rest, rcond=1e-8) if np.linalg.norm(rest) > 1e-8 else np.zeros((rest.shape[0], 0))
        for c in range(basis.shape[1]):
            skews = _skews_from_omega(basis[:, c], d, m)
            spread = np.max(np.linalg.norm(skews - skews.mean(axis=0), axis=(1, 2)))
            is_trivial = bool(spread <= 1e-8 * max(np.linalg.norm(skews), 1.0))
            certificates.append(
                Certificate(
                    skews=skews,
                    trivial=is_trivial,
                    perturbation=None if is_trivial else flex_perturbation(sys, s, skews),
                )
            )
    logger.info(
        "extracted %d certificates (%d non-trivial)",
        len(certificates), sum(not c.trivial for c in certificates),
    )
    return certificates


def remove_view(fw: PatchFramework, s: Alignment, i: int) -> Tuple[PatchFramework, Alignment]:
    """Drop view i and the points that only it contains; the remaining indices are compacted."""
    if not 0 <= i < fw.m:
        raise ContractError(f"view index {i + 1} outside 1..{fw.m}")
    keep_views = [j for j in range(fw.m) if j != i]
    keep_points = sorted({k for j in keep_views for k in fw.view_points(j)})
    point_map = {k: a for a, k in enumerate(keep_points)}
    views = [{point_map[k]: fw.coord(k, j) for k in fw.view_points(j)} for j in keep_views]
    reduced = PatchFramework.from_views(fw.d, len(keep_points), views)
    return reduced, Alignment(s.blocks[keep_views])


def realization_stability_constant(fw: PatchFramework) -> float:
    """(sum_i sigma_min(B_ii B_ii^T)^-2)^(1/2) over the uncentered local coordinates of each view."""
    total = 0.0
    for i in range(fw.m):
        x = fw.view_coords(i)
        if affine_rank(x) < fw.d:
            return math.inf
        sigma = float(eigh(x.T @ x, eigvals_only=True)[0])
        if sigma <= eig_threshold(fw.d, float(np.max(np.abs(x)) ** 2)):
            return math.inf
        total += sigma ** -2
    return math.sqrt(total)


# --- Combined report ---

class CertificateRecord(BaseModel):
    trivial: bool
    skews: List[List[float]] = Field(description="One row-major d*d skew block per view.")
    perturbation: Optional[List[List[float]]] = None


class RigidityReport(BaseModel):
    rank_R: int
    rank_R_target: int
    inf_rigid: bool
    rank_C: int
    rank_C_target: int
    affine_rigid: bool
    unique: Optional[bool] = Field(default=None, description="None when no available test decides.")
    stability_constant: Optional[float] = Field(default=None, description="None when some view is affinely degenerate.")
    two_view: Optional[TwoViewVerdict] = None
    graph: Optional[GraphReport] = None
    partition: Optional[PartitionReport] = None
    certificates: Optional[List[CertificateRecord]] = None
    skipped: Dict[str, str] = Field(default_factory=dict)


def analyze_rigidity(
    sys: StressSystem,
    s: Alignment,
    max_partition_views: int = MAX_PARTITION_VIEWS,
) -> RigidityReport:
    fw = sys.framework
    d, m = fw.d, fw.m
    realization = realize(sys, s)
    rank_r, inf_rigid = infinitesimal_rigidity_test(fw, realization)
    rank_c = sys.rank_C()
    stability = realization_stability_constant(fw)
    report = RigidityReport(
        rank_R=rank_r,
        rank_R_target=fw.n * d - d * (d + 1) // 2,
        inf_rigid=inf_rigid,
        rank_C=rank_c,
        rank_C_target=(m - 1) * d,
        affine_rigid=rank_c == (m - 1) * d,
        stability_constant=None if math.isinf(stability) else stability,
    )
    if m == 2:
        report.two_view = two_view_tests(fw, sys, s)
    else:
        report.skipped["two_view"] = f"needs exactly 2 views, got {m}"

    try:
        report.graph = overlap_graph_analysis(sys, s)
        report.partition = partition_necessary_check(sys, s, max_partition_views)
    except PreconditionError as e:
        key = "partition" if report.graph is not None else "graph"
        report.skipped[key] = str(e)
        if key == "graph":
            report.skipped["partition"] = str(e)

    try:
        aligned = build_aligned_stress(sys, s)
        certs = extract_certificates(sys, aligned, build_certificate_matrix(aligned))
        report.certificates = [
            CertificateRecord(
                trivial=c.trivial,
                skews=[b.ravel().tolist() for b in c.skews],
                perturbation=None if c.perturbation is None else c.perturbation.tolist(),
            )
            for c in certs
        ]
    except PreconditionError as e:
        report.skipped["certificates"] = str(e)

    report.unique = _uniqueness(report)
    return report


def _uniqueness(report: RigidityReport) -> Optional[bool]:
    if report.affine_rigid:
        return True
    if report.two_view is not None and report.two_view.critical:
        return report.two_view.unique
    if report.graph is not None and report.graph.unique_certified:
        return True
    if report.partition is not None and not report.partition.globally_necessary_holds:
        return False
    return None
