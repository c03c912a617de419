import csv
import logging
import os
from dataclasses import dataclass
from typing import Tuple

import networkx as nx
import numpy as np
from scipy.linalg import eigh

from config import MACHINE_EPS, eig_threshold
from errors import ContractError, DisconnectedFrameworkError
from framework import PatchFramework, gamma_graph
from manifold import Alignment

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class StressSystem:
    """L_Gamma, its pseudoinverse, B, D and the patch-stress matrix C = D - B L_Gamma^+ B^T."""

    framework: PatchFramework
    laplacian: np.ndarray
    laplacian_pinv: np.ndarray
    B: np.ndarray
    D: np.ndarray
    C: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def d(self) -> int:
        return self.framework.d

    @property
    def m(self) -> int:
        return self.framework.m

    @property
    def n(self) -> int:
        return self.framework.n

    @property
    def c_norm(self) -> float:
        return float(np.linalg.norm(self.C))

    @property
    def scale(self) -> float:
        """||D||_2; bounds lambda_max(C) and sets the roundoff level of C even when C vanishes."""
        return float(np.linalg.norm(self.D, 2)) if self.D.size else 0.0

    def zero_threshold(self) -> float:
        return eig_threshold(self.m * self.d, self.scale)

    def rank_C(self) -> int:
        return int(np.sum(np.abs(self.eigenvalues) > self.zero_threshold()))

    def row_block(self, matrix: np.ndarray, i: int) -> np.ndarray:
        return matrix[i * self.d:(i + 1) * self.d]

    def lambda_d1(self) -> float:
        """lambda_{d+1}(C), the first eigenvalue past the d-dimensional perfect-alignment kernel."""
        return float(self.eigenvalues[self.d]) if self.eigenvalues.size > self.d else 0.0


def build_graph_laplacian(fw: PatchFramework) -> Tuple[np.ndarray, np.ndarray]:
    """Laplacian of Gamma (points first, then views) and its Moore-Penrose pseudoinverse."""
    graph = gamma_graph(fw)
    if fw.n + fw.m == 0 or not nx.is_connected(graph):
        raise DisconnectedFrameworkError(
            "the point/view graph must be connected",
            [f"{nx.number_connected_components(graph)} components"] if graph.number_of_nodes() else ["empty graph"],
        )
    lap = nx.laplacian_matrix(graph, nodelist=list(range(fw.n + fw.m))).toarray().astype(float)
    vals, vecs = eigh(lap)
    tau = max(fw.n + fw.m, fw.m * fw.d) * MACHINE_EPS * max(vals[-1], 1.0)
    keep = vals > tau
    pinv = (vecs[:, keep] / vals[keep]) @ vecs[:, keep].T
    return lap, 0.5 * (pinv + pinv.T)


def build_patch_matrices(fw: PatchFramework) -> Tuple[np.ndarray, np.ndarray]:
    """B (md x (n+m)) and block-diagonal D (md x md).

    Row-block i of B has x_{k,i} in column k for each point of view i and
    minus their sum in column n+i; D_ii = sum_k x_{k,i} x_{k,i}^T.
    """
    d, n, m = fw.d, fw.n, fw.m
    B = np.zeros((m * d, n + m))
    D = np.zeros((m * d, m * d))
    for i in range(m):
        rows = slice(i * d, (i + 1) * d)
        points = fw.view_points(i)
        x = fw.view_coords(i)
        B[rows, points] = x.T
        B[rows, n + i] = -x.sum(axis=0)
        D[rows, rows] = x.T @ x
    return B, D


def build_patch_stress(fw: PatchFramework) -> StressSystem:
    lap, pinv = build_graph_laplacian(fw)
    B, D = build_patch_matrices(fw)
    C = D - B @ pinv @ B.T
    C = 0.5 * (C + C.T)
    vals, vecs = eigh(C)
    logger.info(
        "built patch stress: n=%d m=%d d=%d, lambda_min=%.3e, lambda_d+1=%.3e",
        fw.n, fw.m, fw.d, vals[0], vals[fw.d] if vals.size > fw.d else 0.0,
    )
    return StressSystem(
        framework=fw,
        laplacian=lap,
        laplacian_pinv=pinv,
        B=B,
        D=D,
        C=C,
        eigenvalues=vals,
        eigenvectors=vecs,
    )


def _check_alignment(sys: StressSystem, s: Alignment) -> None:
    if s.m != sys.m or s.d != sys.d:
        raise ContractError(f"alignment has m={s.m}, d={s.d}; framework has m={sys.m}, d={sys.d}")


def _eigen_weights(sys: StressSystem) -> np.ndarray:
    return np.where(sys.eigenvalues > sys.zero_threshold(), sys.eigenvalues, 0.0)


def alignment_error(sys: StressSystem, s: Alignment) -> float:
    """F(S) = Tr(C S S^T), evaluated as sum_k lambda_k ||v_k^T S||^2 over the eigenpairs of C.

    Eigenvalues at or below the zero threshold count as exact zeros, so every
    term is non-negative and F vanishes at a perfect alignment instead of
    picking up the roundoff of the kernel of C.
    """
    _check_alignment(sys, s)
    weights = _eigen_weights(sys)
    projections = sys.eigenvectors.T @ s.stacked
    return float(np.sum(weights[:, None] * projections ** 2))


def alignment_error_change(sys: StressSystem, s: Alignment, t: Alignment) -> float:
    """F(T) - F(S) without cancellation: sum_k lambda_k v_k^T (T - S) . v_k^T (T + S)."""
    _check_alignment(sys, s)
    _check_alignment(sys, t)
    weights = _eigen_weights(sys)
    diff = sys.eigenvectors.T @ (t.stacked - s.stacked)
    total = sys.eigenvectors.T @ (t.stacked + s.stacked)
    return float(np.sum(weights[:, None] * diff * total))


def alignment_error_oracle(fw: PatchFramework, s: Alignment) -> float:
    """Solve min over x_k, t_i of sum_E ||S_i^T x_{k,i} + t_i - x_k||^2 directly by least squares."""
    if s.m != fw.m or s.d != fw.d:
        raise ContractError(f"alignment has m={s.m}, d={s.d}; framework has m={fw.m}, d={fw.d}")
    incidence = np.zeros((fw.num_edges, fw.n + fw.m))
    rotated = np.zeros((fw.num_edges, fw.d))
    for e, (k, i) in enumerate(fw.edges):
        incidence[e, k] = -1.0
        incidence[e, fw.n + i] = 1.0
        rotated[e] = s.blocks[i].T @ fw.coords[e]
    unknowns, *_ = np.linalg.lstsq(incidence, -rotated, rcond=None)
    residual = incidence @ unknowns + rotated
    return float(np.sum(residual ** 2))


def dump_matrices(sys: StressSystem, directory: str) -> None:
    """Write C, B, D and L_Gamma as CSV: a "rows,cols" header, the shape, then the rows."""
    os.makedirs(directory, exist_ok=True)
    for name, matrix in (("C", sys.C), ("B", sys.B), ("D", sys.D), ("L_Gamma", sys.laplacian)):
        with open(os.path.join(directory, f"{name}.csv"), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["rows", "cols"])
            writer.writerow(matrix.shape)
            writer.writerows(matrix.tolist())
    logger.info("dumped stress matrices to %s", directory)
