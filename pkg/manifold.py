"""Geometry of O(d)^m and of its quotient by a global orthogonal transform.

Tangent vectors at S are stored through their skew generators Omega_i
(Z_i = S_i Omega_i), so the canonical metric is sum_i Tr(Omega_i^T Psi_i).
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.linalg import expm, orthogonal_procrustes, polar

from config import ORTHO_TOL
from errors import ContractError

logger = logging.getLogger(__name__)


def skew(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a - np.swapaxes(a, -1, -2))


def _orthogonality_defect(blocks: np.ndarray) -> float:
    d = blocks.shape[-1]
    gram = np.einsum("iab,iac->ibc", blocks, blocks)
    return float(np.max(np.linalg.norm(gram - np.eye(d), axis=(1, 2)))) if len(blocks) else 0.0


def reorthonormalize(blocks: np.ndarray) -> np.ndarray:
    """Polar factor of every block."""
    return np.array([polar(b)[0] for b in blocks])


@dataclass(frozen=True, eq=False)
class Alignment:
    """Stack S = [S_1; ...; S_m] of d x d orthogonal blocks, stored as an (m, d, d) array."""

    blocks: np.ndarray

    def __post_init__(self):
        blocks = np.array(self.blocks, dtype=float)
        if blocks.ndim != 3 or blocks.shape[1] != blocks.shape[2]:
            raise ContractError(f"alignment blocks must have shape (m, d, d), got {blocks.shape}")
        defect = _orthogonality_defect(blocks)
        if defect > ORTHO_TOL:
            raise ContractError(f"alignment block is not orthogonal: max ||S_i^T S_i - I||_F = {defect:.3e}")
        blocks.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)

    @property
    def m(self) -> int:
        return self.blocks.shape[0]

    @property
    def d(self) -> int:
        return self.blocks.shape[1]

    @property
    def stacked(self) -> np.ndarray:
        """The md x d matrix S."""
        return self.blocks.reshape(self.m * self.d, self.d)

    @classmethod
    def from_stacked(cls, stacked: np.ndarray, d: int) -> "Alignment":
        return cls(np.asarray(stacked).reshape(-1, d, d))

    @classmethod
    def identity(cls, m: int, d: int) -> "Alignment":
        return cls(np.broadcast_to(np.eye(d), (m, d, d)))

    @classmethod
    def from_drifted(cls, blocks: np.ndarray) -> "Alignment":
        """Accept blocks whose orthogonality drifted in floating point, re-orthonormalizing if needed."""
        blocks = np.asarray(blocks, dtype=float)
        if _orthogonality_defect(blocks) > ORTHO_TOL:
            logger.debug("re-orthonormalizing drifted alignment blocks")
            blocks = reorthonormalize(blocks)
        return cls(blocks)

    def times(self, q: np.ndarray) -> "Alignment":
        """The alignment SQ (every block right-multiplied by Q)."""
        return Alignment(self.blocks @ q)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Alignment):
            return NotImplemented
        return np.array_equal(self.blocks, other.blocks)


@dataclass(frozen=True, eq=False)
class QuotientAlignment:
    """Representative S~ = S_{2:m} S_1^T in O(d)^{m-1}; its canonical lift is [I; S~]."""

    blocks: np.ndarray

    def __post_init__(self):
        blocks = np.array(self.blocks, dtype=float)
        if blocks.ndim != 3 or blocks.shape[1] != blocks.shape[2]:
            raise ContractError(f"quotient blocks must have shape (m-1, d, d), got {blocks.shape}")
        defect = _orthogonality_defect(blocks)
        if defect > ORTHO_TOL:
            raise ContractError(f"quotient block is not orthogonal: defect {defect:.3e}")
        blocks.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)

    @property
    def m(self) -> int:
        return self.blocks.shape[0] + 1

    @property
    def d(self) -> int:
        return self.blocks.shape[1]

    def lift(self) -> Alignment:
        return Alignment(np.concatenate([np.eye(self.d)[None], self.blocks], axis=0))


def project(s: Alignment) -> QuotientAlignment:
    """pi(S) = S_{2:m} S_1^T."""
    return QuotientAlignment(s.blocks[1:] @ s.blocks[0].T)


def quotient_distance(a: QuotientAlignment, b: QuotientAlignment) -> float:
    return float(np.linalg.norm(a.blocks - b.blocks))


@dataclass(frozen=True, eq=False)
class TangentVector:
    base: Alignment
    skews: np.ndarray

    def __post_init__(self):
        skews = np.asarray(self.skews, dtype=float)
        if skews.shape != self.base.blocks.shape:
            raise ContractError(f"tangent skews must have shape {self.base.blocks.shape}, got {skews.shape}")
        object.__setattr__(self, "skews", skews)

    @property
    def ambient(self) -> np.ndarray:
        """Z_i = S_i Omega_i as an (m, d, d) array."""
        return self.base.blocks @ self.skews

    @property
    def stacked(self) -> np.ndarray:
        """Omega as an md x d matrix."""
        m, d, _ = self.skews.shape
        return self.skews.reshape(m * d, d)

    def norm(self) -> float:
        return float(np.linalg.norm(self.skews))

    def scaled(self, factor: float) -> "TangentVector":
        return type(self)(self.base, factor * self.skews)


def skew_pairs(d: int) -> List[Tuple[int, int]]:
    """Index pairs (r, s), r < s, in column-major order: (0,1), (0,2), (1,2), (0,3), ..."""
    return [(r, s) for s in range(1, d) for r in range(s)]


@dataclass(frozen=True, eq=False)
class HorizontalTangent(TangentVector):
    """Tangent vector with sum_i Omega_i = 0."""

    def omega(self) -> np.ndarray:
        """Flattened vector: one length-m block per pair (r, s), r < s, entries Omega_i[r, s]."""
        pairs = skew_pairs(self.base.d)
        if not pairs:
            return np.zeros(0)
        return np.concatenate([self.skews[:, r, s] for r, s in pairs])

    @classmethod
    def from_omega(cls, base: Alignment, omega: np.ndarray) -> "HorizontalTangent":
        m, d = base.m, base.d
        skews = np.zeros((m, d, d))
        for p, (r, s) in enumerate(skew_pairs(d)):
            skews[:, r, s] = omega[p * m:(p + 1) * m]
            skews[:, s, r] = -omega[p * m:(p + 1) * m]
        return cls(base, skews)


def metric(z: TangentVector, w: TangentVector) -> float:
    """Canonical metric g(Z, W) = sum_i Tr(Z_i^T W_i)."""
    return float(np.sum(z.skews * w.skews))


def project_tangent(s: Alignment, xi: np.ndarray) -> TangentVector:
    """P_S(xi) = [S_i Skew(S_i^T xi_i)]."""
    xi = np.asarray(xi, dtype=float).reshape(s.blocks.shape)
    return TangentVector(s, skew(np.swapaxes(s.blocks, 1, 2) @ xi))


def horizontal_project(z: TangentVector) -> HorizontalTangent:
    return HorizontalTangent(z.base, z.skews - z.skews.mean(axis=0))


def vertical_project(z: TangentVector) -> TangentVector:
    return TangentVector(z.base, np.broadcast_to(z.skews.mean(axis=0), z.skews.shape).copy())


def random_horizontal(s: Alignment, rng: np.random.Generator, norm: Optional[float] = None) -> HorizontalTangent:
    raw = skew(rng.standard_normal(s.blocks.shape))
    h = horizontal_project(TangentVector(s, raw))
    if norm is not None and h.norm() > 0:
        h = h.scaled(norm / h.norm())
    return h


def horizontal_lift(s_tilde: QuotientAlignment, omega_tilde: np.ndarray, s: Optional[Alignment] = None) -> HorizontalTangent:
    """Horizontal lift at S of Z~ = [S~_i Omega~_i]; S defaults to the canonical lift of S~."""
    s = s_tilde.lift() if s is None else s
    if s.m != s_tilde.m or s.d != s_tilde.d:
        raise ContractError("lift base has a different number of views or dimension")
    if quotient_distance(project(s), s_tilde) > ORTHO_TOL:
        raise ContractError("lift base S is not a representative of S~")
    omega_tilde = np.asarray(omega_tilde, dtype=float)
    s1 = s.blocks[0]
    conj = s1.T @ omega_tilde @ s1
    omega1 = -conj.sum(axis=0) / s.m
    skews = np.concatenate([omega1[None], conj + omega1], axis=0)
    return HorizontalTangent(s, skews)


def pushforward(z: TangentVector) -> np.ndarray:
    """Skew generators Omega~_i = S_1 (Omega_{i+1} - Omega_1) S_1^T of D pi(S)[Z]."""
    s1 = z.base.blocks[0]
    return s1 @ (z.skews[1:] - z.skews[0]) @ s1.T


def quotient_metric(
    s_tilde: QuotientAlignment,
    u_tilde: np.ndarray,
    v_tilde: np.ndarray,
    s: Optional[Alignment] = None,
) -> float:
    """g~(Z~, W~) = g(Z, W) of the horizontal lifts at a representative S."""
    return metric(horizontal_lift(s_tilde, u_tilde, s), horizontal_lift(s_tilde, v_tilde, s))


def quotient_metric_closed_form(u_tilde: np.ndarray, v_tilde: np.ndarray) -> float:
    """sum_i Tr(U~_i^T V~_i) - m^{-1} sum_{i,j} Tr(U~_i^T V~_j)."""
    m = u_tilde.shape[0] + 1
    return float(np.sum(u_tilde * v_tilde) - np.sum(u_tilde.sum(axis=0) * v_tilde.sum(axis=0)) / m)


def retract(s: Alignment, z: TangentVector, scale: float = 1.0) -> Alignment:
    """R_Exp(S, scale Z) = [S_i exp(scale Omega_i)]."""
    blocks = np.array([si @ expm(scale * om) for si, om in zip(s.blocks, z.skews)])
    return Alignment.from_drifted(blocks)


def quotient_retract(
    s_tilde: QuotientAlignment,
    omega_tilde: np.ndarray,
    scale: float = 1.0,
    s: Optional[Alignment] = None,
) -> QuotientAlignment:
    """pi(R_Exp(S, lift of Z~)); independent of the representative S."""
    lifted = horizontal_lift(s_tilde, omega_tilde, s)
    return project(retract(lifted.base, lifted, scale))


def procrustes_distance(s: Alignment, t: Alignment) -> Tuple[float, np.ndarray]:
    """min_Q ||S - T Q||_F over Q in O(d), with the minimizing Q."""
    if s.blocks.shape != t.blocks.shape:
        raise ContractError(f"alignments differ in shape: {s.blocks.shape} vs {t.blocks.shape}")
    q, _ = orthogonal_procrustes(t.stacked, s.stacked)
    return float(np.linalg.norm(s.stacked - t.stacked @ q)), q


class AlignmentDocument(BaseModel):
    """Alignment file: blocks are row-major d*d lists, view 1 first."""

    model_config = ConfigDict(extra="ignore")
    d: int = Field(ge=1)
    m: int = Field(ge=1)
    blocks: List[List[float]]


def serialize_alignment(s: Alignment) -> str:
    doc = AlignmentDocument(d=s.d, m=s.m, blocks=[[float(v) for v in b.ravel()] for b in s.blocks])
    return doc.model_dump_json(indent=2)


def parse_alignment(text: str) -> Alignment:
    doc = AlignmentDocument.model_validate_json(text)
    if len(doc.blocks) != doc.m or any(len(b) != doc.d * doc.d for b in doc.blocks):
        raise ContractError(f"alignment document must hold {doc.m} blocks of {doc.d * doc.d} entries")
    return Alignment(np.array(doc.blocks).reshape(doc.m, doc.d, doc.d))
