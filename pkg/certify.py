"""Second-order certification of an alignment.

The quotient Hessian at S is encoded by the aligned-stress matrix
L(S) = C(S) - C^(S).  Regrouping L(S) by coordinate and then by skew index
pair gives the matrix LL(S) whose spectrum past the d(d-1)/2 trivial
zeros decides non-degeneracy.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.linalg import block_diag, eigh

from config import CRIT_RTOL, DEFAULT_SEED, eig_threshold
from errors import DegenerateAlignmentError
from framework import random_orthogonal
from manifold import Alignment, HorizontalTangent, skew, skew_pairs
from stress import StressSystem, alignment_error

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AlignedStress:
    alignment: Alignment
    C_of_S: np.ndarray
    C_hat: np.ndarray
    L_of_S: np.ndarray
    CS: np.ndarray
    residual: float
    tol: float
    scale: float

    @property
    def d(self) -> int:
        return self.alignment.d

    @property
    def m(self) -> int:
        return self.alignment.m

    @property
    def critical(self) -> bool:
        return self.residual <= self.tol

    @property
    def L_sym(self) -> np.ndarray:
        return 0.5 * (self.L_of_S + self.L_of_S.T)


@dataclass(frozen=True, eq=False)
class CertificateMatrix:
    d: int
    m: int
    mathcal_L: np.ndarray
    mathbb_L: np.ndarray
    eigs: np.ndarray
    eigvecs: np.ndarray
    tau: float

    @property
    def trivial_dim(self) -> int:
        return self.d * (self.d - 1) // 2

    @property
    def lambda_minus(self) -> Optional[float]:
        """lambda_{d(d-1)/2+1}(LL); None when the quotient has dimension zero."""
        k = self.trivial_dim
        return float(self.eigs[k]) if self.eigs.size > k else None

    @property
    def lambda_plus(self) -> Optional[float]:
        return float(self.eigs[-1]) if self.eigs.size > self.trivial_dim else None

    @property
    def rank(self) -> int:
        return int(np.sum(self.eigs > self.tau))

    @property
    def rank_target(self) -> int:
        return (self.m - 1) * self.trivial_dim


class NondegeneracyVerdict(BaseModel):
    applicable: bool = Field(description="False when S is not critical; no verdict is given then.")
    nondegenerate: Optional[bool] = None
    lambda_key: Optional[float] = Field(default=None, description="lambda_{d(d-1)/2+1} of LL(S).")
    psd: Optional[bool] = None
    rank: int
    rank_target: int
    tau: float
    reason: str = ""


class RadiusReport(BaseModel):
    c1: float
    c2: float
    c3: float
    lambda_minus: float
    lambda_plus: float
    noiseless: bool
    delta: float = Field(description="delta(S) in the noisy branch, delta_0(S) in the noiseless one.")
    delta0: Optional[float] = None
    zeta: float
    gamma: float
    rate_r: float
    rate_q: float


class CertificationReport(BaseModel):
    critical: bool
    critical_residual: float
    nondegenerate: Optional[bool]
    lambda_key: Optional[float]
    rank_LL: int
    rank_target: int
    delta: Optional[float] = None
    delta0: Optional[float] = None
    q: Optional[float] = None
    r: Optional[float] = None
    c1: Optional[float] = None
    c2: Optional[float] = None
    c3: Optional[float] = None
    invariance_check: Optional[bool] = None
    verdict_reason: str = ""


def criticality_tolerance(sys: StressSystem) -> float:
    return CRIT_RTOL * (1.0 + sys.c_norm)


def build_aligned_stress(sys: StressSystem, s: Alignment, tol: Optional[float] = None) -> AlignedStress:
    m, d = s.m, s.d
    bd = block_diag(*s.blocks)
    c_of_s = bd.T @ sys.C @ bd
    # C^_ii = sum_j C(S)_ij = S_i^T [CS]_i
    hat_blocks = c_of_s.reshape(m, d, m, d).sum(axis=2)
    c_hat = block_diag(*hat_blocks)
    residual = float(np.max(np.linalg.norm(hat_blocks - np.swapaxes(hat_blocks, 1, 2), axis=(1, 2))))
    return AlignedStress(
        alignment=s,
        C_of_S=c_of_s,
        C_hat=c_hat,
        L_of_S=c_of_s - c_hat,
        CS=sys.C @ s.stacked,
        residual=residual,
        tol=criticality_tolerance(sys) if tol is None else tol,
        scale=sys.scale,
    )


def is_perfect_alignment(sys: StressSystem, s: Alignment) -> bool:
    """F(S) vanishes up to m times the zero threshold of C."""
    return alignment_error(sys, s) <= sys.m * sys.zero_threshold()


def is_critical(sys: StressSystem, s: Alignment, tol: Optional[float] = None) -> Tuple[bool, float]:
    """max_i ||S_i^T [CS]_i - [CS]_i^T S_i||_F <= tol, with the residual."""
    tol = criticality_tolerance(sys) if tol is None else tol
    cs = (sys.C @ s.stacked).reshape(s.blocks.shape)
    sym = np.swapaxes(s.blocks, 1, 2) @ cs
    residual = float(np.max(np.linalg.norm(sym - np.swapaxes(sym, 1, 2), axis=(1, 2))))
    return residual <= tol, residual


def coordinate_permutation(d: int, m: int) -> np.ndarray:
    """P with (P L P^T)[p*m + i, q*m + j] = L[i*d + p, j*d + q]."""
    perm = np.zeros((m * d, m * d))
    for p in range(d):
        for i in range(m):
            perm[p * m + i, i * d + p] = 1.0
    return perm


def pair_permutation(d: int, m: int) -> np.ndarray:
    """P-bar: rows (pair (r, s), view i), columns (copy q, coordinate p, view i) of I_d (x) LL.

    The (r, s) row block picks +I at (p, q) = (r, s) and -I at (p, q) = (s, r).
    """
    pairs = skew_pairs(d)
    pbar = np.zeros((len(pairs) * m, d * d * m))
    for a, (r, s) in enumerate(pairs):
        for i in range(m):
            pbar[a * m + i, (s * d + r) * m + i] = 1.0
            pbar[a * m + i, (r * d + s) * m + i] = -1.0
    return pbar


def mathcal_L_block(mathcal_L: np.ndarray, m: int, p: int, q: int) -> np.ndarray:
    return mathcal_L[p * m:(p + 1) * m, q * m:(q + 1) * m]


def mathbb_L_from_blocks(mathcal_L: np.ndarray, d: int, m: int) -> np.ndarray:
    """Assemble LL block by block from the coordinate blocks of the permuted L.

    Block ((r1, s1), (r2, s2)):
      diagonal          -> L_r1r1 + L_s1s1
      r1 = r2, s1 != s2 -> L_s1s2
      s1 = s2, r1 != r2 -> L_r1r2
      s1 = r2           -> -L_r1s2
      s2 = r1           -> -L_s1r2
      disjoint pairs    -> 0
    """
    pairs = skew_pairs(d)
    out = np.zeros((len(pairs) * m, len(pairs) * m))

    def block(p, q):
        return mathcal_L_block(mathcal_L, m, p, q)

    for a, (r1, s1) in enumerate(pairs):
        for b, (r2, s2) in enumerate(pairs):
            acc = np.zeros((m, m))
            if s1 == s2:
                acc += block(r1, r2)
            if s1 == r2:
                acc -= block(r1, s2)
            if r1 == s2:
                acc -= block(s1, r2)
            if r1 == r2:
                acc += block(s1, s2)
            out[a * m:(a + 1) * m, b * m:(b + 1) * m] = acc
    return out


def build_certificate_matrix(aligned: AlignedStress) -> CertificateMatrix:
    d, m = aligned.d, aligned.m
    perm = coordinate_permutation(d, m)
    mathcal_L = perm @ aligned.L_sym @ perm.T
    pbar = pair_permutation(d, m)
    mathbb_L = pbar @ np.kron(np.eye(d), mathcal_L) @ pbar.T
    mathbb_L = 0.5 * (mathbb_L + mathbb_L.T)
    if mathbb_L.size:
        eigs, vecs = eigh(mathbb_L)
    else:
        eigs, vecs = np.zeros(0), np.zeros((0, 0))
    top = float(np.max(np.abs(eigs))) if eigs.size else 0.0
    tau = eig_threshold(mathbb_L.shape[0], max(top, aligned.scale))
    return CertificateMatrix(d=d, m=m, mathcal_L=mathcal_L, mathbb_L=mathbb_L, eigs=eigs, eigvecs=vecs, tau=tau)


def hessian_quadratic_form(aligned: AlignedStress, omega: HorizontalTangent) -> float:
    """Tr(Omega^T (L + L^T) Omega); equals 2 Tr(Omega^T L Omega) at critical points."""
    w = omega.stacked
    return float(2.0 * np.sum(w * (aligned.L_sym @ w)))


def hessian_operator(sys: StressSystem, s: Alignment, omega: HorizontalTangent) -> HorizontalTangent:
    """Generators of the horizontal lift of Hess F~[Z~] for Z_i = S_i Omega_i."""
    shape = s.blocks.shape
    z = omega.ambient
    cz = (sys.C @ z.reshape(-1, s.d)).reshape(shape)
    cs = (sys.C @ s.stacked).reshape(shape)
    s_t = np.swapaxes(s.blocks, 1, 2)
    cs_t = np.swapaxes(cs, 1, 2)
    xi = s_t @ cz - np.swapaxes(cz, 1, 2) @ s.blocks - cs_t @ z - omega.skews @ cs_t @ s.blocks
    hess = skew(xi)
    return HorizontalTangent(s, hess - hess.mean(axis=0))


def nondegeneracy_test(cert: CertificateMatrix, aligned: AlignedStress) -> NondegeneracyVerdict:
    common = dict(rank=cert.rank, rank_target=cert.rank_target, tau=cert.tau)
    if not aligned.critical:
        return NondegeneracyVerdict(
            applicable=False,
            reason=f"alignment is not critical (residual {aligned.residual:.3e} > {aligned.tol:.3e})",
            **common,
        )
    key = cert.lambda_minus
    if key is None:
        return NondegeneracyVerdict(
            applicable=True, nondegenerate=True, psd=True, reason="quotient has dimension zero", **common
        )
    psd = bool(cert.eigs[0] >= -cert.tau)
    nondegenerate = psd and key > cert.tau
    reason = "" if nondegenerate else ("LL(S) has a negative eigenvalue" if not psd else "LL(S) has a non-trivial kernel")
    return NondegeneracyVerdict(
        applicable=True, nondegenerate=nondegenerate, lambda_key=key, psd=psd, reason=reason, **common
    )


def _max_block_sigma(matrix: np.ndarray, d: int) -> float:
    return max(np.linalg.norm(matrix[i:i + d], 2) for i in range(0, matrix.shape[0], d))


def convergence_radius(
    cert: CertificateMatrix,
    aligned: AlignedStress,
    sys: StressSystem,
    zeta: float = 0.5,
    gamma: float = 0.1,
) -> RadiusReport:
    if not 0.0 < zeta < 1.0 or not 0.0 < gamma < 1.0:
        raise ValueError(f"zeta and gamma must lie in (0, 1), got zeta={zeta}, gamma={gamma}")
    verdict = nondegeneracy_test(cert, aligned)
    if not verdict.nondegenerate or cert.lambda_minus is None:
        raise DegenerateAlignmentError(f"convergence radius is undefined here: {verdict.reason or 'not applicable'}")
    d = sys.d
    lam_minus, lam_plus = cert.lambda_minus, cert.lambda_plus
    c1 = _max_block_sigma(sys.C, d)
    c2 = _max_block_sigma(aligned.CS, d)
    noiseless = is_perfect_alignment(sys, aligned.alignment)
    c3 = float(np.linalg.norm(sys.C if noiseless else aligned.L_of_S, 2))
    delta0 = abs(lam_minus) / (2.0 * (c1 + 2.0 * c3)) if noiseless else None
    delta = delta0 if noiseless else lam_minus / (2.0 * (c1 + c2 + 2.0 * c3))
    r = (1.0 - zeta) * lam_minus / (lam_plus + zeta * lam_minus)
    q = 1.0 - 2.0 * gamma * (1.0 - gamma) * r * (1.0 + r)
    return RadiusReport(
        c1=c1,
        c2=c2,
        c3=c3,
        lambda_minus=lam_minus,
        lambda_plus=lam_plus,
        noiseless=noiseless,
        delta=delta,
        delta0=delta0,
        zeta=zeta,
        gamma=gamma,
        rate_r=r,
        rate_q=q,
    )


def certify_alignment(
    sys: StressSystem,
    s: Alignment,
    zeta: float = 0.5,
    gamma: float = 0.1,
    seed: int = DEFAULT_SEED,
) -> CertificationReport:
    aligned = build_aligned_stress(sys, s)
    cert = build_certificate_matrix(aligned)
    verdict = nondegeneracy_test(cert, aligned)
    report = CertificationReport(
        critical=aligned.critical,
        critical_residual=aligned.residual,
        nondegenerate=verdict.nondegenerate,
        lambda_key=verdict.lambda_key,
        rank_LL=verdict.rank,
        rank_target=verdict.rank_target,
        verdict_reason=verdict.reason,
    )
    if verdict.nondegenerate and verdict.lambda_key is not None:
        radius = convergence_radius(cert, aligned, sys, zeta, gamma)
        report.delta = radius.delta
        report.delta0 = radius.delta0
        report.q = radius.rate_q
        report.r = radius.rate_r
        report.c1, report.c2, report.c3 = radius.c1, radius.c2, radius.c3

    q = random_orthogonal(s.d, np.random.default_rng(seed))
    aligned_q = build_aligned_stress(sys, s.times(q), tol=aligned.tol)
    verdict_q = nondegeneracy_test(build_certificate_matrix(aligned_q), aligned_q)
    same_key = (
        verdict.lambda_key is None and verdict_q.lambda_key is None
        or verdict.lambda_key is not None and verdict_q.lambda_key is not None
        and math.isclose(verdict.lambda_key, verdict_q.lambda_key, rel_tol=1e-9, abs_tol=1e-9 * (1.0 + sys.c_norm))
    )
    report.invariance_check = bool(verdict.nondegenerate == verdict_q.nondegenerate and same_key)
    logger.info(
        "certified alignment: critical=%s nondegenerate=%s lambda_key=%s",
        report.critical, report.nondegenerate, report.lambda_key,
    )
    return report
