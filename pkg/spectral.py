import logging
import math
import statistics
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from certify import build_aligned_stress, build_certificate_matrix, convergence_radius
from config import DEFAULT_SEED, NEAR_SINGULAR_RTOL
from errors import DegenerateAlignmentError, PreconditionError, StepFailure
from framework import NoiseSpec, PatchFramework, inject_noise, random_orthogonal
from manifold import Alignment, QuotientAlignment, procrustes_distance, project
from rgd import RgdConfig, log_ratio_slope, run_rgd
from rigidity import realize
from stress import StressSystem, alignment_error, build_patch_stress

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SpectralInit:
    alignment: Alignment
    quotient: QuotientAlignment
    bottom_eigs: np.ndarray
    gap: float
    rounding_residuals: np.ndarray
    near_singular: List[int]


def spectral_init(sys: StressSystem) -> SpectralInit:
    """Bottom d eigenvectors of C, scaled by sqrt(m), each d x d block rounded to its polar factor.

    The gauge is fixed so that the first block is the identity.
    """
    d, m = sys.d, sys.m
    raw = math.sqrt(m) * sys.eigenvectors[:, :d].reshape(m, d, d)
    u, sigma, vt = np.linalg.svd(raw)
    rounded = u @ vt
    residuals = np.linalg.norm(raw - rounded, axis=(1, 2))
    near_singular = [i + 1 for i in range(m) if sigma[i, -1] < NEAR_SINGULAR_RTOL * sigma[i, 0]]
    if near_singular:
        logger.warning("spectral rounding of views %s is near-singular; completed to orthogonal", near_singular)
    s = Alignment.from_drifted(rounded @ rounded[0].T)
    vals = sys.eigenvalues
    gap = float(vals[d] - vals[d - 1]) if vals.size > d else 0.0
    return SpectralInit(
        alignment=s,
        quotient=project(s),
        bottom_eigs=vals[:d].copy(),
        gap=gap,
        rounding_residuals=residuals,
        near_singular=near_singular,
    )


def _require_affinely_rigid(sys: StressSystem) -> None:
    rank = sys.rank_C()
    target = (sys.m - 1) * sys.d
    if rank != target:
        raise PreconditionError(f"rank(C) = {rank}, but the analysis needs rank (m-1)d = {target}")


def random_alignment(m: int, d: int, rng: np.random.Generator) -> Alignment:
    return Alignment(np.array([random_orthogonal(d, rng) for _ in range(m)]))


class QuadGrowthReport(BaseModel):
    samples: int
    violations: int
    lambda_d1: float
    min_ratio: Optional[float] = Field(description="Smallest F(S) / (lambda_{d+1}/2 dist^2) over the samples.")
    holds: bool


def quad_growth_check(sys0: StressSystem, s0: Alignment, samples: int = 200, seed: int = DEFAULT_SEED) -> QuadGrowthReport:
    """Check Tr(C0 S S^T) >= lambda_{d+1}(C0)/2 * min_Q ||S - S0 Q||^2 on random alignments."""
    _require_affinely_rigid(sys0)
    rng = np.random.default_rng(seed)
    lam = sys0.lambda_d1()
    violations, ratios = 0, []
    for _ in range(samples):
        s = random_alignment(sys0.m, sys0.d, rng)
        lhs = alignment_error(sys0, s)
        rhs = 0.5 * lam * procrustes_distance(s, s0)[0] ** 2
        if lhs < rhs - 1e-9:
            violations += 1
        if rhs > 0:
            ratios.append(lhs / rhs)
    if violations:
        logger.warning("quadratic growth violated in %d of %d samples", violations, samples)
    return QuadGrowthReport(
        samples=samples,
        violations=violations,
        lambda_d1=lam,
        min_ratio=min(ratios) if ratios else None,
        holds=violations == 0,
    )


class StabilityReport(BaseModel):
    applicable: bool
    reason: str = ""
    epsilon: float = Field(description="Largest measured coordinate perturbation.")
    K1: Optional[float] = None
    K2: Optional[float] = None
    delta_C: float = Field(description="||C - C0||_F.")
    delta_C_bound: Optional[float] = Field(default=None, description="K1 eps + K2 eps^2.")
    delta_C_within_bound: Optional[bool] = None
    lambda_d1: float
    lambda_d1_clean: float
    bound_lhs: Optional[float] = None
    delta_star: Optional[float] = None
    bound_satisfied: Optional[bool] = None
    lemma_bound: Optional[float] = Field(default=None, description="4 m ||C - C0||_F / lambda_{d+1}(C0).")
    dist_star: Optional[float] = Field(default=None, description="min_Q ||S* - S0 Q||_F.")
    lemma_holds: Optional[bool] = None
    spec_bound: Optional[float] = None
    dist_spec: Optional[float] = None


def noise_stability_bound(
    sys0: StressSystem,
    sys: StressSystem,
    s0: Alignment,
    s_star: Alignment,
    s_spec: Optional[Alignment] = None,
) -> StabilityReport:
    """Evaluate the noise-level condition under which RGD from the clean optimum reaches S*."""
    fw0, fw = sys0.framework, sys.framework
    d, m = fw0.d, fw0.m
    eps = float(np.max(np.linalg.norm(fw.coords - fw0.coords, axis=1))) if fw.num_edges else 0.0
    delta_c = float(np.linalg.norm(sys.C - sys0.C))
    lam, lam0 = sys.lambda_d1(), sys0.lambda_d1()
    report = StabilityReport(
        applicable=True, epsilon=eps, delta_C=delta_c, lambda_d1=lam, lambda_d1_clean=lam0
    )
    try:
        _require_affinely_rigid(sys0)
    except PreconditionError as e:
        report.applicable, report.reason = False, str(e)
        return report

    report.lemma_bound = 4.0 * m * delta_c / lam0
    report.dist_star = procrustes_distance(s_star, s0)[0]
    report.lemma_holds = report.dist_star <= report.lemma_bound + 1e-9

    scale = math.sqrt(fw0.n * fw0.num_edges)
    lam2 = float(np.sort(np.linalg.eigvalsh(sys0.laplacian))[1])
    x_max = float(np.max(np.linalg.norm(realize(sys0, s0).points, axis=1)))
    report.K1 = 2.0 * scale * (4.0 * x_max * scale / lam2 + 1.0)
    report.K2 = 2.0 * scale * (2.0 * scale / lam2 + 1.0)
    perturbation = report.K1 * eps + report.K2 * eps ** 2
    report.delta_C_bound = perturbation
    report.delta_C_within_bound = delta_c <= 1.1 * perturbation + 1e-12

    if lam <= sys.zero_threshold():
        report.applicable = False
        report.reason = f"lambda_d+1(C) = {lam:.3e} is numerically zero"
        return report
    report.bound_lhs = 4.0 * math.sqrt(m) * (
        math.pi * math.sqrt(d * (d + 1)) / lam + math.sqrt(m) / lam0
    ) * perturbation
    report.spec_bound = 4.0 * math.pi * math.sqrt(m * d * (d + 1)) / lam * perturbation
    if s_spec is not None:
        report.dist_spec = procrustes_distance(s_spec, s0)[0]
    try:
        aligned = build_aligned_stress(sys, s_star)
        report.delta_star = convergence_radius(build_certificate_matrix(aligned), aligned, sys).delta
        report.bound_satisfied = report.bound_lhs < report.delta_star
    except DegenerateAlignmentError as e:
        report.reason = f"S* is not certified: {e}"
        report.bound_satisfied = False
    return report


class SweepRow(BaseModel):
    eps: float
    trial: int
    lambda_d1: float
    F_spec: float
    F_final: float
    dist_spec_to_S0: float
    dist_final_to_S0: float
    iters: int
    final_ratio: Optional[float]
    ratio_slope: Optional[float]
    K1: Optional[float]
    K2: Optional[float]
    bound_lhs: Optional[float]
    delta_star: Optional[float]
    bound_satisfied: Optional[bool]
    lemma_bound: Optional[float]
    lemma_holds: Optional[bool]
    rounding_residual: float
    converged: bool


class NoiseSweepResult(BaseModel):
    rows: List[SweepRow]

    def levels(self) -> List[float]:
        return sorted({r.eps for r in self.rows})

    def median(self, column: str) -> List[float]:
        return [statistics.median(getattr(r, column) for r in self.rows if r.eps == eps) for eps in self.levels()]

    def lambda_inversions(self, min_eps: float = 0.0) -> int:
        """Decreases of the median lambda_{d+1} between consecutive levels at or above min_eps."""
        med = [v for eps, v in zip(self.levels(), self.median("lambda_d1")) if eps >= min_eps]
        return sum(1 for a, b in zip(med, med[1:]) if b < a)


SWEEP_COLUMNS = [
    "eps", "trial", "lambda_d1", "F_spec", "F_final", "dist_spec_to_S0", "iters", "ratio_slope",
    "K1", "K2", "bound_lhs", "delta_star", "bound_satisfied", "converged",
]


def _trial_seed(seed: int, level: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, level, trial]).generate_state(1)[0])


def noise_sweep_experiment(
    fw0: PatchFramework,
    s0: Alignment,
    eps_list: Sequence[float],
    trials: int = 5,
    cfg: Optional[RgdConfig] = None,
    iterations: int = 100,
    seed: int = DEFAULT_SEED,
) -> NoiseSweepResult:
    """SPEC followed by RGD on noisy copies of a clean framework, one row per (eps, trial)."""
    sys0 = build_patch_stress(fw0)
    _require_affinely_rigid(sys0)
    cfg = (cfg or RgdConfig()).model_copy(update={"max_iters": iterations})
    rows = []
    for level, eps in enumerate(sorted(eps_list)):
        for trial in range(trials):
            noisy = inject_noise(fw0, NoiseSpec(epsilon=eps, seed=_trial_seed(seed, level, trial)))
            sys = build_patch_stress(noisy)
            init = spectral_init(sys)
            try:
                result = run_rgd(sys, init.quotient, cfg)
                s_tilde, trace, iters, converged = result.alignment, result.trace, result.iterations, result.converged
            except StepFailure as e:
                s_tilde, trace = e.last_iterate, e.trace
                iters, converged = len(trace.records), False
            s_star = s_tilde.lift()
            bound = noise_stability_bound(sys0, sys, s0, s_star, init.alignment)
            rows.append(
                SweepRow(
                    eps=eps,
                    trial=trial,
                    lambda_d1=sys.lambda_d1(),
                    F_spec=alignment_error(sys, init.alignment),
                    F_final=alignment_error(sys, s_star),
                    dist_spec_to_S0=procrustes_distance(init.alignment, s0)[0],
                    dist_final_to_S0=procrustes_distance(s_star, s0)[0],
                    iters=iters,
                    final_ratio=trace.records[-1].ratio if trace.records else None,
                    ratio_slope=log_ratio_slope(trace),
                    K1=bound.K1,
                    K2=bound.K2,
                    bound_lhs=bound.bound_lhs,
                    delta_star=bound.delta_star,
                    bound_satisfied=bound.bound_satisfied,
                    lemma_bound=bound.lemma_bound,
                    lemma_holds=bound.lemma_holds,
                    rounding_residual=float(np.max(init.rounding_residuals)),
                    converged=converged,
                )
            )
            logger.info("eps=%.4f trial=%d: lambda_d+1=%.3e F=%.3e", eps, trial, rows[-1].lambda_d1, rows[-1].F_final)
    return NoiseSweepResult(rows=rows)
