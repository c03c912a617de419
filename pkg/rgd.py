"""Riemannian gradient descent on the quotient O(d)^m / O(d)."""
import csv
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from config import GRAD_RTOL
from errors import StepFailure
from manifold import (
    Alignment,
    HorizontalTangent,
    QuotientAlignment,
    procrustes_distance,
    project,
    quotient_distance,
    retract,
)
from stress import StressSystem, alignment_error, alignment_error_change

logger = logging.getLogger(__name__)


class RgdConfig(BaseModel):
    beta: float = Field(default=0.5, gt=0.0, lt=1.0, description="Backtracking factor.")
    gamma: float = Field(default=0.1, gt=0.0, lt=1.0, description="Sufficient-decrease factor.")
    grad_tol: Optional[float] = Field(
        default=None, gt=0.0, description="Stopping gradient norm; defaults to 1e-10 * (1 + ||C||_F)."
    )
    max_iters: int = Field(default=1000, ge=1)
    max_backtracks: int = Field(default=60, ge=0)

    def tolerance(self, sys: StressSystem) -> float:
        return self.grad_tol if self.grad_tol is not None else GRAD_RTOL * (1.0 + sys.c_norm)


class IterationRecord(BaseModel):
    iter: int
    F: float
    grad_norm: float
    alpha: Optional[float] = None
    step_norm: Optional[float] = None
    dist_to_ref: Optional[float] = None
    ratio: Optional[float] = None


class RgdTrace(BaseModel):
    records: List[IterationRecord] = Field(default_factory=list)
    final_F: Optional[float] = None
    F_star: Optional[float] = None

    def F_values(self) -> List[float]:
        return [r.F for r in self.records]

    def write_csv(self, path: str) -> None:
        columns = ["iter", "F", "grad_norm", "alpha", "dist_to_ref", "ratio", "step_norm"]
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(columns)
            for r in self.records:
                row = r.model_dump()
                writer.writerow(["" if row[c] is None else row[c] for c in columns])


@dataclass(frozen=True)
class RgdResult:
    alignment: QuotientAlignment
    trace: RgdTrace
    iterations: int
    converged: bool
    reason: str
    final_F: float
    final_grad_norm: float
    grad_tol: float


def riemannian_gradient(sys: StressSystem, s: Alignment) -> HorizontalTangent:
    """grad F(S) with generators Omega_i = S_i^T [CS]_i - [CS]_i^T S_i."""
    cs = (sys.C @ s.stacked).reshape(s.blocks.shape)
    s_t = np.swapaxes(s.blocks, 1, 2)
    skews = s_t @ cs - np.swapaxes(cs, 1, 2) @ s.blocks
    return HorizontalTangent(s, skews)


def armijo_step_size(
    sys: StressSystem,
    s: Alignment,
    grad: Optional[HorizontalTangent] = None,
    cfg: Optional[RgdConfig] = None,
) -> Tuple[float, Alignment, float]:
    """Largest beta^l with F(R(S, -beta^l grad)) - F(S) <= -gamma beta^l ||grad||^2.

    Returns (alpha, accepted iterate, F at the accepted iterate).
    """
    cfg = cfg or RgdConfig()
    grad = riemannian_gradient(sys, s) if grad is None else grad
    f0 = alignment_error(sys, s)
    g2 = grad.norm() ** 2
    alpha = 1.0
    for l in range(cfg.max_backtracks + 1):
        alpha = cfg.beta ** l
        candidate = retract(s, grad, -alpha)
        change = alignment_error_change(sys, s, candidate)
        if change <= -cfg.gamma * alpha * g2:
            if l:
                logger.debug("armijo accepted alpha=%.3e after %d backtracks", alpha, l)
            return alpha, candidate, f0 + change
    raise StepFailure(
        f"Armijo backtracking exhausted after {cfg.max_backtracks} steps",
        {"F": f0, "grad_norm": math.sqrt(g2), "last_alpha": alpha, "beta": cfg.beta, "gamma": cfg.gamma},
    )


def _finalize_trace(records: List[IterationRecord], final_F: float, F_star: Optional[float]) -> RgdTrace:
    if F_star is None:
        F_star = min([final_F] + [r.F for r in records])
    if records:
        base = records[0].F - F_star
        for r in records:
            r.ratio = (r.F - F_star) / base if base > 0 else 0.0
    return RgdTrace(records=records, final_F=final_F, F_star=F_star)


def run_rgd(
    sys: StressSystem,
    s_tilde0: QuotientAlignment,
    cfg: Optional[RgdConfig] = None,
    reference: Optional[Alignment] = None,
) -> RgdResult:
    """Iterate S~ <- pi(R_Exp([I; S~], -alpha grad F)) until ||grad F|| <= grad_tol or max_iters."""
    cfg = cfg or RgdConfig()
    tol = cfg.tolerance(sys)
    F_star = alignment_error(sys, reference) if reference is not None else None

    def dist(s: Alignment) -> Optional[float]:
        return procrustes_distance(s, reference)[0] if reference is not None else None

    s_tilde = s_tilde0
    records: List[IterationRecord] = []
    converged = False
    steps = 0
    while True:
        s = s_tilde.lift()
        f = alignment_error(sys, s)
        grad = riemannian_gradient(sys, s)
        g = grad.norm()
        if g <= tol:
            records.append(IterationRecord(iter=steps, F=f, grad_norm=g, dist_to_ref=dist(s)))
            converged = True
            break
        if steps >= cfg.max_iters:
            records.append(IterationRecord(iter=steps, F=f, grad_norm=g, dist_to_ref=dist(s)))
            break
        try:
            alpha, accepted, _ = armijo_step_size(sys, s, grad, cfg)
        except StepFailure as e:
            e.trace = _finalize_trace(records, f, F_star)
            e.last_iterate = s_tilde
            e.diagnostics["iteration"] = steps
            logger.warning("RGD stopped at iteration %d: %s", steps, e)
            raise
        new_tilde = project(accepted)
        step = quotient_distance(new_tilde, s_tilde)
        records.append(IterationRecord(iter=steps, F=f, grad_norm=g, alpha=alpha, step_norm=step, dist_to_ref=dist(s)))
        logger.debug("iter %d: F=%.6e grad=%.3e alpha=%.3e", steps, f, g, alpha)
        s_tilde = new_tilde
        steps += 1

    trace = _finalize_trace(records, f, F_star)
    reason = "gradient-tolerance" if converged else "max-iterations"
    logger.info("RGD finished (%s) after %d iterations: F=%.3e grad=%.3e", reason, steps, f, g)
    return RgdResult(
        alignment=s_tilde,
        trace=trace,
        iterations=steps,
        converged=converged,
        reason=reason,
        final_F=f,
        final_grad_norm=g,
        grad_tol=tol,
    )


def quotient_error(sys: StressSystem, s_tilde: QuotientAlignment) -> float:
    """F~(S~) = F([I; S~])."""
    return alignment_error(sys, s_tilde.lift())


class DescentDiagnostics(BaseModel):
    kappa0: float = Field(description="2 gamma / ((e + 1) sqrt(m + 1)).")
    kappa_min: Optional[float] = Field(description="Smallest observed (F_k - F_k+1) / (||grad_k|| ||step_k||).")
    sufficient_descent: Optional[bool]
    mu: Optional[float] = Field(description="Largest ||grad_k|| / ||step_k|| over the trace tail.")


def descent_diagnostics(trace: RgdTrace, m: int, gamma: float, tail_fraction: float = 0.5) -> DescentDiagnostics:
    kappa0 = 2.0 * gamma / ((math.e + 1.0) * math.sqrt(m + 1))
    steps = [r for r in trace.records if r.step_norm is not None]
    next_F = [r.F for r in trace.records[1:]] + [trace.final_F]
    kappas, mus = [], []
    for r, f_next in zip(trace.records, next_F):
        if r.step_norm is None or r.step_norm <= 0.0 or r.grad_norm <= 0.0 or f_next is None:
            continue
        kappas.append((r.F - f_next) / (r.grad_norm * r.step_norm))
    tail = steps[int(len(steps) * (1.0 - tail_fraction)):]
    mus = [r.grad_norm / r.step_norm for r in tail if r.step_norm > 0.0]
    kappa_min = min(kappas) if kappas else None
    return DescentDiagnostics(
        kappa0=kappa0,
        kappa_min=kappa_min,
        sufficient_descent=None if kappa_min is None else kappa_min >= kappa0,
        mu=max(mus) if mus else None,
    )


def log_ratio_slope(trace: RgdTrace) -> Optional[float]:
    """Least-squares slope of log(ratio) against the iteration index."""
    rows = [(r.iter, math.log(r.ratio)) for r in trace.records if r.ratio is not None and r.ratio > 0.0]
    if len(rows) < 2:
        return None
    k, y = np.array(rows).T
    return float(np.polyfit(k, y, 1)[0])
