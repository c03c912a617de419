import json
import logging
from typing import List, Optional, Tuple

from pydantic import BaseModel, Field

from certify import CertificationReport, certify_alignment
from config import DEFAULT_SEED, MAX_PARTITION_VIEWS
from errors import ContractError, FrameworkError
from framework import PatchFramework, ValidationReport, parse_framework, validate_framework
from manifold import Alignment, AlignmentDocument, QuotientAlignment, parse_alignment, procrustes_distance, project
from rgd import RgdConfig, RgdResult, run_rgd
from rigidity import RigidityReport, analyze_rigidity
from spectral import spectral_init
from stress import StressSystem, build_patch_stress, dump_matrices

logger = logging.getLogger(__name__)

INIT_KINDS = ("spectral", "identity", "file")


class RgdResultDocument(BaseModel):
    init: str = Field(description="How the first iterate was chosen: spectral, identity or file.")
    converged: bool
    reason: str = Field(description="'gradient-tolerance' or 'max-iterations'.")
    iterations: int
    final_F: float
    final_grad_norm: float
    grad_tol: float
    quotient_blocks: List[List[float]] = Field(description="Final S~ = S_{2:m} S_1^T, row-major d*d blocks.")
    alignment: AlignmentDocument = Field(description="The canonical lift [I; S~].")
    dist_to_reference: Optional[float] = None


class AlignmentEngine:
    """Holds one framework with its stress system and runs every workflow against it."""

    def __init__(self, framework: PatchFramework):
        report = validate_framework(framework)
        if not report.connected:
            raise FrameworkError("the point/view graph must be connected", [f"{report.components} components"])
        if report.degenerate_views:
            logger.warning("views %s are affinely degenerate", report.degenerate_views)
        self.framework = framework
        self.validation: ValidationReport = report
        self.system: StressSystem = build_patch_stress(framework)

    @classmethod
    def from_file(cls, path: str) -> "AlignmentEngine":
        with open(path) as f:
            return cls(parse_framework(f.read()))

    def load_alignment(self, path: str) -> Alignment:
        with open(path) as f:
            s = parse_alignment(f.read())
        if (s.m, s.d) != (self.framework.m, self.framework.d):
            raise ContractError(
                f"alignment in {path} has m={s.m}, d={s.d}; framework has m={self.framework.m}, d={self.framework.d}"
            )
        return s

    def initial_alignment(self, kind: str = "spectral", path: Optional[str] = None) -> QuotientAlignment:
        if kind == "spectral":
            return spectral_init(self.system).quotient
        if kind == "identity":
            return project(Alignment.identity(self.framework.m, self.framework.d))
        if kind == "file":
            if not path:
                raise ContractError("--init file needs an alignment file")
            return project(self.load_alignment(path))
        raise ContractError(f"unknown init {kind!r}; choose from {', '.join(INIT_KINDS)}")

    def align(
        self,
        init: str = "spectral",
        cfg: Optional[RgdConfig] = None,
        reference: Optional[Alignment] = None,
        init_path: Optional[str] = None,
    ) -> Tuple[RgdResultDocument, RgdResult]:
        start = self.initial_alignment(init, init_path)
        result = run_rgd(self.system, start, cfg, reference)
        lifted = result.alignment.lift()
        doc = RgdResultDocument(
            init=init,
            converged=result.converged,
            reason=result.reason,
            iterations=result.iterations,
            final_F=result.final_F,
            final_grad_norm=result.final_grad_norm,
            grad_tol=result.grad_tol,
            quotient_blocks=[b.ravel().tolist() for b in result.alignment.blocks],
            alignment=AlignmentDocument(d=lifted.d, m=lifted.m, blocks=[b.ravel().tolist() for b in lifted.blocks]),
            dist_to_reference=procrustes_distance(lifted, reference)[0] if reference is not None else None,
        )
        return doc, result

    def certify(self, s: Alignment, zeta: float = 0.5, gamma: float = 0.1, seed: int = DEFAULT_SEED) -> CertificationReport:
        return certify_alignment(self.system, s, zeta, gamma, seed)

    def rigidity(self, s: Alignment, max_partition_views: int = MAX_PARTITION_VIEWS) -> RigidityReport:
        return analyze_rigidity(self.system, s, max_partition_views)

    def dump_matrices(self, directory: str) -> None:
        dump_matrices(self.system, directory)


if __name__ == "__main__":
    from fixtures import named_fixture

    truth = named_fixture("grid")
    engine = AlignmentEngine(truth.framework)
    doc, _ = engine.align("spectral", reference=truth.alignment)
    print(json.dumps(doc.model_dump(exclude={"quotient_blocks", "alignment"}), indent=2))
    print(engine.certify(truth.alignment).model_dump_json(indent=2))
