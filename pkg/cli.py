"""Command-line entry point: generate, align, certify, rigidity and experiment."""
import argparse
import logging
import os
import sys
from typing import List, Optional

from pydantic import ValidationError

from config import DEFAULT_SEED, MAX_PARTITION_VIEWS, OUTPUT_DIR, configure_logging
from engine import INIT_KINDS, AlignmentEngine
from errors import (
    ContractError,
    FrameworkError,
    GenerationError,
    PreconditionError,
    StepFailure,
)
from experiment import parse_eps_range, run_sweep
from fixtures import materialize_fixtures, named_fixture
from framework import generate_grid_framework, serialize_framework
from manifold import serialize_alignment
from rgd import RgdConfig
from rigidity import overlap_graph_analysis
from stress import build_patch_stress

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3

INPUT_ERRORS = (FrameworkError, ContractError, GenerationError, PreconditionError, ValidationError, OSError, ValueError)


def resolve_output(path: str) -> str:
    """Bare file names go to the configured output directory."""
    if not os.path.dirname(path):
        path = os.path.join(OUTPUT_DIR, path)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    return path


def _write(path: str, text: str) -> str:
    path = resolve_output(path)
    with open(path, "w") as f:
        f.write(text)
    return path


def cmd_generate(args) -> int:
    if args.named_fixtures:
        paths = materialize_fixtures(args.named_fixtures, args.seed)
        print(f"Wrote {len(paths) // 2} named fixtures to {args.named_fixtures}")
        return EXIT_OK
    truth = generate_grid_framework(args.grid, args.d, args.tiles, args.overlap, seed=args.seed)
    fw = truth.framework
    fw_path = _write(args.out or "framework.json", serialize_framework(fw))
    truth_path = _write(args.truth or os.path.splitext(fw_path)[0] + "_truth.json", serialize_alignment(truth.alignment))
    graph = overlap_graph_analysis(build_patch_stress(fw), truth.alignment)
    print(f"Generated framework: n={fw.n} m={fw.m} d={fw.d} edges={fw.num_edges}")
    print(f"Overlap graph G: {graph.graph_G_components} component(s); G-bar: {graph.graph_Gbar_components} component(s)")
    print(f"Framework -> {fw_path}")
    print(f"Ground truth -> {truth_path}")
    return EXIT_OK


def cmd_align(args) -> int:
    engine = AlignmentEngine.from_file(args.framework)
    if args.dump_matrices:
        engine.dump_matrices(args.dump_matrices)
    cfg = RgdConfig(beta=args.beta, gamma=args.gamma, grad_tol=args.grad_tol, max_iters=args.max_iters)
    reference = engine.load_alignment(args.reference) if args.reference else None
    try:
        doc, result = engine.align(args.init, cfg, reference, args.init_file)
    except StepFailure as e:
        if args.trace and e.trace is not None:
            e.trace.write_csv(resolve_output(args.trace))
        print(f"Step failure: {e}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    out = _write(args.out or "result.json", doc.model_dump_json(indent=2))
    if args.trace:
        result.trace.write_csv(resolve_output(args.trace))
    if args.alignment_out:
        _write(args.alignment_out, serialize_alignment(result.alignment.lift()))
    print(f"RGD {result.reason} after {result.iterations} iterations: F={result.final_F:.3e} grad={result.final_grad_norm:.3e}")
    print(f"Result -> {out}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_certify(args) -> int:
    engine = AlignmentEngine.from_file(args.framework)
    report = engine.certify(engine.load_alignment(args.alignment), args.zeta, args.gamma, args.seed)
    out = _write(args.out or "certification.json", report.model_dump_json(indent=2))
    print(f"critical={report.critical} nondegenerate={report.nondegenerate} lambda_key={report.lambda_key}")
    print(f"Report -> {out}")
    return EXIT_OK


def cmd_rigidity(args) -> int:
    engine = AlignmentEngine.from_file(args.framework)
    report = engine.rigidity(engine.load_alignment(args.alignment), args.max_partition_views)
    out = _write(args.out or "rigidity.json", report.model_dump_json(indent=2))
    print(f"inf_rigid={report.inf_rigid} affine_rigid={report.affine_rigid} unique={report.unique}")
    print(f"Report -> {out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.framework:
        if not args.truth:
            raise ContractError("experiment on a framework file needs its --truth alignment")
        engine = AlignmentEngine.from_file(args.framework)
        fw0, s0 = engine.framework, engine.load_alignment(args.truth)
    else:
        truth = named_fixture("grid", args.seed)
        fw0, s0 = truth.framework, truth.alignment
    run_sweep(
        fw0,
        s0,
        parse_eps_range(args.eps),
        trials=args.trials,
        iterations=args.iters,
        seed=args.seed,
        out_csv=resolve_output(args.out or "sweep.csv"),
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help="RNG seed")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeat for debug)")
    common.add_argument("--out", type=str, default=None, help="main output file")

    parser = argparse.ArgumentParser(description="Rigid patch alignment: RGD, certification and rigidity tests")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", parents=[common], help="write a grid framework and its ground truth")
    gen.add_argument("--grid", type=int, default=10, help="grid points per dimension")
    gen.add_argument("--d", type=int, default=2, choices=[1, 2, 3])
    gen.add_argument("--tiles", type=int, default=3, help="tiles per dimension")
    gen.add_argument("--overlap", type=float, default=0.3, help="overlap fraction of a tile")
    gen.add_argument("--truth", type=str, default=None, help="ground-truth alignment file")
    gen.add_argument(
        "--paper-fixtures", "--named-fixtures", dest="named_fixtures", type=str, default=None, metavar="DIR",
        help="write the named fixtures to DIR",
    )
    gen.set_defaults(func=cmd_generate)

    align = sub.add_parser("align", parents=[common], help="run RGD on a framework")
    align.add_argument("--framework", required=True)
    align.add_argument("--init", choices=INIT_KINDS, default="spectral")
    align.add_argument("--init-file", default=None)
    align.add_argument("--max-iters", type=int, default=1000)
    align.add_argument("--beta", type=float, default=0.5)
    align.add_argument("--gamma", type=float, default=0.1)
    align.add_argument("--grad-tol", type=float, default=None)
    align.add_argument("--reference", default=None, help="alignment to measure Procrustes distance against")
    align.add_argument("--trace", default=None, help="per-iteration CSV")
    align.add_argument("--alignment-out", default=None, help="final lifted alignment JSON")
    align.add_argument("--dump-matrices", default=None, metavar="DIR", help="write C, B, D and L_Gamma as CSV")
    align.set_defaults(func=cmd_align)

    cert = sub.add_parser("certify", parents=[common], help="second-order certificate of an alignment")
    cert.add_argument("--framework", required=True)
    cert.add_argument("--alignment", required=True)
    cert.add_argument("--zeta", type=float, default=0.5)
    cert.add_argument("--gamma", type=float, default=0.1)
    cert.set_defaults(func=cmd_certify)

    rig = sub.add_parser("rigidity", parents=[common], help="rigidity analyses of an alignment")
    rig.add_argument("--framework", required=True)
    rig.add_argument("--alignment", required=True)
    rig.add_argument("--max-partition-views", type=int, default=MAX_PARTITION_VIEWS)
    rig.set_defaults(func=cmd_rigidity)

    exp = sub.add_parser("experiment", parents=[common], help="noise sweep of SPEC + RGD")
    exp.add_argument("--framework", default=None, help="clean framework (defaults to the grid fixture)")
    exp.add_argument("--truth", default=None)
    exp.add_argument("--eps", default="0:0.02:0.2", help="start:step:end")
    exp.add_argument("--trials", type=int, default=5)
    exp.add_argument("--iters", type=int, default=100)
    exp.set_defaults(func=cmd_experiment)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.func(args)
    except INPUT_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except StepFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
