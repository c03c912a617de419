import csv
import json
import sys

import pytest

from cli import EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_OK, main
from engine import AlignmentEngine
from errors import ContractError, FrameworkError
from experiment import parse_eps_range
from framework import PatchFramework
from spectral import SWEEP_COLUMNS


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    root = tmp_path_factory.mktemp("grid")
    fw, truth = root / "grid.json", root / "grid_truth.json"
    assert main(["generate", "--seed", "1", "--out", str(fw)]) == EXIT_OK
    return fw, truth


@pytest.fixture(scope="module")
def named(tmp_path_factory):
    root = tmp_path_factory.mktemp("named")
    assert main(["generate", "--paper-fixtures", str(root), "--seed", "3"]) == EXIT_OK
    return root


# --- generate ---

def test_generate_writes_framework_and_truth(generated, tmp_path):
    fw, truth = generated
    assert fw.exists() and truth.exists()
    doc = json.loads(fw.read_text())
    assert (doc["n"], doc["m"], doc["d"]) == (100, 9, 2)

    again = tmp_path / "again.json"
    assert main(["generate", "--seed", "1", "--out", str(again)]) == EXIT_OK
    assert again.read_bytes() == fw.read_bytes()
    assert (tmp_path / "again_truth.json").read_bytes() == truth.read_bytes()


def test_generate_rejects_too_many_tiles(tmp_path, capsys):
    code = main(["generate", "--grid", "4", "--tiles", "50", "--out", str(tmp_path / "x.json")])
    assert code == EXIT_INPUT
    assert "error:" in capsys.readouterr().err


def test_named_fixtures_are_written(named):
    assert (named / "four_bar_linkage.json").exists()
    assert (named / "pinned_triangle_truth.json").exists()
    assert (named / "grid.json").exists()


def test_named_fixtures_alias_matches(named, tmp_path):
    assert main(["generate", "--named-fixtures", str(tmp_path), "--seed", "3"]) == EXIT_OK
    for name in ("two_view_one_point.json", "cycle_collinear_overlaps_truth.json"):
        assert (tmp_path / name).read_bytes() == (named / name).read_bytes()


# --- align ---

def test_align_recovers_ground_truth(generated, tmp_path):
    fw, truth = generated
    out, trace, lifted = tmp_path / "result.json", tmp_path / "trace.csv", tmp_path / "aligned.json"
    code = main([
        "align", "--framework", str(fw), "--reference", str(truth), "--out", str(out),
        "--trace", str(trace), "--alignment-out", str(lifted), "--dump-matrices", str(tmp_path / "mats"),
    ])
    assert code == EXIT_OK
    result = json.loads(out.read_text())
    assert result["converged"] and result["init"] == "spectral"
    assert result["dist_to_reference"] <= 1e-8
    assert len(result["quotient_blocks"]) == 8
    assert lifted.exists()
    assert (tmp_path / "mats" / "C.csv").exists()
    assert trace.read_text().startswith("iter,F,grad_norm")


def test_align_out_of_iterations(generated, tmp_path):
    fw, _ = generated
    trace = tmp_path / "trace.csv"
    code = main([
        "align", "--framework", str(fw), "--init", "identity", "--max-iters", "1",
        "--out", str(tmp_path / "r.json"), "--trace", str(trace),
    ])
    assert code == EXIT_NOT_CONVERGED
    with open(trace) as f:
        rows = list(csv.reader(f))
    assert len(rows) == 3


def test_align_from_file(generated, tmp_path):
    fw, truth = generated
    code = main(["align", "--framework", str(fw), "--init", "file", "--init-file", str(truth),
                 "--out", str(tmp_path / "r.json")])
    assert code == EXIT_OK
    assert json.loads((tmp_path / "r.json").read_text())["iterations"] == 0


# --- certify and rigidity ---

def test_certify_named_fixture(named, tmp_path):
    out = tmp_path / "cert.json"
    code = main([
        "certify", "--framework", str(named / "two_view_one_point.json"),
        "--alignment", str(named / "two_view_one_point_truth.json"), "--out", str(out),
    ])
    assert code == EXIT_OK
    report = json.loads(out.read_text())
    assert report["critical"] is True
    assert report["nondegenerate"] is False


def test_certify_missing_alignment(named, tmp_path):
    code = main([
        "certify", "--framework", str(named / "pinned_triangle.json"),
        "--alignment", str(tmp_path / "missing.json"), "--out", str(tmp_path / "c.json"),
    ])
    assert code == EXIT_INPUT


def test_certify_mismatched_alignment(named, tmp_path):
    code = main([
        "certify", "--framework", str(named / "pinned_triangle.json"),
        "--alignment", str(named / "four_bar_linkage_truth.json"), "--out", str(tmp_path / "c.json"),
    ])
    assert code == EXIT_INPUT


def test_rigidity_of_grid(generated, tmp_path):
    fw, truth = generated
    out = tmp_path / "rig.json"
    assert main(["rigidity", "--framework", str(fw), "--alignment", str(truth), "--out", str(out)]) == EXIT_OK
    report = json.loads(out.read_text())
    assert report["affine_rigid"] and report["unique"]
    assert report["partition"]["verdict"] == "inconclusive"


# --- experiment ---

def test_experiment_writes_sweep(tmp_path):
    out = tmp_path / "sweep.csv"
    code = main(["experiment", "--eps", "0:0.05:0.1", "--trials", "1", "--iters", "20", "--out", str(out)])
    assert code == EXIT_OK
    with open(out) as f:
        rows = list(csv.reader(f))
    assert rows[0] == SWEEP_COLUMNS
    assert len(rows) == 4
    assert [float(r[0]) for r in rows[1:]] == [0.0, 0.05, 0.1]


def test_experiment_needs_truth_with_framework(generated, tmp_path):
    fw, _ = generated
    assert main(["experiment", "--framework", str(fw), "--out", str(tmp_path / "s.csv")]) == EXIT_INPUT


def test_parse_eps_range():
    assert parse_eps_range("0:0.05:0.1") == [0.0, 0.05, 0.1]
    assert parse_eps_range("0.3") == [0.3]
    with pytest.raises(ValueError):
        parse_eps_range("1:2")
    with pytest.raises(ValueError):
        parse_eps_range("0:-1:1")


# --- engine ---

def test_engine_refuses_disconnected_framework():
    fw = PatchFramework.from_views(2, 6, [{0: (0, 0), 1: (1, 0), 2: (0, 1)}, {3: (0, 0), 4: (1, 0), 5: (0, 1)}])
    with pytest.raises(FrameworkError):
        AlignmentEngine(fw)


def test_engine_contracts(generated, named):
    fw, _ = generated
    engine = AlignmentEngine.from_file(str(fw))
    with pytest.raises(ContractError):
        engine.load_alignment(str(named / "four_bar_linkage_truth.json"))
    with pytest.raises(ContractError):
        engine.initial_alignment("bogus")
    with pytest.raises(ContractError):
        engine.initial_alignment("file")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
