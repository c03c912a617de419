import math
import sys

import numpy as np
import pytest

from certify import build_aligned_stress, build_certificate_matrix
from errors import ContractError, PreconditionError
from framework import PatchFramework, embed_views, random_orthogonal
from manifold import Alignment
from rigidity import (
    analyze_rigidity,
    extract_certificates,
    infinitesimal_rigidity_test,
    overlap_graph_analysis,
    overlap_rank,
    partition_necessary_check,
    realization_stability_constant,
    realize,
    remove_view,
    rigidity_matrix,
    two_view_tests,
)
from spectral import random_alignment
from stress import build_patch_stress


def certificates_at(sys_, s):
    aligned = build_aligned_stress(sys_, s)
    return extract_certificates(sys_, aligned, build_certificate_matrix(aligned))


def assert_keeps_view_distances(fw, points, perturbation):
    """(p_k1 - p_k2)^T (x_k1 - x_k2) = 0 for every pair of points sharing a view."""
    for i in range(fw.m):
        members = fw.view_points(i)
        for a, k1 in enumerate(members):
            for k2 in members[a + 1:]:
                change = (perturbation[k1] - perturbation[k2]) @ (points[k1] - points[k2])
                assert abs(change) <= 1e-8


@pytest.fixture(scope="module")
def chain():
    """Two well-overlapping views plus a third hanging off a single shared point."""
    rng = np.random.default_rng(8)
    points = rng.uniform(-1.0, 1.0, size=(8, 2))
    truth = embed_views(points, [[0, 1, 2, 3], [2, 3, 4, 5], [5, 6, 7]], rng)
    return truth, build_patch_stress(truth.framework)


# --- Realization and infinitesimal rigidity ---

def test_realization_recovers_the_points(grid_truth, grid_system):
    fw = grid_truth.framework
    real = realize(grid_system, grid_truth.alignment)
    expected = grid_truth.points - grid_truth.points.mean(axis=0)
    assert np.allclose(real.points, expected, atol=1e-9)
    assert np.allclose(real.points.mean(axis=0), 0.0, atol=1e-12)
    for k, i in fw.edges[::7]:
        assert np.allclose(real.aligned_coord(fw, k, i), real.points[k], atol=1e-9)


def test_realization_rotates_with_the_alignment(grid_system, rng):
    for _ in range(5):
        s = random_alignment(grid_system.m, grid_system.d, rng)
        q = random_orthogonal(grid_system.d, rng)
        base = realize(grid_system, s)
        moved = realize(grid_system, s.times(q))
        assert np.allclose(moved.points, base.points @ q, atol=1e-10)
        assert np.allclose(moved.translations, base.translations @ q, atol=1e-10)


@pytest.mark.parametrize(
    "name, rank, rigid",
    [
        ("two_view_one_point", 10, False),
        ("two_view_two_points", 13, True),
        ("four_bar_linkage", 12, False),
        ("pinned_triangle", 9, True),
        ("cycle_collinear_overlaps", 21, True),
    ],
)
def test_infinitesimal_rigidity_of_fixtures(fixture_systems, name, rank, rigid):
    truth, sys_ = fixture_systems[name]
    real = realize(sys_, truth.alignment)
    assert infinitesimal_rigidity_test(truth.framework, real) == (rank, rigid)


def test_rigidity_matrix_shape(fixture_systems):
    truth, sys_ = fixture_systems["pinned_triangle"]
    R = rigidity_matrix(truth.framework, realize(sys_, truth.alignment))
    assert R.shape == (9, 12)
    assert np.allclose(R @ np.tile([1.0, 0.0], 6), 0.0)


def test_grid_is_infinitesimally_rigid(grid_truth, grid_system):
    rank, rigid = infinitesimal_rigidity_test(grid_truth.framework, realize(grid_system, grid_truth.alignment))
    assert rigid
    assert rank == 2 * grid_truth.framework.n - 3


# --- Overlaps and two views ---

@pytest.mark.parametrize(
    "name, rank_m, nondegenerate, unique",
    [
        ("two_view_one_point", 0, False, False),
        ("two_view_two_points", 1, True, False),
        ("two_view_three_points", 2, True, True),
    ],
)
def test_two_view_verdicts(fixture_systems, name, rank_m, nondegenerate, unique):
    truth, sys_ = fixture_systems[name]
    tv = two_view_tests(truth.framework, sys_, truth.alignment)
    assert tv.critical
    assert tv.symmetry_residual <= 1e-9
    assert tv.rank_M == rank_m
    assert tv.overlap_rank == rank_m
    assert tv.nondegenerate is nondegenerate
    assert tv.unique is unique


def test_two_view_off_critical_alignment(fixture_systems):
    truth, sys_ = fixture_systems["two_view_three_points"]
    theta = 0.4
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    blocks = truth.alignment.blocks.copy()
    blocks[1] = blocks[1] @ rot
    tv = two_view_tests(truth.framework, sys_, Alignment(blocks))
    assert not tv.critical
    assert not tv.nondegenerate and not tv.unique


def test_two_view_tests_need_two_views(grid_truth, grid_system):
    with pytest.raises(ContractError):
        two_view_tests(grid_truth.framework, grid_system, grid_truth.alignment)


def test_overlap_rank_of_single_views(fixture_systems):
    truth, _ = fixture_systems["cycle_collinear_overlaps"]
    fw = truth.framework
    result = overlap_rank(fw, [0], [1])
    assert result.shared_points == [0, 1]
    assert result.rank == 1
    assert overlap_rank(fw, [0], [2]).empty
    with pytest.raises(ContractError):
        overlap_rank(fw, [0], [0])
    with pytest.raises(ContractError):
        overlap_rank(fw, [0, 1], [2])


def test_overlap_of_view_sets_needs_agreement(grid_truth, grid_system, rng):
    fw = grid_truth.framework
    good = overlap_rank(fw, [0, 1], list(range(2, 9)), realize(grid_system, grid_truth.alignment))
    assert good.rank == 2
    bad = realize(grid_system, random_alignment(fw.m, fw.d, rng))
    with pytest.raises(PreconditionError):
        overlap_rank(fw, [0, 1], list(range(2, 9)), bad)


# --- Overlap graphs and partitions ---

def test_graphs_of_collinear_cycle(fixture_systems):
    truth, sys_ = fixture_systems["cycle_collinear_overlaps"]
    report = overlap_graph_analysis(sys_, truth.alignment)
    assert report.graph_G_components == 1
    assert report.graph_Gbar_components == 4
    assert report.nondegenerate_certified
    assert not report.unique_certified


def test_graphs_of_single_point_overlap(fixture_systems):
    truth, sys_ = fixture_systems["two_view_one_point"]
    report = overlap_graph_analysis(sys_, truth.alignment)
    assert report.coarse_G_size == 2
    assert not report.nondegenerate_certified


def test_graphs_of_pinned_triangle(fixture_systems):
    truth, sys_ = fixture_systems["pinned_triangle"]
    report = overlap_graph_analysis(sys_, truth.alignment)
    assert report.graph_G_components == report.coarse_G_size == 3
    assert not report.nondegenerate_certified


def test_grid_graphs_certify_uniqueness(grid_truth, grid_system):
    report = overlap_graph_analysis(grid_system, grid_truth.alignment)
    assert report.unique_certified and report.nondegenerate_certified
    assert report.rounds_Gbar[-1].groups == 1


def test_graphs_need_a_perfect_alignment(grid_system, rng):
    with pytest.raises(PreconditionError):
        overlap_graph_analysis(grid_system, random_alignment(grid_system.m, grid_system.d, rng))


def test_partition_check_of_four_bar(fixture_systems):
    truth, sys_ = fixture_systems["four_bar_linkage"]
    report = partition_necessary_check(sys_, truth.alignment)
    assert report.partitions == 7
    assert report.min_rank == 1
    assert report.locally_necessary_holds
    assert not report.globally_necessary_holds
    assert report.verdict == "not-unique"
    assert report.argmin_A[0] == 1
    with pytest.raises(PreconditionError):
        partition_necessary_check(sys_, truth.alignment, max_m=3)


def test_partition_verdicts(fixture_systems, grid_truth, grid_system):
    truth, sys_ = fixture_systems["two_view_one_point"]
    assert partition_necessary_check(sys_, truth.alignment).verdict == "degenerate"
    report = partition_necessary_check(grid_system, grid_truth.alignment)
    assert report.partitions == 2 ** 8 - 1
    assert report.min_rank == 2
    assert report.verdict == "inconclusive"


# --- Certificates ---

def test_single_point_overlap_certificate(fixture_systems):
    truth, sys_ = fixture_systems["two_view_one_point"]
    certs = certificates_at(sys_, truth.alignment)
    assert [c.trivial for c in certs] == [True, False]
    flex = certs[1]
    assert np.allclose(flex.skews[0], -flex.skews[1], atol=1e-8)
    assert flex.perturbation.shape == (truth.framework.n, 2)
    assert np.linalg.norm(flex.perturbation) > 1e-6
    assert_keeps_view_distances(truth.framework, realize(sys_, truth.alignment).points, flex.perturbation)


@pytest.mark.parametrize("name", ["two_view_three_points", "pinned_triangle"])
def test_nondegenerate_alignments_have_only_trivial_certificates(fixture_systems, name):
    truth, sys_ = fixture_systems[name]
    certs = certificates_at(sys_, truth.alignment)
    assert len(certs) == 1
    assert certs[0].trivial


def test_four_bar_has_a_flex(fixture_systems):
    truth, sys_ = fixture_systems["four_bar_linkage"]
    certs = certificates_at(sys_, truth.alignment)
    flexes = [c for c in certs if not c.trivial]
    assert flexes
    points = realize(sys_, truth.alignment).points
    for flex in flexes:
        assert np.linalg.norm(flex.perturbation) > 1e-6
        assert_keeps_view_distances(truth.framework, points, flex.perturbation)


def test_certificates_need_a_perfect_alignment(grid_system, rng):
    with pytest.raises(PreconditionError):
        certificates_at(grid_system, random_alignment(grid_system.m, grid_system.d, rng))


def test_certificates_survive_view_removal(chain):
    truth, sys_ = chain
    certs = certificates_at(sys_, truth.alignment)
    assert any(not c.trivial for c in certs)
    reduced, s_red = remove_view(truth.framework, truth.alignment, 2)
    assert (reduced.n, reduced.m) == (6, 2)
    aligned = build_aligned_stress(build_patch_stress(reduced), s_red)
    for cert in certs:
        omega = cert.skews[:2].reshape(-1, 2)
        assert np.linalg.norm(aligned.L_sym @ omega) <= 1e-8 * (1.0 + np.linalg.norm(aligned.L_sym))
    with pytest.raises(ContractError):
        remove_view(truth.framework, truth.alignment, 3)


def test_stability_constant(grid_truth):
    assert math.isfinite(realization_stability_constant(grid_truth.framework))
    flat = PatchFramework.from_views(
        2, 4, [{0: (0, 0), 1: (1, 0), 2: (0, 1)}, {2: (0, 0), 3: (2, 1)}]
    )
    assert math.isinf(realization_stability_constant(flat))


# --- Combined report ---

def test_grid_report(grid_truth, grid_system):
    report = analyze_rigidity(grid_system, grid_truth.alignment)
    assert report.affine_rigid and report.inf_rigid
    assert report.rank_C == report.rank_C_target == 16
    assert report.unique is True
    assert report.two_view is None and "two_view" in report.skipped
    assert report.graph is not None and report.partition is not None
    assert len(report.certificates) == 1
    assert report.stability_constant is not None


def test_fixture_uniqueness(fixture_systems):
    expected = {
        "two_view_one_point": False,
        "two_view_two_points": False,
        "two_view_three_points": True,
        "cycle_collinear_overlaps": False,
        "four_bar_linkage": False,
    }
    for name, unique in expected.items():
        truth, sys_ = fixture_systems[name]
        assert analyze_rigidity(sys_, truth.alignment).unique is unique, name


def test_report_on_imperfect_alignment(grid_system, rng):
    report = analyze_rigidity(grid_system, random_alignment(grid_system.m, grid_system.d, rng))
    assert report.graph is None and report.partition is None and report.certificates is None
    assert {"graph", "partition", "certificates"} <= set(report.skipped)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
