import csv
import os
import sys

import numpy as np
import pytest

from errors import ContractError, DisconnectedFrameworkError
from framework import PatchFramework, random_orthogonal
from manifold import Alignment
from spectral import random_alignment
from stress import (
    alignment_error,
    alignment_error_change,
    alignment_error_oracle,
    build_graph_laplacian,
    build_patch_matrices,
    build_patch_stress,
    dump_matrices,
)


def random_framework(rng, n, m, d):
    """Point 0 sits in every view and point k in view k % m, so Gamma is connected."""
    views = [dict() for _ in range(m)]
    for i in range(m):
        views[i][0] = rng.standard_normal(d)
    for k in range(1, n):
        views[k % m][k] = rng.standard_normal(d)
        if rng.uniform() < 0.4:
            other = int(rng.integers(m))
            views[other].setdefault(k, rng.standard_normal(d))
    return PatchFramework.from_views(d, n, views)


def test_two_view_single_point_laplacian():
    fw = PatchFramework.from_views(2, 1, [{0: (1.0, 2.0)}, {0: (3.0, -1.0)}])
    lap, pinv = build_graph_laplacian(fw)
    assert np.array_equal(lap, np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]], dtype=float))
    assert np.allclose(pinv @ lap @ pinv, pinv, atol=1e-10)


def test_laplacian_kernel_and_pseudoinverse(grid_system):
    lap, pinv = grid_system.laplacian, grid_system.laplacian_pinv
    ones = np.ones(lap.shape[0])
    assert np.allclose(lap @ ones, 0.0)
    assert np.min(np.linalg.eigvalsh(lap)) > -1e-10
    assert np.allclose(pinv @ lap @ pinv, pinv, atol=1e-10)
    assert np.linalg.norm(grid_system.B @ ones) <= 1e-10


def test_disconnected_framework_is_refused():
    fw = PatchFramework.from_views(1, 2, [{0: (0.0,)}, {1: (1.0,)}])
    with pytest.raises(DisconnectedFrameworkError):
        build_patch_stress(fw)


def test_patch_matrices_layout():
    fw = PatchFramework.from_views(2, 1, [{0: (0.0, 0.0)}])
    B, D = build_patch_matrices(fw)
    assert not B.any() and not D.any()

    fw = PatchFramework.from_views(2, 3, [{0: (1.0, 0.0), 2: (0.0, 2.0)}, {1: (1.0, 1.0), 2: (3.0, 0.0)}])
    B, D = build_patch_matrices(fw)
    assert np.allclose(B[0:2, 3], -np.array([1.0, 2.0]))
    assert np.allclose(B[2:4, 4], -np.array([4.0, 1.0]))
    assert np.allclose(B[0:2, 1], 0.0)
    assert np.allclose(D[0:2, 2:4], 0.0)
    assert np.allclose(D[2:4, 2:4], np.array([[10.0, 1.0], [1.0, 1.0]]))


def test_two_view_laplacian_closed_form(fixture_systems):
    """The block formula for two views is a generalized inverse giving the same C."""
    truth, sys_ = fixture_systems["two_view_two_points"]
    fw = truth.framework
    n3, n1, n2 = 2, 3, 3
    left = list(range(n3, n3 + n1))
    right = list(range(n3 + n1, n3 + n1 + n2))
    order = left + right + list(range(n3)) + [fw.n, fw.n + 1]

    g = np.zeros((fw.n + 2, fw.n + 2))
    e1, e2, e3, v1, v2 = slice(0, n1), slice(n1, n1 + n2), slice(n1 + n2, n1 + n2 + n3), n1 + n2 + n3, n1 + n2 + n3 + 1
    g[e1, e1] = 2 * n3 * np.eye(n1) + 1.0
    g[e1, e2] = -1.0
    g[e2, e1] = -1.0
    g[e2, e2] = 2 * n3 * np.eye(n2) + 1.0
    g[e3, e3] = n3 * np.eye(n3)
    g[e1, v1], g[e1, v2] = 1.0, -1.0
    g[e2, v1], g[e2, v2] = -1.0, 1.0
    g[v1, e1], g[v1, e2] = 1.0, -1.0
    g[v2, e1], g[v2, e2] = -1.0, 1.0
    g[v1, v1], g[v1, v2], g[v2, v1], g[v2, v2] = 1.0, -1.0, -1.0, 1.0
    g /= 2 * n3

    inverse = np.empty_like(g)
    inverse[np.ix_(order, order)] = g
    lap, B = sys_.laplacian, sys_.B
    assert np.allclose(lap @ inverse @ lap, lap, atol=1e-10)
    assert np.allclose(B @ inverse @ B.T, B @ sys_.laplacian_pinv @ B.T, atol=1e-9)


def test_two_view_off_diagonal_block(fixture_systems):
    """C_12 = -1/2 Bbar_12 Bbar_21^T with the centered shared coordinates of each view."""
    truth, sys_ = fixture_systems["two_view_three_points"]
    fw = truth.framework
    shared = fw.shared_points(0, 1)
    x = np.array([fw.coord(k, 0) for k in shared]).T
    y = np.array([fw.coord(k, 1) for k in shared]).T
    x -= x.mean(axis=1, keepdims=True)
    y -= y.mean(axis=1, keepdims=True)
    assert np.allclose(sys_.C[0:2, 2:4], -0.5 * x @ y.T, atol=1e-9)


def test_stress_is_psd_and_annihilates_ground_truth(grid_truth, grid_system):
    C = grid_system.C
    assert np.allclose(C, C.T)
    assert grid_system.eigenvalues[0] >= -1e-9 * grid_system.eigenvalues[-1]
    assert np.linalg.norm(C @ grid_truth.alignment.stacked) <= 1e-8 * grid_system.c_norm
    fw = grid_truth.framework
    assert grid_system.rank_C() == (fw.m - 1) * fw.d


def test_oracle_equivalence_on_random_frameworks():
    rng = np.random.default_rng(2024)
    for trial in range(20):
        d = 2 + trial % 2
        m = int(rng.integers(2, 7))
        n = int(rng.integers(max(m + 1, 8), 51))
        fw = random_framework(rng, n, m, d)
        s = random_alignment(m, d, rng)
        oracle = alignment_error_oracle(fw, s)
        assert abs(alignment_error(build_patch_stress(fw), s) - oracle) <= 1e-8 * (1.0 + oracle)


def test_oracle_trivial_cases():
    rng = np.random.default_rng(5)
    single = PatchFramework.from_views(2, 3, [{0: (0, 0), 1: (1, 0), 2: (0, 1)}])
    assert alignment_error_oracle(single, random_alignment(1, 2, rng)) <= 1e-20

    pts = {0: (0.0, 0.0), 1: (1.0, 0.3), 2: (0.2, 1.1)}
    twins = PatchFramework.from_views(2, 3, [pts, pts])
    assert alignment_error_oracle(twins, Alignment.identity(2, 2)) <= 1e-20


def test_rotated_view_error_matches_stress(fixture_systems):
    truth, sys_ = fixture_systems["two_view_three_points"]
    theta = np.pi / 6
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    blocks = truth.alignment.blocks.copy()
    blocks[1] = blocks[1] @ rot
    s = Alignment(blocks)
    oracle = alignment_error_oracle(truth.framework, s)
    assert oracle > 1e-3
    assert alignment_error(sys_, s) == pytest.approx(oracle, rel=1e-8)


def test_error_is_invariant_under_global_transform(grid_system, rng):
    s = random_alignment(grid_system.m, grid_system.d, rng)
    base = alignment_error(grid_system, s)
    for _ in range(20):
        q = random_orthogonal(grid_system.d, rng)
        assert alignment_error(grid_system, s.times(q)) == pytest.approx(base, rel=1e-10)


def test_error_change_matches_difference(grid_system, rng):
    s = random_alignment(grid_system.m, grid_system.d, rng)
    t = random_alignment(grid_system.m, grid_system.d, rng)
    change = alignment_error_change(grid_system, s, t)
    direct = alignment_error(grid_system, t) - alignment_error(grid_system, s)
    assert change == pytest.approx(direct, rel=1e-9, abs=1e-9 * grid_system.c_norm)


def test_error_rejects_mismatched_alignment(grid_system):
    with pytest.raises(ContractError):
        alignment_error(grid_system, Alignment.identity(3, 2))


def test_dump_matrices(tmp_path, fixture_systems):
    _, sys_ = fixture_systems["two_view_one_point"]
    dump_matrices(sys_, str(tmp_path))
    for name, matrix in (("C", sys_.C), ("B", sys_.B), ("D", sys_.D), ("L_Gamma", sys_.laplacian)):
        with open(os.path.join(tmp_path, f"{name}.csv")) as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["rows", "cols"]
        assert tuple(int(v) for v in rows[1]) == matrix.shape
        assert np.allclose(np.array(rows[2:], dtype=float), matrix)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
