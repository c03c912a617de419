import dataclasses
import sys

import numpy as np
import pytest

from errors import PreconditionError
from experiment import parse_eps_range
from framework import generate_grid_framework
from manifold import procrustes_distance
from spectral import (
    SWEEP_COLUMNS,
    SweepRow,
    noise_stability_bound,
    noise_sweep_experiment,
    quad_growth_check,
    random_alignment,
    spectral_init,
)
from stress import build_patch_stress


@pytest.fixture(scope="module")
def small_sweep(grid_truth):
    return noise_sweep_experiment(
        grid_truth.framework, grid_truth.alignment, [0.0, 0.02, 0.04], trials=2, iterations=50, seed=3
    )


@pytest.fixture(scope="module")
def desk_sweep(grid_truth):
    return noise_sweep_experiment(
        grid_truth.framework, grid_truth.alignment, parse_eps_range("0:0.02:0.2"), trials=3, seed=0
    )


def test_spectral_init_is_exact_without_noise(grid_truth, grid_system):
    init = spectral_init(grid_system)
    assert procrustes_distance(init.alignment, grid_truth.alignment)[0] <= 1e-8
    assert np.allclose(init.alignment.blocks[0], np.eye(2))
    assert init.near_singular == []
    assert init.gap > 0.0
    assert np.all(np.abs(init.bottom_eigs) <= 1e-9 * grid_system.c_norm)
    assert np.max(init.rounding_residuals) <= 1e-8


def test_spectral_init_in_three_dimensions():
    truth = generate_grid_framework(4, 3, 2, 0.3, seed=6)
    init = spectral_init(build_patch_stress(truth.framework))
    assert procrustes_distance(init.alignment, truth.alignment)[0] <= 1e-8


def test_quadratic_growth(grid_truth, grid_system):
    report = quad_growth_check(grid_system, grid_truth.alignment, samples=200, seed=1)
    assert report.holds
    assert report.violations == 0
    assert report.min_ratio >= 1.0 - 1e-9
    assert report.lambda_d1 == grid_system.lambda_d1()


def test_quadratic_growth_needs_affine_rigidity(fixture_systems):
    truth, sys_ = fixture_systems["cycle_collinear_overlaps"]
    with pytest.raises(PreconditionError):
        quad_growth_check(sys_, truth.alignment, samples=5)


def test_stability_bound_without_noise(grid_truth, grid_system):
    report = noise_stability_bound(grid_system, grid_system, grid_truth.alignment, grid_truth.alignment)
    assert report.applicable
    assert report.epsilon == 0.0 and report.delta_C == 0.0
    assert report.lemma_bound == 0.0
    assert report.lemma_holds
    assert report.delta_C_within_bound
    assert report.bound_lhs == 0.0
    assert report.delta_star > 0.0
    assert report.bound_satisfied


def test_stability_bound_is_not_applicable_without_affine_rigidity(fixture_systems):
    truth, sys_ = fixture_systems["four_bar_linkage"]
    report = noise_stability_bound(sys_, sys_, truth.alignment, truth.alignment)
    assert not report.applicable
    assert "rank(C)" in report.reason


def test_sweep_shape(small_sweep):
    assert len(small_sweep.rows) == 6
    assert small_sweep.levels() == [0.0, 0.02, 0.04]
    assert set(SWEEP_COLUMNS) <= set(SweepRow.model_fields)


def test_sweep_noiseless_rows(small_sweep):
    for row in small_sweep.rows:
        if row.eps == 0.0:
            assert row.dist_spec_to_S0 <= 1e-8
            assert row.F_final <= 1e-10
            assert row.converged


def test_sweep_bounds_and_trends(small_sweep):
    assert all(row.lemma_holds for row in small_sweep.rows)
    assert small_sweep.lambda_inversions() <= 1
    for row in small_sweep.rows:
        if row.eps > 0.0:
            assert row.F_final > 0.0
            assert row.F_final <= row.F_spec + 1e-12
            assert row.ratio_slope is not None and row.ratio_slope < 0.0


def test_sweep_is_deterministic(grid_truth, small_sweep):
    again = noise_sweep_experiment(
        grid_truth.framework, grid_truth.alignment, [0.0, 0.02, 0.04], trials=2, iterations=50, seed=3
    )
    assert [r.F_final for r in again.rows] == [r.F_final for r in small_sweep.rows]


def test_desk_sweep_lambda_trend(desk_sweep):
    assert len(desk_sweep.levels()) == 11
    assert len(desk_sweep.rows) == 33
    medians = desk_sweep.median("lambda_d1")
    assert desk_sweep.lambda_inversions(min_eps=0.04) <= 1
    assert medians[-1] > 2.0 * medians[0]


def test_desk_sweep_lemma_and_rates(desk_sweep):
    assert all(row.lemma_holds for row in desk_sweep.rows)
    for row in desk_sweep.rows:
        if row.eps == 0.0:
            assert row.converged
        else:
            assert row.F_final <= row.F_spec + 1e-12
            assert row.ratio_slope is not None and row.ratio_slope < 0.0


def test_near_singular_rounding_is_flagged(grid_system, caplog):
    d = grid_system.d
    vectors = grid_system.eigenvectors.copy()
    block = vectors[2 * d:3 * d, :d]
    u, sigma, vt = np.linalg.svd(block)
    sigma[-1] = 1e-10 * sigma[0]
    vectors[2 * d:3 * d, :d] = u @ np.diag(sigma) @ vt
    init = spectral_init(dataclasses.replace(grid_system, eigenvectors=vectors))
    assert init.near_singular == [3]
    assert "near-singular" in caplog.text


def test_random_alignment_is_seeded():
    a = random_alignment(4, 3, np.random.default_rng(9))
    b = random_alignment(4, 3, np.random.default_rng(9))
    assert a == b


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
