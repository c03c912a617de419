import sys

import numpy as np
import pytest

from certify import (
    build_aligned_stress,
    build_certificate_matrix,
    certify_alignment,
    convergence_radius,
    coordinate_permutation,
    hessian_operator,
    hessian_quadratic_form,
    is_critical,
    is_perfect_alignment,
    mathbb_L_from_blocks,
    mathcal_L_block,
    nondegeneracy_test,
)
from errors import DegenerateAlignmentError
from fixtures import named_fixture
from framework import NoiseSpec, generate_grid_framework, inject_noise, random_orthogonal
from manifold import HorizontalTangent, metric, procrustes_distance, random_horizontal, retract
from rgd import run_rgd
from rigidity import two_view_tests
from spectral import random_alignment, spectral_init
from stress import alignment_error, build_patch_stress


def verdict_at(sys_, s):
    aligned = build_aligned_stress(sys_, s)
    cert = build_certificate_matrix(aligned)
    return aligned, cert, nondegeneracy_test(cert, aligned)


@pytest.mark.parametrize(
    "name, expected",
    [
        ("two_view_one_point", False),
        ("two_view_two_points", True),
        ("two_view_three_points", True),
        ("cycle_collinear_overlaps", True),
        ("four_bar_linkage", False),
        ("pinned_triangle", True),
    ],
)
def test_fixture_verdicts(fixture_systems, name, expected):
    truth, sys_ = fixture_systems[name]
    aligned, cert, verdict = verdict_at(sys_, truth.alignment)
    assert aligned.critical
    assert verdict.applicable
    assert verdict.psd
    assert verdict.nondegenerate is expected
    assert (cert.rank == cert.rank_target) is expected


def test_grid_is_nondegenerate(grid_truth, grid_system):
    _, cert, verdict = verdict_at(grid_system, grid_truth.alignment)
    assert verdict.nondegenerate
    assert verdict.lambda_key > cert.tau
    assert cert.rank == cert.rank_target == grid_system.m - 1


def test_cycle_rank_matches_quotient_dimension(fixture_systems):
    truth, sys_ = fixture_systems["cycle_collinear_overlaps"]
    _, cert, _ = verdict_at(sys_, truth.alignment)
    assert cert.rank == 3
    assert sys_.rank_C() == 3


def test_perfect_alignment_is_critical(grid_truth, grid_system, rng):
    aligned = build_aligned_stress(grid_system, grid_truth.alignment)
    assert np.linalg.norm(aligned.C_hat) <= 1e-8 * grid_system.c_norm
    assert is_perfect_alignment(grid_system, grid_truth.alignment)
    assert is_critical(grid_system, grid_truth.alignment)[0]

    s = random_alignment(grid_system.m, grid_system.d, rng)
    assert not is_perfect_alignment(grid_system, s)
    critical, residual = is_critical(grid_system, s)
    assert not critical and residual > 1e-3


def test_non_critical_alignment_gets_no_verdict(grid_system, rng):
    _, _, verdict = verdict_at(grid_system, random_alignment(grid_system.m, grid_system.d, rng))
    assert not verdict.applicable
    assert verdict.nondegenerate is None
    assert "not critical" in verdict.reason


def test_two_view_residual_matches_symmetry_of_M(fixture_systems, rng):
    truth, sys_ = fixture_systems["two_view_three_points"]
    for _ in range(5):
        s = random_alignment(2, 2, rng)
        _, residual = is_critical(sys_, s)
        tv = two_view_tests(truth.framework, sys_, s)
        assert residual == pytest.approx(tv.symmetry_residual, rel=1e-9, abs=1e-12)


def test_quadratic_form_is_second_derivative(grid_system, rng):
    s = random_alignment(grid_system.m, grid_system.d, rng)
    aligned = build_aligned_stress(grid_system, s)
    h = 1e-4
    for _ in range(3):
        omega = random_horizontal(s, rng, norm=1.0)
        f0 = alignment_error(grid_system, s)
        plus = alignment_error(grid_system, retract(s, omega, h))
        minus = alignment_error(grid_system, retract(s, omega, -h))
        numeric = (plus - 2.0 * f0 + minus) / h ** 2
        form = hessian_quadratic_form(aligned, omega)
        assert numeric == pytest.approx(form, rel=1e-4, abs=1e-5 * grid_system.c_norm)


def test_quadratic_form_at_rgd_critical_points(grid_system, fixture_systems, rng):
    truth, _ = fixture_systems["two_view_three_points"]
    noisy = build_patch_stress(inject_noise(truth.framework, NoiseSpec(epsilon=0.05, seed=1)))
    h = 1e-4
    for sys_ in (grid_system, noisy):
        result = run_rgd(sys_, spectral_init(sys_).quotient)
        assert result.converged
        s = result.alignment.lift()
        aligned = build_aligned_stress(sys_, s)
        f0 = alignment_error(sys_, s)
        for _ in range(3):
            omega = random_horizontal(s, rng, norm=1.0)
            plus = alignment_error(sys_, retract(s, omega, h))
            minus = alignment_error(sys_, retract(s, omega, -h))
            numeric = (plus - 2.0 * f0 + minus) / h ** 2
            form = hessian_quadratic_form(aligned, omega)
            assert numeric == pytest.approx(form, rel=1e-4, abs=1e-8 * (1.0 + sys_.c_norm))


def test_hessian_operator_matches_quadratic_form(grid_truth, grid_system, rng):
    for s in (grid_truth.alignment, random_alignment(grid_system.m, grid_system.d, rng)):
        aligned = build_aligned_stress(grid_system, s)
        omega = random_horizontal(s, rng, norm=1.0)
        hess = hessian_operator(grid_system, s, omega)
        assert np.allclose(hess.skews.sum(axis=0), 0.0, atol=1e-9 * grid_system.c_norm)
        assert metric(hess, omega) == pytest.approx(hessian_quadratic_form(aligned, omega), rel=1e-8, abs=1e-9)
        other = random_horizontal(s, rng, norm=1.0)
        assert metric(hess, other) == pytest.approx(
            metric(hessian_operator(grid_system, s, other), omega), rel=1e-8, abs=1e-9
        )


def test_certificate_matrix_encodes_the_form(grid_system, rng):
    cube = build_patch_stress(generate_grid_framework(4, 3, 2, 0.3, seed=2).framework)
    for sys_ in (grid_system, cube):
        s = random_alignment(sys_.m, sys_.d, rng)
        aligned = build_aligned_stress(sys_, s)
        cert = build_certificate_matrix(aligned)
        vec = rng.standard_normal(cert.mathbb_L.shape[0])
        omega = HorizontalTangent.from_omega(s, vec)
        direct = float(np.sum(omega.stacked * (aligned.L_sym @ omega.stacked)))
        assert vec @ cert.mathbb_L @ vec == pytest.approx(direct, rel=1e-9, abs=1e-9 * (1.0 + sys_.c_norm))


def test_block_assembly_matches_permutation(grid_system, rng):
    cube = build_patch_stress(generate_grid_framework(4, 3, 2, 0.3, seed=2).framework)
    for sys_ in (grid_system, cube):
        s = random_alignment(sys_.m, sys_.d, rng)
        cert = build_certificate_matrix(build_aligned_stress(sys_, s))
        assembled = mathbb_L_from_blocks(cert.mathcal_L, sys_.d, sys_.m)
        assert np.allclose(assembled, cert.mathbb_L, atol=1e-10 * (1.0 + sys_.c_norm))


def test_planar_certificate_is_sum_of_coordinate_blocks(grid_system, rng):
    s = random_alignment(grid_system.m, grid_system.d, rng)
    cert = build_certificate_matrix(build_aligned_stress(grid_system, s))
    m = grid_system.m
    expected = mathcal_L_block(cert.mathcal_L, m, 0, 0) + mathcal_L_block(cert.mathcal_L, m, 1, 1)
    assert np.allclose(cert.mathbb_L, expected)


def test_coordinate_permutation_regroups_entries(rng):
    d, m = 3, 4
    L = rng.standard_normal((m * d, m * d))
    P = coordinate_permutation(d, m)
    permuted = P @ L @ P.T
    for p, i, q, j in ((0, 1, 2, 3), (2, 0, 1, 2), (1, 3, 1, 3)):
        assert permuted[p * m + i, q * m + j] == L[i * d + p, j * d + q]


def test_trivial_directions_are_in_the_kernel(grid_truth, grid_system):
    cert = build_certificate_matrix(build_aligned_stress(grid_system, grid_truth.alignment))
    ones = np.ones(grid_system.m)
    assert np.linalg.norm(cert.mathbb_L @ ones) <= 1e-9 * (1.0 + grid_system.c_norm)


def test_radius_in_the_noiseless_case(grid_truth, grid_system):
    aligned, cert, _ = verdict_at(grid_system, grid_truth.alignment)
    radius = convergence_radius(cert, aligned, grid_system, zeta=0.5, gamma=0.1)
    assert radius.noiseless
    assert radius.c3 == pytest.approx(np.linalg.norm(grid_system.C, 2))
    assert radius.delta0 == pytest.approx(abs(radius.lambda_minus) / (2.0 * (radius.c1 + 2.0 * radius.c3)))
    assert radius.delta == radius.delta0
    r = 0.5 * radius.lambda_minus / (radius.lambda_plus + 0.5 * radius.lambda_minus)
    assert radius.rate_r == pytest.approx(r)
    assert radius.rate_q == pytest.approx(1.0 - 2.0 * 0.1 * 0.9 * r * (1.0 + r))
    assert 0.0 < radius.rate_q < 1.0

    with pytest.raises(ValueError):
        convergence_radius(cert, aligned, grid_system, zeta=1.0)


def test_certificate_spectrum_is_bounded_by_C(grid_truth, grid_system, fixture_systems):
    cases = [(grid_truth, grid_system)] + list(fixture_systems.values())
    for truth, sys_ in cases:
        _, cert, _ = verdict_at(sys_, truth.alignment)
        slack = 1e-9 * (1.0 + sys_.c_norm)
        assert cert.lambda_minus <= cert.lambda_plus
        assert cert.lambda_plus <= 2.0 * sys_.eigenvalues[-1] + slack


def test_hessian_stays_positive_near_the_alignment(grid_truth, grid_system, rng):
    zeta = 0.5
    truth = grid_truth.alignment
    aligned, cert, _ = verdict_at(grid_system, truth)
    radius = convergence_radius(cert, aligned, grid_system, zeta=zeta)
    lower = (1.0 - zeta) * radius.lambda_minus
    for _ in range(50):
        step = zeta * radius.delta0 * rng.uniform(0.1, 1.0)
        o = retract(truth, random_horizontal(truth, rng, norm=step))
        assert procrustes_distance(o, truth)[0] <= zeta * radius.delta0 + 1e-12
        omega = random_horizontal(o, rng, norm=1.0)
        assert metric(hessian_operator(grid_system, o, omega), omega) >= lower * metric(omega, omega)


def test_rgd_output_is_critical(fixture_systems):
    truth, _ = fixture_systems["two_view_three_points"]
    sys_ = build_patch_stress(inject_noise(truth.framework, NoiseSpec(epsilon=0.05, seed=1)))
    result = run_rgd(sys_, spectral_init(sys_).quotient)
    assert result.converged
    critical, residual = is_critical(sys_, result.alignment.lift(), tol=result.grad_tol)
    assert critical
    assert residual <= result.final_grad_norm + 1e-15


def test_verdicts_are_invariant_under_global_rotation(grid_truth, grid_system, fixture_systems, rng):
    cases = [(grid_truth, grid_system)] + list(fixture_systems.values())
    for truth, sys_ in cases:
        aligned, cert, verdict = verdict_at(sys_, truth.alignment)
        for _ in range(10):
            q = random_orthogonal(sys_.d, rng)
            aligned_q = build_aligned_stress(sys_, truth.alignment.times(q), tol=aligned.tol)
            cert_q = build_certificate_matrix(aligned_q)
            verdict_q = nondegeneracy_test(cert_q, aligned_q)
            assert aligned_q.critical == aligned.critical
            assert verdict_q.nondegenerate == verdict.nondegenerate
            assert cert_q.rank == cert.rank
            assert np.allclose(cert_q.eigs, cert.eigs, atol=1e-9 * (1.0 + sys_.c_norm))
            assert verdict_q.lambda_key == pytest.approx(verdict.lambda_key, abs=1e-9 * (1.0 + sys_.c_norm))


def test_radius_is_refused_when_degenerate(fixture_systems):
    truth, sys_ = fixture_systems["four_bar_linkage"]
    aligned, cert, _ = verdict_at(sys_, truth.alignment)
    with pytest.raises(DegenerateAlignmentError):
        convergence_radius(cert, aligned, sys_)


def test_noisy_optimum_uses_the_noisy_radius(fixture_systems):
    truth, _ = fixture_systems["two_view_three_points"]
    noisy = inject_noise(truth.framework, NoiseSpec(epsilon=0.05, seed=1))
    sys_ = build_patch_stress(noisy)
    result = run_rgd(sys_, spectral_init(sys_).quotient)
    assert result.converged
    report = certify_alignment(sys_, result.alignment.lift())
    assert report.critical
    assert report.nondegenerate
    assert report.delta0 is None
    assert report.delta is not None and report.delta > 0.0
    assert report.invariance_check


def test_certification_report(grid_truth, grid_system):
    report = certify_alignment(grid_system, grid_truth.alignment, seed=4)
    assert report.critical
    assert report.nondegenerate
    assert report.invariance_check
    assert report.delta0 is not None and report.delta0 > 0.0
    assert report.rank_LL == report.rank_target

    one_point = named_fixture("two_view_one_point", seed=3)
    degenerate = certify_alignment(build_patch_stress(one_point.framework), one_point.alignment)
    assert degenerate.nondegenerate is False
    assert degenerate.delta is None
    assert degenerate.invariance_check


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
