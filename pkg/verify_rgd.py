import math
import sys

import numpy as np
import pytest
from pydantic import ValidationError

from certify import certify_alignment
from errors import StepFailure
from framework import random_orthogonal
from manifold import (
    Alignment,
    QuotientAlignment,
    metric,
    procrustes_distance,
    project,
    random_horizontal,
    retract,
)
from rgd import (
    IterationRecord,
    RgdConfig,
    RgdTrace,
    armijo_step_size,
    descent_diagnostics,
    log_ratio_slope,
    quotient_error,
    riemannian_gradient,
    run_rgd,
)
from spectral import random_alignment, spectral_init
from stress import alignment_error, build_patch_stress


def scaled_system(truth, lambda_max=None, factor=None):
    """Stress system of the framework with every coordinate scaled; the ground truth still aligns it."""
    fw = truth.framework
    if factor is None:
        factor = math.sqrt(lambda_max / build_patch_stress(fw).eigenvalues[-1])
    return build_patch_stress(fw.with_coords(fw.coords * factor))


@pytest.fixture(scope="module")
def small_grid(grid_truth):
    return scaled_system(grid_truth, lambda_max=0.2)


def test_gradient_matches_finite_differences(grid_system, rng):
    s = random_alignment(grid_system.m, grid_system.d, rng)
    grad = riemannian_gradient(grid_system, s)
    h = 1e-5
    for _ in range(3):
        direction = random_horizontal(s, rng, norm=1.0)
        plus = alignment_error(grid_system, retract(s, direction, h))
        minus = alignment_error(grid_system, retract(s, direction, -h))
        numeric = (plus - minus) / (2 * h)
        assert numeric == pytest.approx(metric(grad, direction), rel=1e-6, abs=1e-8 * grid_system.c_norm)


def test_gradient_is_horizontal_and_equivariant(grid_system, rng):
    s = random_alignment(grid_system.m, grid_system.d, rng)
    q = random_orthogonal(grid_system.d, rng)
    grad = riemannian_gradient(grid_system, s)
    moved = riemannian_gradient(grid_system, s.times(q))
    assert np.allclose(grad.skews.sum(axis=0), 0.0, atol=1e-9 * grid_system.c_norm)
    assert np.allclose(moved.skews, q.T @ grad.skews @ q, atol=1e-9 * grid_system.c_norm)
    assert moved.norm() == pytest.approx(grad.norm(), rel=1e-10)


def test_quotient_error_matches_representatives(grid_system, rng):
    s = random_alignment(grid_system.m, grid_system.d, rng)
    assert quotient_error(grid_system, project(s)) == pytest.approx(alignment_error(grid_system, s), rel=1e-10)


def test_full_step_is_accepted_near_the_minimum(grid_truth, small_grid, rng):
    s = retract(grid_truth.alignment, random_horizontal(grid_truth.alignment, rng, norm=0.05))
    alpha, accepted, f_new = armijo_step_size(small_grid, s)
    assert alpha == 1.0
    assert f_new < alignment_error(small_grid, s)
    assert f_new == pytest.approx(alignment_error(small_grid, accepted), rel=1e-8, abs=1e-15)


def test_start_at_critical_point_stops_immediately(grid_truth, grid_system):
    result = run_rgd(grid_system, project(grid_truth.alignment))
    assert result.converged
    assert result.iterations == 0
    assert len(result.trace.records) == 1
    assert result.reason == "gradient-tolerance"


def test_single_iteration_budget(grid_system):
    result = run_rgd(grid_system, project(Alignment.identity(grid_system.m, grid_system.d)), RgdConfig(max_iters=1))
    assert not result.converged
    assert result.reason == "max-iterations"
    assert result.iterations == 1
    first, last = result.trace.records
    assert first.alpha is not None and first.step_norm is not None
    assert last.iter == 1 and last.alpha is None
    assert last.F == pytest.approx(result.final_F)
    assert last.grad_norm == pytest.approx(result.final_grad_norm)


def test_exhausted_backtracking_carries_trace(grid_truth):
    sys_ = scaled_system(grid_truth, factor=100.0)
    start = project(Alignment.identity(sys_.m, sys_.d))
    with pytest.raises(StepFailure) as exc:
        run_rgd(sys_, start, RgdConfig(max_backtracks=0))
    err = exc.value
    assert err.trace is not None and err.trace.records == []
    assert isinstance(err.last_iterate, QuotientAlignment)
    assert err.diagnostics["iteration"] == 0
    assert err.diagnostics["last_alpha"] == 1.0


def test_exact_recovery_from_spectral_start(grid_truth, grid_system):
    start = spectral_init(grid_system).quotient
    result = run_rgd(grid_system, start, RgdConfig(max_iters=200), reference=grid_truth.alignment)
    assert result.converged
    assert result.final_F <= 1e-14 * (1.0 + grid_system.c_norm)
    assert procrustes_distance(result.alignment.lift(), grid_truth.alignment)[0] <= 1e-8


def test_linear_rate_inside_the_certified_radius(grid_truth, small_grid, rng):
    truth = grid_truth.alignment
    report = certify_alignment(small_grid, truth, zeta=0.5, gamma=0.1)
    assert report.nondegenerate and report.delta0 is not None
    start = retract(truth, random_horizontal(truth, rng, norm=0.9 * 0.5 * report.delta0))
    result = run_rgd(small_grid, project(start), RgdConfig(gamma=0.1, max_iters=100), reference=truth)
    for record in result.trace.records:
        assert record.ratio <= report.q ** record.iter * 1.05 + 1e-10


def test_error_decreases_monotonically(grid_system):
    start = project(Alignment.identity(grid_system.m, grid_system.d))
    result = run_rgd(grid_system, start, RgdConfig(max_iters=30))
    values = result.trace.F_values() + [result.final_F]
    assert all(b <= a + 1e-12 * (1.0 + a) for a, b in zip(values, values[1:]))

    diag = descent_diagnostics(result.trace, grid_system.m, gamma=0.1)
    assert diag.kappa0 == pytest.approx(0.2 / ((math.e + 1.0) * math.sqrt(grid_system.m + 1)))
    assert diag.kappa_min is not None and diag.kappa_min > 0.0
    assert diag.mu is not None and diag.mu > 0.0


def test_runs_are_deterministic(grid_system):
    start = project(Alignment.identity(grid_system.m, grid_system.d))
    a = run_rgd(grid_system, start, RgdConfig(max_iters=10))
    b = run_rgd(grid_system, start, RgdConfig(max_iters=10))
    assert a.trace.F_values() == b.trace.F_values()
    assert np.array_equal(a.alignment.blocks, b.alignment.blocks)


def test_log_ratio_slope():
    trace = RgdTrace(records=[IterationRecord(iter=k, F=0.0, grad_norm=0.0, ratio=0.5 ** k) for k in range(6)])
    assert log_ratio_slope(trace) == pytest.approx(math.log(0.5))
    assert log_ratio_slope(RgdTrace(records=trace.records[:1])) is None


def test_trace_csv(tmp_path, grid_system):
    result = run_rgd(grid_system, project(Alignment.identity(grid_system.m, grid_system.d)), RgdConfig(max_iters=3))
    path = tmp_path / "trace.csv"
    result.trace.write_csv(str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,F,grad_norm,alpha,dist_to_ref,ratio,step_norm"
    assert len(lines) == 1 + len(result.trace.records)


def test_config_bounds():
    with pytest.raises(ValidationError):
        RgdConfig(beta=1.0)
    with pytest.raises(ValidationError):
        RgdConfig(gamma=0.0)
    with pytest.raises(ValidationError):
        RgdConfig(max_iters=0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
