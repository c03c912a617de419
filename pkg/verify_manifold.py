import sys

import numpy as np
import pytest

from errors import ContractError
from framework import random_orthogonal
from manifold import (
    Alignment,
    HorizontalTangent,
    QuotientAlignment,
    TangentVector,
    horizontal_lift,
    horizontal_project,
    metric,
    parse_alignment,
    procrustes_distance,
    project,
    project_tangent,
    pushforward,
    quotient_distance,
    quotient_metric,
    quotient_metric_closed_form,
    quotient_retract,
    random_horizontal,
    retract,
    serialize_alignment,
    skew,
    skew_pairs,
    vertical_project,
)
from spectral import random_alignment


def random_skews(rng, count, d):
    return skew(rng.standard_normal((count, d, d)))


def test_skew_pair_order():
    assert skew_pairs(1) == []
    assert skew_pairs(2) == [(0, 1)]
    assert skew_pairs(4) == [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)]


def test_alignment_rejects_non_orthogonal_blocks():
    with pytest.raises(ContractError):
        Alignment(np.array([[[1.0, 0.1], [0.0, 1.0]]]))
    with pytest.raises(ContractError):
        Alignment(np.zeros((2, 2, 3)))


def test_drifted_blocks_are_repaired(rng):
    q = random_orthogonal(3, rng)
    s = Alignment.from_drifted(np.array([q + 1e-6 * rng.standard_normal((3, 3))]))
    assert np.allclose(s.blocks[0].T @ s.blocks[0], np.eye(3), atol=1e-12)
    assert np.linalg.norm(s.blocks[0] - q) < 1e-5


def test_projection_forgets_global_transform(rng):
    s = random_alignment(5, 3, rng)
    q = random_orthogonal(3, rng)
    assert quotient_distance(project(s), project(s.times(q))) <= 1e-12
    lifted = project(s).lift()
    assert np.allclose(lifted.blocks[0], np.eye(3))
    assert np.allclose(lifted.stacked, s.times(s.blocks[0].T).stacked, atol=1e-12)


def test_tangent_projection_splits_orthogonally(rng):
    s = random_alignment(4, 3, rng)
    z = project_tangent(s, rng.standard_normal((4, 3, 3)))
    assert np.allclose(z.skews, -np.swapaxes(z.skews, 1, 2))
    h, v = horizontal_project(z), vertical_project(z)
    assert np.allclose(h.skews + v.skews, z.skews)
    assert np.allclose(h.skews.sum(axis=0), 0.0, atol=1e-12)
    assert abs(metric(h, v)) <= 1e-12


def test_tangent_shape_is_checked(rng):
    s = random_alignment(3, 2, rng)
    with pytest.raises(ContractError):
        TangentVector(s, np.zeros((2, 2, 2)))


def test_horizontal_lift_inverts_pushforward(rng):
    s_tilde = project(random_alignment(4, 3, rng))
    omega_tilde = random_skews(rng, 3, 3)
    for base in (None, s_tilde.lift().times(random_orthogonal(3, rng))):
        lifted = horizontal_lift(s_tilde, omega_tilde, base)
        assert np.allclose(lifted.skews.sum(axis=0), 0.0, atol=1e-12)
        assert np.allclose(pushforward(lifted), omega_tilde, atol=1e-12)


def test_lift_needs_a_representative(rng):
    s_tilde = project(random_alignment(3, 2, rng))
    other = random_alignment(3, 2, rng)
    with pytest.raises(ContractError):
        horizontal_lift(s_tilde, random_skews(rng, 2, 2), other)


def test_quotient_metric_matches_closed_form(rng):
    for m, d in ((2, 2), (4, 3), (6, 2)):
        s_tilde = project(random_alignment(m, d, rng))
        u, v = random_skews(rng, m - 1, d), random_skews(rng, m - 1, d)
        base = s_tilde.lift().times(random_orthogonal(d, rng))
        expected = quotient_metric_closed_form(u, v)
        assert quotient_metric(s_tilde, u, v) == pytest.approx(expected, rel=1e-10, abs=1e-12)
        assert quotient_metric(s_tilde, u, v, base) == pytest.approx(expected, rel=1e-10, abs=1e-12)


def test_quotient_metric_two_views_in_the_plane():
    j = np.array([[0.0, -1.0], [1.0, 0.0]])
    s_tilde = QuotientAlignment(np.array([np.eye(2)]))
    assert quotient_metric(s_tilde, 3.0 * j[None], -0.5 * j[None]) == pytest.approx(-1.5)


def test_lifted_norm_sandwich(rng):
    m, d = 5, 3
    s_tilde = project(random_alignment(m, d, rng))
    for _ in range(10):
        omega_tilde = random_skews(rng, m - 1, d)
        full = float(np.sum(omega_tilde ** 2))
        lifted = horizontal_lift(s_tilde, omega_tilde).norm() ** 2
        assert full / m - 1e-12 <= lifted <= full + 1e-12


def test_retraction(rng):
    s = random_alignment(4, 3, rng)
    z = random_horizontal(s, rng, norm=0.7)
    assert z.norm() == pytest.approx(0.7)
    assert retract(s, z, 0.0) == Alignment(s.blocks)
    moved = retract(s, z)
    assert np.allclose(np.swapaxes(moved.blocks, 1, 2) @ moved.blocks, np.eye(3), atol=1e-12)
    assert procrustes_distance(moved, s)[0] <= z.norm() + 1e-12


def test_retraction_second_order_bound(rng):
    for _ in range(100):
        s = random_alignment(3, 3, rng)
        z = TangentVector(s, random_skews(rng, 3, 3))
        z = z.scaled(rng.uniform(0.05, 1.0) / np.max(np.linalg.norm(z.skews, axis=(1, 2))))
        moved = retract(s, z)
        gap = np.linalg.norm(moved.blocks - (s.blocks + z.ambient), axis=(1, 2))
        assert np.all(gap <= (np.e - 1.0) * np.linalg.norm(z.skews, axis=(1, 2)) ** 2 + 1e-12)


def test_quotient_retraction_ignores_representative(rng):
    s_tilde = project(random_alignment(4, 2, rng))
    omega_tilde = random_skews(rng, 3, 2)
    base = s_tilde.lift().times(random_orthogonal(2, rng))
    a = quotient_retract(s_tilde, omega_tilde, 0.3)
    b = quotient_retract(s_tilde, omega_tilde, 0.3, base)
    assert quotient_distance(a, b) <= 1e-12


def test_omega_vector_layout(rng):
    s = random_alignment(3, 3, rng)
    h = random_horizontal(s, rng)
    omega = h.omega()
    assert omega.shape == (9,)
    assert np.allclose(omega[3:6], h.skews[:, 0, 2])
    assert np.allclose(HorizontalTangent.from_omega(s, omega).skews, h.skews)


def test_procrustes_recovers_global_transform(rng):
    t = random_alignment(6, 3, rng)
    q0 = random_orthogonal(3, rng)
    dist, q = procrustes_distance(t.times(q0), t)
    assert dist <= 1e-12
    assert np.allclose(t.times(q0).stacked, t.stacked @ q, atol=1e-12)


def test_procrustes_against_brute_force(rng):
    s, t = random_alignment(4, 2, rng), random_alignment(4, 2, rng)
    dist, q = procrustes_distance(s, t)
    assert np.allclose(q.T @ q, np.eye(2))
    best = np.inf
    for deg in range(360):
        a = np.deg2rad(deg)
        rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        for cand in (rot, rot @ np.diag([1.0, -1.0])):
            best = min(best, float(np.linalg.norm(s.stacked - t.stacked @ cand)))
    assert dist <= best + 1e-12
    assert best <= dist + 0.03


def test_alignment_file_round_trip(rng):
    s = random_alignment(3, 2, rng)
    assert np.allclose(parse_alignment(serialize_alignment(s)).blocks, s.blocks)
    with pytest.raises(ContractError):
        parse_alignment('{"d": 2, "m": 1, "blocks": [[1, 0, 0]]}')


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
