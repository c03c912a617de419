import json
import sys

import numpy as np
import pytest

from errors import FrameworkError, FrameworkParseError, GenerationError
from framework import (
    NoiseSpec,
    PatchFramework,
    affine_rank,
    generate_grid_framework,
    inject_noise,
    parse_framework,
    serialize_framework,
    validate_framework,
)
from stress import alignment_error, alignment_error_oracle, build_patch_stress


def _single_view(points):
    return PatchFramework.from_views(2, len(points), [{k: p for k, p in enumerate(points)}])


# --- Validation ---

def test_single_view_is_valid():
    fw = _single_view([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)])
    report = validate_framework(fw)
    assert report.connected
    assert report.affine_nondegenerate == [True]
    assert report.passed


def test_disjoint_views_are_disconnected():
    fw = PatchFramework.from_views(
        2, 6,
        [{0: (0, 0), 1: (1, 0), 2: (0, 1)}, {3: (0, 0), 4: (1, 0), 5: (0, 1)}],
    )
    report = validate_framework(fw)
    assert not report.connected
    assert report.components == 2
    assert not report.passed


def test_two_point_view_is_affinely_degenerate():
    fw = PatchFramework.from_views(
        2, 4,
        [{0: (0, 0), 1: (1, 0), 2: (0, 1)}, {2: (0, 0), 3: (2, 1)}],
    )
    report = validate_framework(fw)
    assert report.affine_nondegenerate == [True, False]
    assert report.degenerate_views == [2]


def test_affine_rank_of_collinear_points():
    line = np.array([[t, 2 * t + 1] for t in range(5)], dtype=float)
    assert affine_rank(line) == 1
    assert affine_rank(line[:1]) == 0


def test_malformed_frameworks_list_defects():
    with pytest.raises(FrameworkError) as exc:
        PatchFramework(d=2, n=2, m=1, edges=((0, 0), (0, 0)), coords=np.zeros((2, 2)))
    assert any("duplicate" in d for d in exc.value.defects)

    with pytest.raises(FrameworkError) as exc:
        PatchFramework(d=2, n=2, m=1, edges=((5, 0),), coords=np.zeros((1, 2)))
    assert any("outside index range" in d for d in exc.value.defects)

    with pytest.raises(FrameworkError):
        PatchFramework(d=2, n=1, m=1, edges=((0, 0),), coords=np.array([[np.nan, 0.0]]))

    with pytest.raises(FrameworkError):
        PatchFramework.from_views(2, 1, [{0: (1.0, 2.0, 3.0)}])


# --- Generation ---

def test_grid_fixture_shape_and_ground_truth(grid_truth):
    fw = grid_truth.framework
    assert (fw.n, fw.m, fw.d) == (100, 9, 2)
    assert validate_framework(fw).passed
    sys_ = build_patch_stress(fw)
    assert alignment_error(sys_, grid_truth.alignment) <= 1e-10
    assert alignment_error_oracle(fw, grid_truth.alignment) <= 1e-16


def test_grid_smallest_case():
    truth = generate_grid_framework(2, 1, 1, 0.5, seed=0)
    assert (truth.framework.n, truth.framework.m) == (2, 1)
    assert abs(abs(truth.alignment.blocks[0, 0, 0]) - 1.0) < 1e-15


def test_grid_three_dimensions_passes_validation():
    truth = generate_grid_framework(4, 3, 2, 0.3, seed=1)
    assert truth.framework.m == 8
    assert validate_framework(truth.framework).passed


def test_generation_rejects_impossible_parameters():
    with pytest.raises(GenerationError):
        generate_grid_framework(4, 2, 50, 0.3)
    with pytest.raises(GenerationError):
        generate_grid_framework(1, 2, 1, 0.3)
    with pytest.raises(GenerationError):
        generate_grid_framework(10, 4, 2, 0.3)
    with pytest.raises(GenerationError):
        generate_grid_framework(10, 2, 2, 1.5)


def test_generation_is_deterministic():
    a = generate_grid_framework(6, 2, 2, 0.3, seed=11)
    b = generate_grid_framework(6, 2, 2, 0.3, seed=11)
    assert a.framework == b.framework
    assert a.alignment == b.alignment


# --- Noise ---

def test_zero_noise_is_bitwise_identity(grid_truth):
    fw = grid_truth.framework
    noisy = inject_noise(fw, NoiseSpec(epsilon=0.0, seed=4))
    assert np.array_equal(noisy.coords, fw.coords)


def test_noise_is_bounded_and_deterministic(grid_truth):
    fw = grid_truth.framework
    spec = NoiseSpec(epsilon=0.1, seed=4)
    noisy = inject_noise(fw, spec)
    assert noisy.edges == fw.edges
    assert (noisy.n, noisy.m, noisy.d) == (fw.n, fw.m, fw.d)
    assert np.max(np.linalg.norm(noisy.coords - fw.coords, axis=1)) <= 0.1 + 1e-15
    assert np.array_equal(inject_noise(fw, spec).coords, noisy.coords)
    assert not np.array_equal(inject_noise(fw, NoiseSpec(epsilon=0.1, seed=5)).coords, noisy.coords)


def test_noise_spec_rejects_negative_epsilon():
    with pytest.raises(ValueError):
        NoiseSpec(epsilon=-0.1)


# --- Serialization ---

def test_framework_round_trip(grid_truth):
    small = generate_grid_framework(2, 1, 1, 0.5, seed=0).framework
    assert parse_framework(serialize_framework(small)) == small
    assert parse_framework(serialize_framework(grid_truth.framework)) == grid_truth.framework


def test_unknown_fields_are_ignored():
    doc = {
        "d": 2, "n": 3, "m": 1, "generator": "hand-made",
        "views": [{"index": 1, "label": "a", "points": [
            {"id": 1, "coords": [0, 0], "weight": 1},
            {"id": 2, "coords": [1, 0]},
            {"id": 3, "coords": [0, 1]},
        ]}],
    }
    fw = parse_framework(json.dumps(doc))
    assert fw.num_edges == 3


def test_missing_coords_names_the_edge():
    doc = {"d": 2, "n": 2, "m": 1, "views": [{"index": 1, "points": [
        {"id": 1, "coords": [0, 0]},
        {"id": 2},
    ]}]}
    with pytest.raises(FrameworkParseError) as exc:
        parse_framework(json.dumps(doc))
    assert exc.value.path == "views[0].points[1].coords"
    assert exc.value.edge == (2, 1)


def test_wrong_coordinate_length_and_duplicates():
    bad_length = {"d": 2, "n": 1, "m": 1, "views": [{"index": 1, "points": [{"id": 1, "coords": [0, 0, 0]}]}]}
    with pytest.raises(FrameworkParseError) as exc:
        parse_framework(json.dumps(bad_length))
    assert exc.value.edge == (1, 1)
    assert exc.value.path.endswith(".coords")

    duplicate = {"d": 1, "n": 1, "m": 1, "views": [{"index": 1, "points": [
        {"id": 1, "coords": [0]}, {"id": 1, "coords": [1]},
    ]}]}
    with pytest.raises(FrameworkParseError):
        parse_framework(json.dumps(duplicate))

    out_of_range = {"d": 1, "n": 1, "m": 1, "views": [{"index": 1, "points": [{"id": 3, "coords": [0]}]}]}
    with pytest.raises(FrameworkParseError) as exc:
        parse_framework(json.dumps(out_of_range))
    assert exc.value.path == "views[0].points[0].id"


def test_repeated_view_index_is_rejected():
    doc = {"d": 1, "n": 2, "m": 2, "views": [
        {"index": 1, "points": [{"id": 1, "coords": [0]}]},
        {"index": 1, "points": [{"id": 2, "coords": [1]}]},
    ]}
    with pytest.raises(FrameworkParseError) as exc:
        parse_framework(json.dumps(doc))
    assert exc.value.path == "views[1].index"
    assert "duplicate view index 1" in str(exc.value)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
