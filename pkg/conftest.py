import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from fixtures import named_fixture
from stress import build_patch_stress


@pytest.fixture(scope="session")
def grid_truth():
    return named_fixture("grid", seed=0)


@pytest.fixture(scope="session")
def grid_system(grid_truth):
    return build_patch_stress(grid_truth.framework)


@pytest.fixture(scope="session")
def fixture_systems():
    """Every named d=2 fixture with its stress system, keyed by name."""
    out = {}
    for name in ("two_view_one_point", "two_view_two_points", "two_view_three_points",
                 "cycle_collinear_overlaps", "four_bar_linkage", "pinned_triangle"):
        truth = named_fixture(name, seed=3)
        out[name] = (truth, build_patch_stress(truth.framework))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
