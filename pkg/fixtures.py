import logging
import os
from typing import List, Sequence, Tuple

import numpy as np

from config import DEFAULT_SEED, OUTPUT_DIR
from framework import GroundTruth, embed_views, generate_grid_framework, serialize_framework
from manifold import serialize_alignment

logger = logging.getLogger(__name__)

# Geometry shared by the two-view fixtures; only the overlap changes.
TWO_VIEW_SHARED = [(0.0, 0.0), (1.0, 0.2), (0.3, 1.1)]
TWO_VIEW_LEFT = [(-1.0, 0.5), (-0.6, -0.9), (-1.2, -0.2)]
TWO_VIEW_RIGHT = [(1.5, 1.3), (2.1, -0.4), (1.8, 0.7)]


def _two_view(shared: int) -> Tuple[List[Tuple[float, float]], List[List[int]]]:
    points = TWO_VIEW_SHARED[:shared] + TWO_VIEW_LEFT + TWO_VIEW_RIGHT
    common = list(range(shared))
    left = common + [shared + j for j in range(len(TWO_VIEW_LEFT))]
    right = common + [shared + len(TWO_VIEW_LEFT) + j for j in range(len(TWO_VIEW_RIGHT))]
    return points, [left, right]


def _cycle_collinear() -> Tuple[List[Tuple[float, float]], List[List[int]]]:
    axis = [(float(x), 0.0) for x in range(8)]
    extra = [(3.5, 1.5), (1.5, -1.0), (3.5, -1.2), (5.5, 1.0)]
    views = [[0, 1, 6, 7, 8], [0, 1, 2, 3, 9], [2, 3, 4, 5, 10], [4, 5, 6, 7, 11]]
    return axis + extra, views


def _four_bar() -> Tuple[List[Tuple[float, float]], List[List[int]]]:
    pins = [(0.0, 0.0), (2.0, 0.3), (2.4, 1.9), (-0.2, 1.6)]  # P12, P23, P34, P41
    extra = [(-1.0, 0.7), (1.1, -1.0), (3.3, 1.0), (1.0, 2.8)]
    views = [[3, 0, 4], [0, 1, 5], [1, 2, 6], [2, 3, 7]]
    return pins + extra, views


def _pinned_triangle() -> Tuple[List[Tuple[float, float]], List[List[int]]]:
    pins = [(0.0, 0.0), (2.0, 0.2), (0.9, 1.7)]  # P12, P23, P13
    extra = [(-0.5, 1.0), (1.2, -1.1), (2.2, 1.5)]
    views = [[0, 2, 3], [0, 1, 4], [1, 2, 5]]
    return pins + extra, views


_LAYOUTS = {
    "two_view_one_point": lambda: _two_view(1),
    "two_view_two_points": lambda: _two_view(2),
    "two_view_three_points": lambda: _two_view(3),
    "cycle_collinear_overlaps": _cycle_collinear,
    "four_bar_linkage": _four_bar,
    "pinned_triangle": _pinned_triangle,
}

FIXTURE_NAMES = list(_LAYOUTS) + ["grid"]


def named_fixture(name: str, seed: int = DEFAULT_SEED) -> GroundTruth:
    """A named d=2 framework with a known verdict; every view gets its own random rigid frame."""
    if name == "grid":
        return generate_grid_framework(10, 2, 3, 0.3, seed=seed)
    if name not in _LAYOUTS:
        raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURE_NAMES)}")
    points, views = _LAYOUTS[name]()
    return embed_views(np.array(points), views, np.random.default_rng(seed))


def materialize_fixtures(out_dir: str, seed: int = DEFAULT_SEED, names: Sequence[str] = FIXTURE_NAMES) -> List[str]:
    """Write <name>.json (framework) and <name>_truth.json (ground-truth alignment) for each fixture."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name in names:
        truth = named_fixture(name, seed)
        fw_path = os.path.join(out_dir, f"{name}.json")
        truth_path = os.path.join(out_dir, f"{name}_truth.json")
        with open(fw_path, "w") as f:
            f.write(serialize_framework(truth.framework))
        with open(truth_path, "w") as f:
            f.write(serialize_alignment(truth.alignment))
        written.extend([fw_path, truth_path])
        logger.info("wrote fixture %s (n=%d, m=%d)", name, truth.framework.n, truth.framework.m)
    return written


def main():
    out_dir = os.path.join(OUTPUT_DIR, "fixtures")
    paths = materialize_fixtures(out_dir)
    print(f"Wrote {len(paths) // 2} fixtures to {out_dir}")


if __name__ == "__main__":
    main()
