import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from scipy.stats import ortho_group

from config import AFFINE_RTOL
from errors import FrameworkError, FrameworkParseError, GenerationError
from manifold import Alignment

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PatchFramework:
    """Bipartite point/view graph plus the local coordinate x_{k,i} of every incidence.

    Indices are 0-based in memory; edges are kept sorted by (view, point) and
    ``coords[e]`` belongs to ``edges[e] = (k, i)``.
    """

    d: int
    n: int
    m: int
    edges: Tuple[Tuple[int, int], ...]
    coords: np.ndarray
    _by_view: Dict[int, np.ndarray] = field(init=False, repr=False)
    _index: Dict[Tuple[int, int], int] = field(init=False, repr=False)

    def __post_init__(self):
        defects = []
        if self.d < 1:
            defects.append(f"d must be >= 1, got {self.d}")
        if self.n < 0 or self.m < 0:
            defects.append(f"n and m must be non-negative, got n={self.n}, m={self.m}")
        coords = np.array(self.coords, dtype=float)
        if coords.size == 0:
            coords = np.zeros((0, max(self.d, 0)))
        if coords.shape != (len(self.edges), self.d):
            defects.append(f"coords must have shape ({len(self.edges)}, {self.d}), got {coords.shape}")
        seen = set()
        for k, i in self.edges:
            if not (0 <= k < self.n) or not (0 <= i < self.m):
                defects.append(f"edge (k={k + 1}, i={i + 1}) outside index range n={self.n}, m={self.m}")
            if (k, i) in seen:
                defects.append(f"duplicate edge (k={k + 1}, i={i + 1})")
            seen.add((k, i))
        if coords.size and not np.all(np.isfinite(coords)):
            bad = [self.edges[e] for e in np.where(~np.all(np.isfinite(coords), axis=1))[0]]
            defects.extend(f"non-finite coordinate at (k={k + 1}, i={i + 1})" for k, i in bad)
        if defects:
            raise FrameworkError("malformed patch framework", defects)

        order = sorted(range(len(self.edges)), key=lambda e: (self.edges[e][1], self.edges[e][0]))
        edges = tuple((int(self.edges[e][0]), int(self.edges[e][1])) for e in order)
        coords = coords[order] if order else coords
        coords.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "coords", coords)

        by_view: Dict[int, List[int]] = {i: [] for i in range(self.m)}
        for e, (_, i) in enumerate(edges):
            by_view[i].append(e)
        object.__setattr__(self, "_by_view", {i: np.array(v, dtype=int) for i, v in by_view.items()})
        object.__setattr__(self, "_index", {edge: e for e, edge in enumerate(edges)})

    @classmethod
    def from_views(cls, d: int, n: int, views: Sequence[Mapping[int, Sequence[float]]]) -> "PatchFramework":
        """Build from one ``{point_index: local_coords}`` mapping per view (0-based)."""
        edges, coords = [], []
        for i, members in enumerate(views):
            for k, x in members.items():
                x = np.asarray(x, dtype=float).ravel()
                if x.shape != (d,):
                    raise FrameworkError("malformed patch framework", [f"coords of (k={k + 1}, i={i + 1}) have length {x.size}, expected {d}"])
                edges.append((int(k), i))
                coords.append(x)
        return cls(d=d, n=n, m=len(views), edges=tuple(edges), coords=np.array(coords).reshape(len(edges), d))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PatchFramework):
            return NotImplemented
        return (
            (self.d, self.n, self.m, self.edges) == (other.d, other.n, other.m, other.edges)
            and np.array_equal(self.coords, other.coords)
        )

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def view_edges(self, i: int) -> np.ndarray:
        return self._by_view[i]

    def view_points(self, i: int) -> List[int]:
        return [self.edges[e][0] for e in self._by_view[i]]

    def view_coords(self, i: int) -> np.ndarray:
        """Local coordinates of view i, one row per point (ascending point index)."""
        return self.coords[self._by_view[i]]

    def coord(self, k: int, i: int) -> np.ndarray:
        return self.coords[self._index[(k, i)]]

    def has_edge(self, k: int, i: int) -> bool:
        return (k, i) in self._index

    def shared_points(self, i: int, j: int) -> List[int]:
        return sorted(set(self.view_points(i)) & set(self.view_points(j)))

    def with_coords(self, coords: np.ndarray) -> "PatchFramework":
        return PatchFramework(d=self.d, n=self.n, m=self.m, edges=self.edges, coords=coords)


class NoiseSpec(BaseModel):
    epsilon: float = Field(ge=0.0, description="Bound on the 2-norm of every coordinate perturbation.")
    seed: int = Field(default=0, description="Seed of the perturbation generator.")


class ValidationReport(BaseModel):
    connected: bool = Field(description="Whether the point/view bipartite graph is connected.")
    components: int = Field(description="Number of connected components of the bipartite graph.")
    view_sizes: List[int] = Field(description="Number of points n_i in each view, view 1 first.")
    affine_nondegenerate: List[bool] = Field(description="Per view: centered coordinates have rank d.")
    degenerate_views: List[int] = Field(description="1-based indices of affinely degenerate views.")
    isolated_points: List[int] = Field(default_factory=list, description="1-based points in no view.")
    empty_views: List[int] = Field(default_factory=list, description="1-based views with no point.")
    passed: bool


def gamma_graph(fw: PatchFramework) -> nx.Graph:
    """Bipartite graph with point nodes 0..n-1 and view nodes n..n+m-1."""
    graph = nx.Graph()
    graph.add_nodes_from(range(fw.n + fw.m))
    graph.add_edges_from((k, fw.n + i) for k, i in fw.edges)
    return graph


def affine_rank(points: np.ndarray) -> int:
    """Rank of the centered coordinate matrix with a cut relative to its largest singular value."""
    if points.shape[0] < 2:
        return 0
    centered = points - points.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > AFFINE_RTOL * sv[0]))


def validate_framework(fw: PatchFramework) -> ValidationReport:
    graph = gamma_graph(fw)
    covered = {k for k, _ in fw.edges}
    isolated = [k + 1 for k in range(fw.n) if k not in covered]
    sizes = [len(fw.view_edges(i)) for i in range(fw.m)]
    empty = [i + 1 for i, size in enumerate(sizes) if size == 0]
    nondeg = [affine_rank(fw.view_coords(i)) == fw.d for i in range(fw.m)]
    components = nx.number_connected_components(graph) if graph.number_of_nodes() else 0
    connected = components == 1
    degenerate = [i + 1 for i, ok in enumerate(nondeg) if not ok]
    report = ValidationReport(
        connected=connected,
        components=components,
        view_sizes=sizes,
        affine_nondegenerate=nondeg,
        degenerate_views=degenerate,
        isolated_points=isolated,
        empty_views=empty,
        passed=connected and not degenerate and not isolated and not empty,
    )
    if not report.passed:
        logger.info("framework validation failed: components=%d degenerate=%s", components, degenerate)
    return report


# --- Synthetic generation ---

@dataclass(frozen=True)
class GroundTruth:
    framework: PatchFramework
    alignment: Alignment
    points: np.ndarray


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar sample from O(d); reflections occur with probability 1/2."""
    if d == 1:
        return np.array([[rng.choice([-1.0, 1.0])]])
    return ortho_group.rvs(dim=d, random_state=rng)


def embed_views(points: np.ndarray, membership: Sequence[Sequence[int]], rng: np.random.Generator) -> GroundTruth:
    """Give each view its own rigid frame: x_{k,i} = R_i x_k + u_i, so S_i = R_i aligns it."""
    n, d = points.shape
    views, blocks = [], []
    for members in membership:
        rotation = random_orthogonal(d, rng)
        shift = rng.standard_normal(d)
        views.append({int(k): rotation @ points[k] + shift for k in sorted(members)})
        blocks.append(rotation)
    fw = PatchFramework.from_views(d, n, views)
    return GroundTruth(framework=fw, alignment=Alignment(np.array(blocks)), points=points.copy())


def _tile_intervals(resolution: int, tiles: int, overlap_fraction: float) -> List[Tuple[int, int]]:
    step = resolution / tiles
    if step < 2:
        raise GenerationError(
            f"{tiles} tiles per dimension leave fewer than 2 grid points per tile at resolution {resolution}"
        )
    ext = max(2, math.ceil(overlap_fraction * step)) if tiles > 1 else 0
    intervals = []
    for j in range(tiles):
        start = int(round(j * step))
        end = min(resolution - 1, int(round((j + 1) * step)) - 1 + ext)
        intervals.append((start, end))
    return intervals


def generate_grid_framework(
    resolution: int,
    d: int,
    patch_rows: int,
    overlap_fraction: float,
    seed: int = 0,
) -> GroundTruth:
    """Unit-cube grid cut into ``patch_rows**d`` overlapping axis-aligned tiles.

    Adjacent tiles share at least two grid lines, so they share at least d+1
    affinely independent points.
    """
    if resolution < 2:
        raise GenerationError(f"resolution must be >= 2, got {resolution}")
    if d not in (1, 2, 3):
        raise GenerationError(f"d must be 1, 2 or 3, got {d}")
    if patch_rows < 1:
        raise GenerationError(f"need at least one tile per dimension, got {patch_rows}")
    if not 0.0 < overlap_fraction < 1.0:
        raise GenerationError(f"overlap fraction must lie in (0, 1), got {overlap_fraction}")

    intervals = _tile_intervals(resolution, patch_rows, overlap_fraction)
    shape = (resolution,) * d
    axes = np.indices(shape).reshape(d, -1).T
    points = axes / (resolution - 1)

    membership = []
    for tile in np.ndindex(*((patch_rows,) * d)):
        ranges = [np.arange(intervals[j][0], intervals[j][1] + 1) for j in tile]
        mesh = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=0).reshape(d, -1)
        flat = np.ravel_multi_index(tuple(mesh), shape)
        if flat.size < d + 1:
            raise GenerationError(f"tile {tile} has {flat.size} points, needs at least {d + 1}")
        membership.append(sorted(flat.tolist()))

    truth = embed_views(points, membership, np.random.default_rng(seed))
    logger.info("generated grid framework: n=%d m=%d d=%d", truth.framework.n, truth.framework.m, d)
    return truth


def inject_noise(fw: PatchFramework, spec: NoiseSpec) -> PatchFramework:
    """Perturb every local coordinate by a vector drawn uniformly from the epsilon-ball."""
    if spec.epsilon == 0.0:
        return fw.with_coords(fw.coords.copy())
    rng = np.random.default_rng(spec.seed)
    directions = rng.standard_normal((fw.num_edges, fw.d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = spec.epsilon * rng.uniform(size=(fw.num_edges, 1)) ** (1.0 / fw.d)
    return fw.with_coords(fw.coords + radii * directions)


# --- Serialization ---

class PointRecord(BaseModel):
    model_config = ConfigDict(extra="ignore")
    id: int = Field(ge=1)
    coords: List[float]


class ViewRecord(BaseModel):
    model_config = ConfigDict(extra="ignore")
    index: int = Field(ge=1)
    points: List[PointRecord]


class FrameworkDocument(BaseModel):
    """On-disk framework; indices are 1-based and edges are implied by view membership."""

    model_config = ConfigDict(extra="ignore")
    d: int = Field(ge=1)
    n: int = Field(ge=0)
    m: int = Field(ge=0)
    views: List[ViewRecord]


def _error_path(loc) -> str:
    path = ""
    for part in loc:
        path += f"[{part}]" if isinstance(part, int) else (f".{part}" if path else str(part))
    return path


def _edge_from_loc(raw, loc) -> Optional[Tuple[int, int]]:
    """Recover the 1-based (k, i) named by a views[v].points[p] error location, if any."""
    try:
        if loc[0] == "views" and loc[2] == "points":
            view = raw["views"][loc[1]]
            return int(view["points"][loc[3]]["id"]), int(view["index"])
    except (IndexError, KeyError, TypeError, ValueError):
        pass
    return None


def serialize_framework(fw: PatchFramework) -> str:
    views = []
    for i in range(fw.m):
        points = [
            PointRecord(id=k + 1, coords=[float(v) for v in x])
            for k, x in zip(fw.view_points(i), fw.view_coords(i))
        ]
        views.append(ViewRecord(index=i + 1, points=points))
    return FrameworkDocument(d=fw.d, n=fw.n, m=fw.m, views=views).model_dump_json(indent=2)


def parse_framework(text: str) -> PatchFramework:
    try:
        doc = FrameworkDocument.model_validate_json(text)
    except ValidationError as e:
        err = e.errors()[0]
        loc = tuple(err["loc"])
        try:
            raw = json.loads(text)
        except json.JSONDecodeError:
            raw = None
        edge = _edge_from_loc(raw, loc) if raw is not None else None
        what = f"{err['msg']}"
        if edge is not None:
            what = f"{what} for point k={edge[0]} in view i={edge[1]}"
        raise FrameworkParseError(f"invalid framework document: {what}", path=_error_path(loc), edge=edge) from e

    views: List[Dict[int, List[float]]] = [dict() for _ in range(doc.m)]
    seen = set()
    for v, view in enumerate(doc.views):
        if view.index > doc.m:
            raise FrameworkParseError(f"view index {view.index} exceeds m={doc.m}", path=f"views[{v}].index")
        if view.index in seen:
            raise FrameworkParseError(f"duplicate view index {view.index}", path=f"views[{v}].index")
        seen.add(view.index)
        members = views[view.index - 1]
        for p, point in enumerate(view.points):
            where = f"views[{v}].points[{p}]"
            edge = (point.id, view.index)
            if point.id > doc.n:
                raise FrameworkParseError(f"point id {point.id} exceeds n={doc.n}", path=f"{where}.id", edge=edge)
            if point.id - 1 in members:
                raise FrameworkParseError(f"duplicate point k={point.id} in view i={view.index}", path=where, edge=edge)
            if len(point.coords) != doc.d:
                raise FrameworkParseError(
                    f"coords of point k={point.id} in view i={view.index} have length {len(point.coords)}, expected {doc.d}",
                    path=f"{where}.coords",
                    edge=edge,
                )
            members[point.id - 1] = point.coords
    return PatchFramework.from_views(doc.d, doc.n, views)
