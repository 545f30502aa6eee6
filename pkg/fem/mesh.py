"""
mesh.py - 2D triangular meshes with tagged regions, boundary curves and traces.

A Mesh stores its entities as arrays:
- nodes (n, 2) coordinates in meters, node ids are the row indices
- triangles (m, 3) node ids with one region tag each
- boundary edges (k, 2) node ids with one curve tag each

Meshes are immutable after construction. Mesh.build() puts every triangle
into counter-clockwise order and remembers how many it had to flip.
"""

#####################################
# Import Modules
#####################################

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from fem.errors import MeshError
from utils.utils_logger import logger

#####################################
# Default Configurations
#####################################

# Geometric coincidence tolerance in meters
GEOM_TOL = 1e-12

SIDE_EXTERNAL_1 = "external-1"
SIDE_EXTERNAL_2 = "external-2"
SIDE_VIRTUAL = "virtual-interface"

#####################################
# Domain Types
#####################################


class Node(NamedTuple):
    id: int
    x: float
    y: float


class Triangle(NamedTuple):
    nodes: tuple[int, int, int]
    region_tag: int


class BoundaryEdge(NamedTuple):
    nodes: tuple[int, int]
    curve_tag: int


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class TraceMesh:
    """Ordered node chain along a curve, parametrized by arc length s."""

    node_ids: np.ndarray
    s: np.ndarray
    points: np.ndarray
    side: str = SIDE_EXTERNAL_1
    curve_tag: int = -1

    def __post_init__(self) -> None:
        object.__setattr__(self, "node_ids", _frozen(self.node_ids, np.int64))
        object.__setattr__(self, "s", _frozen(self.s, np.float64))
        object.__setattr__(self, "points", _frozen(self.points, np.float64).reshape(-1, 2))
        if self.s.ndim != 1 or self.s.size < 2:
            raise MeshError("a trace needs at least two nodes")
        if self.node_ids.shape != self.s.shape or self.points.shape[0] != self.s.size:
            raise MeshError("trace arrays disagree in length")
        if np.any(np.diff(self.s) <= 0.0):
            raise MeshError("trace arc length must be strictly increasing")

    @property
    def n_nodes(self) -> int:
        return int(self.s.size)

    @property
    def length(self) -> float:
        return float(self.s[-1] - self.s[0])

    @property
    def segment_lengths(self) -> np.ndarray:
        return np.diff(self.s)

    def reversed(self) -> "TraceMesh":
        """Same chain traversed the other way, s re-measured from the new start."""
        s = self.s[-1] - self.s[::-1]
        return TraceMesh(self.node_ids[::-1], s, self.points[::-1], self.side, self.curve_tag)

    def point_at(self, s_query: np.ndarray | float) -> np.ndarray:
        """Physical points at arc-length positions (polyline interpolation)."""
        sq = np.atleast_1d(np.asarray(s_query, dtype=float))
        return np.column_stack(
            [np.interp(sq, self.s, self.points[:, 0]), np.interp(sq, self.s, self.points[:, 1])]
        )

    def value_at(self, nodal: np.ndarray, s_query: np.ndarray | float) -> np.ndarray:
        """P1 interpolation of nodal trace values."""
        return np.interp(np.atleast_1d(np.asarray(s_query, dtype=float)), self.s, nodal)


@dataclass(frozen=True)
class CollapsedInterface:
    """An insulation layer replaced by a thin shell between two traces.

    normal points from side 1 to side 2; end_curves name the curves that
    closed the layer at s = 0 and s = L of side 1's parametrization.
    """

    name: str
    side1_curve: str
    side2_curve: str
    thickness: float
    normal: tuple[float, float] = (1.0, 0.0)
    end_curves: tuple[str | None, str | None] = (None, None)

    def __post_init__(self) -> None:
        if not self.thickness > 0.0:
            raise MeshError(f"interface '{self.name}' needs a positive thickness")
        n = np.asarray(self.normal, dtype=float)
        norm = float(np.hypot(*n))
        if norm == 0.0:
            raise MeshError(f"interface '{self.name}' has a zero normal")
        object.__setattr__(self, "normal", (float(n[0] / norm), float(n[1] / norm)))


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray
    triangles: np.ndarray
    triangle_tags: np.ndarray
    edges: np.ndarray
    edge_tags: np.ndarray
    regions: dict[str, int]
    curves: dict[str, int]
    interfaces: dict[str, CollapsedInterface] = field(default_factory=dict)
    reoriented: int = 0

    @classmethod
    def build(
        cls,
        nodes: np.ndarray,
        triangles: np.ndarray,
        triangle_tags: np.ndarray,
        edges: np.ndarray | None = None,
        edge_tags: np.ndarray | None = None,
        regions: dict[str, int] | None = None,
        curves: dict[str, int] | None = None,
        interfaces: dict[str, CollapsedInterface] | None = None,
    ) -> "Mesh":
        """Create a mesh, flipping clockwise triangles into canonical orientation."""
        nodes = np.asarray(nodes, dtype=float).reshape(-1, 2)
        tri = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        reoriented = 0
        if tri.size and tri.min() >= 0 and tri.max() < len(nodes):
            area = signed_areas(nodes, tri)
            flip = area < 0.0
            reoriented = int(flip.sum())
            if reoriented:
                tri[flip] = tri[flip][:, [0, 2, 1]]
                logger.warning(f"Reoriented {reoriented} clockwise triangle(s).")
        edges_arr = np.zeros((0, 2), dtype=np.int64) if edges is None else edges
        etags = np.zeros(0, dtype=np.int64) if edge_tags is None else edge_tags
        return cls(
            nodes=_frozen(nodes, np.float64),
            triangles=_frozen(tri, np.int64),
            triangle_tags=_frozen(triangle_tags, np.int64),
            edges=_frozen(np.asarray(edges_arr).reshape(-1, 2), np.int64),
            edge_tags=_frozen(etags, np.int64),
            regions=dict(regions or {}),
            curves=dict(curves or {}),
            interfaces=dict(interfaces or {}),
            reoriented=reoriented,
        )

    @property
    def n_nodes(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def n_triangles(self) -> int:
        return int(self.triangles.shape[0])

    @property
    def tags(self) -> dict[str, int]:
        """Every declared name with its integer tag (regions and curves)."""
        return {**self.regions, **self.curves}

    def iter_nodes(self) -> Iterator[Node]:
        for i, (x, y) in enumerate(self.nodes):
            yield Node(i, float(x), float(y))

    def iter_triangles(self) -> Iterator[Triangle]:
        for tri, tag in zip(self.triangles, self.triangle_tags):
            yield Triangle(tuple(int(n) for n in tri), int(tag))

    def iter_boundary_edges(self) -> Iterator[BoundaryEdge]:
        for edge, tag in zip(self.edges, self.edge_tags):
            yield BoundaryEdge((int(edge[0]), int(edge[1])), int(tag))

    def region_tag(self, name: str) -> int:
        try:
            return self.regions[name]
        except KeyError:
            raise MeshError(f"unknown region '{name}'") from None

    def curve_tag(self, name: str) -> int:
        try:
            return self.curves[name]
        except KeyError:
            raise MeshError(f"unknown curve '{name}'") from None

    def region_nodes(self, tag: int) -> np.ndarray:
        return np.unique(self.triangles[self.triangle_tags == tag])

    def curve_edges(self, tag: int) -> np.ndarray:
        return self.edges[self.edge_tags == tag]

    def curve_nodes(self, tag: int) -> np.ndarray:
        return np.unique(self.curve_edges(tag))

    @cached_property
    def areas(self) -> np.ndarray:
        return signed_areas(self.nodes, self.triangles)

    def region_name(self, tag: int) -> str:
        for name, value in self.regions.items():
            if value == tag:
                return name
        return f"tag_{tag}"


#####################################
# Helper Functions
#####################################


def signed_areas(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = nodes[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def triangle_edge_counts(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unique undirected triangle edges (sorted pairs) and how many triangles use each."""
    all_edges = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]
    )
    all_edges.sort(axis=1)
    unique, counts = np.unique(all_edges, axis=0, return_counts=True)
    return unique, counts


#####################################
# Validation
#####################################


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    reoriented: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)


def validate(mesh: Mesh) -> ValidationReport:
    """List every violation of the mesh invariants. An empty report means valid."""
    report = ValidationReport(reoriented=mesh.reoriented)
    if mesh.reoriented:
        report.notes.append(f"reoriented {mesh.reoriented} triangle(s) to counter-clockwise order")

    nodes, tri = mesh.nodes, mesh.triangles
    if not np.all(np.isfinite(nodes)):
        report.violations.append("non-finite node coordinates")

    if tri.size and (tri.min() < 0 or tri.max() >= mesh.n_nodes):
        report.violations.append("triangle references a missing node")
        return report
    if mesh.edges.size and (mesh.edges.min() < 0 or mesh.edges.max() >= mesh.n_nodes):
        report.violations.append("boundary edge references a missing node")
        return report

    repeated = (tri[:, 0] == tri[:, 1]) | (tri[:, 1] == tri[:, 2]) | (tri[:, 0] == tri[:, 2])
    for i in np.flatnonzero(repeated):
        report.violations.append(f"degenerate element {i}: repeated node")
    area = mesh.areas
    scale = max(float(np.ptp(nodes, axis=0).max()) if len(nodes) else 0.0, GEOM_TOL) ** 2
    flat = ~repeated & (np.abs(area) <= 1e-14 * scale)
    for i in np.flatnonzero(flat):
        report.violations.append(f"degenerate element {i}: zero area")
    for i in np.flatnonzero(~repeated & ~flat & (area < 0.0)):
        report.violations.append(f"inverted element {i}")

    declared_regions = set(mesh.regions.values())
    for tag in np.unique(mesh.triangle_tags):
        if int(tag) not in declared_regions:
            report.violations.append(f"undeclared region tag {int(tag)}")
    declared_curves = set(mesh.curves.values())
    for tag in np.unique(mesh.edge_tags):
        if int(tag) not in declared_curves:
            report.violations.append(f"undeclared curve tag {int(tag)}")
    for iface in mesh.interfaces.values():
        for curve in (iface.side1_curve, iface.side2_curve, *iface.end_curves):
            if curve is not None and curve not in mesh.curves:
                report.violations.append(f"interface '{iface.name}' names undeclared curve '{curve}'")

    good = tri[~repeated]
    if good.size == 0:
        return report
    unique, counts = triangle_edge_counts(good)
    for edge in unique[counts > 2]:
        report.violations.append(f"edge {tuple(int(n) for n in edge)} shared by more than two triangles")

    boundary = {tuple(e) for e in unique[counts == 1].tolist()}
    tagged: dict[tuple[int, int], int] = {}
    for edge in np.sort(mesh.edges, axis=1).tolist():
        key = tuple(edge)
        tagged[key] = tagged.get(key, 0) + 1
    for key, n in tagged.items():
        if n > 1:
            report.violations.append(f"boundary edge {key} tagged {n} times")
        if key not in boundary:
            report.violations.append(f"boundary edge {key} does not belong to exactly one triangle")
    for key in sorted(boundary - tagged.keys()):
        report.violations.append(
            f"untagged boundary edge {key} (hanging node or missing curve tag)"
        )
    return report


#####################################
# Traces
#####################################


def extract_trace(mesh: Mesh, curve_tag: int, side: str = SIDE_EXTERNAL_1) -> TraceMesh:
    """Order the edges of one curve into an open chain.

    The chain is oriented so the adjacent subdomain lies on the left of the
    direction of travel; s runs from 0 at the chain start.
    """
    edges = mesh.curve_edges(curve_tag)
    if edges.size == 0:
        raise MeshError(f"curve tag {curve_tag} has no edges")

    neighbours: dict[int, list[int]] = {}
    for a, b in edges.tolist():
        neighbours.setdefault(a, []).append(b)
        neighbours.setdefault(b, []).append(a)
    branching = [n for n, adj in neighbours.items() if len(adj) > 2]
    if branching:
        raise MeshError(f"curve tag {curve_tag} is a branching chain at node {branching[0]}")
    ends = sorted(n for n, adj in neighbours.items() if len(adj) == 1)
    if not ends:
        raise MeshError(f"curve tag {curve_tag} is closed, not an open chain")

    chain = [ends[0]]
    previous = -1
    while True:
        nxt = [n for n in neighbours[chain[-1]] if n != previous]
        if not nxt:
            break
        previous = chain[-1]
        chain.append(nxt[0])
    if len(chain) != len(neighbours):
        raise MeshError(f"curve tag {curve_tag} is a disconnected chain")

    a, b = chain[0], chain[1]
    owner = np.flatnonzero((mesh.triangles == a).any(axis=1) & (mesh.triangles == b).any(axis=1))
    if owner.size == 0:
        raise MeshError(f"curve tag {curve_tag}: edge ({a}, {b}) belongs to no triangle")
    third = [n for n in mesh.triangles[owner[0]].tolist() if n not in (a, b)][0]
    pa, pb, pc = mesh.nodes[a], mesh.nodes[b], mesh.nodes[third]
    cross = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])
    if cross < 0.0:
        chain.reverse()

    ids = np.asarray(chain, dtype=np.int64)
    points = mesh.nodes[ids]
    seg = np.hypot(*np.diff(points, axis=0).T)
    if np.any(seg <= GEOM_TOL):
        raise MeshError(f"curve tag {curve_tag} has a zero-length edge")
    s = np.concatenate([[0.0], np.cumsum(seg)])
    return TraceMesh(ids, s, points, side=side, curve_tag=curve_tag)


def check_paired(
    side1: TraceMesh, side2_aligned: TraceMesh, offset: Sequence[float] = (0.0, 0.0), tol: float = GEOM_TOL
) -> None:
    """Check that two traces bound the same collapsed layer.

    side2_aligned must already run in side 1's direction. offset is the
    layer's normal times its thickness (zero for coincident traces); both
    endpoints of side 2 must sit at side 1's endpoints plus offset within tol.
    """
    if abs(side1.length - side2_aligned.length) > tol:
        raise MeshError(
            f"paired traces differ in length: {side1.length:.17g} vs {side2_aligned.length:.17g}"
        )
    shift = np.asarray(offset, dtype=float)
    for label, k in (("start", 0), ("end", -1)):
        miss = float(np.hypot(*(side2_aligned.points[k] - side1.points[k] - shift)))
        if miss > tol:
            raise MeshError(
                f"paired trace {label} points are {miss:.3e} m off the layer offset "
                f"({shift[0]:.17g}, {shift[1]:.17g})"
            )
