"""
geometry.py - structured mesh generators for the magnet cross-section.

The magnet layout (x to the right, y up), not to scale:

    +-----------+---+-----------+  top
    |           | i |           |
    |   cable   | n |   cable   |  right_face (right cable)
    |   left    | s |   right   |
    |           |   |           |
    +-----------+---+-----------+  y0 = collar + gap
    |            gap            |
    +---------------------------+  collar
    |           collar          |
    +---------------------------+  0

In reference mode the insulation column is meshed with its own region.
In mortar_tsa mode the insulation rectangle is left out (a hole) and its two
vertical sides become the traces of one collapsed interface. gap = collar = 0
gives the bare two-block layout.

Every region is a tensor patch of axis-aligned lines split into triangles.
Patches that touch share their line coordinates, so nodes match exactly
wherever the result must be conforming.
"""

#####################################
# Import Modules
#####################################

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fem.errors import MeshError
from fem.mesh import GEOM_TOL, CollapsedInterface, Mesh, triangle_edge_counts
from utils.utils_logger import logger

#####################################
# Default Configurations
#####################################

MODE_REFERENCE = "reference"
MODE_MORTAR_TSA = "mortar_tsa"
MODES = (MODE_REFERENCE, MODE_MORTAR_TSA)

REGION_TAGS = {
    "collar": 1,
    "gap": 2,
    "cable_left": 3,
    "insulation": 4,
    "cable_right": 5,
}

CURVE_TAGS = {
    "bottom": 101,
    "outer_left": 102,
    "outer_right_lower": 103,
    "right_face": 104,
    "top_left": 105,
    "top_right": 106,
    "insulation_top": 107,
    "insulation_bottom": 108,
    "notch": 109,
    "insulation_side1": 110,
    "insulation_side2": 111,
}

INTERFACE_NAME = "insulation"

RECTANGLE_CURVES = {"bottom": 101, "right": 102, "top": 103, "left": 104}

#####################################
# Geometry Specification
#####################################


@dataclass(frozen=True)
class GeometrySpec:
    """Dimensions in meters. Defaults are a plausible magnet slice, not data."""

    cable_width: float = 2e-3
    cable_height: float = 15e-3
    insulation: float = 0.5e-3
    gap: float = 1e-3
    collar: float = 5e-3

    def check(self) -> None:
        for name in ("cable_width", "cable_height", "insulation"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise MeshError(f"geometry.{name} must be positive, got {value}")
        for name in ("gap", "collar"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise MeshError(f"geometry.{name} must be non-negative, got {value}")

    @property
    def width(self) -> float:
        return 2.0 * self.cable_width + self.insulation

    @property
    def cable_bottom(self) -> float:
        return self.collar + self.gap

    @property
    def height(self) -> float:
        return self.cable_bottom + self.cable_height

    @property
    def bare(self) -> bool:
        return self.cable_bottom == 0.0

    def area(self, mode: str) -> float:
        """Analytic meshed area: the collapsed insulation is excluded in mortar_tsa mode."""
        total = self.width * self.height
        if mode == MODE_MORTAR_TSA:
            total -= self.insulation * self.cable_height
        return total

    def insulation_box(self) -> tuple[float, float, float, float]:
        x0 = self.cable_width
        return (x0, x0 + self.insulation, self.cable_bottom, self.height)


#####################################
# Helper Functions
#####################################


def partition(a: float, b: float, h: float) -> np.ndarray:
    """Uniform breakpoints from a to b with spacing at most h."""
    count = max(1, math.ceil((b - a) / h - 1e-9))
    return np.linspace(a, b, count + 1)


def _join(*parts: np.ndarray) -> np.ndarray:
    out = [parts[0]]
    for part in parts[1:]:
        out.append(part[1:])
    return np.concatenate(out)


class _MeshAccumulator:
    """Collects tensor patches, merging nodes that sit at identical coordinates."""

    def __init__(self) -> None:
        self._index: dict[tuple[int, int], int] = {}
        self._coords: list[tuple[float, float]] = []
        self._triangles: list[np.ndarray] = []
        self._tags: list[np.ndarray] = []

    def _node(self, x: float, y: float) -> int:
        key = (round(x / GEOM_TOL), round(y / GEOM_TOL))
        found = self._index.get(key)
        if found is None:
            found = len(self._coords)
            self._index[key] = found
            self._coords.append((x, y))
        return found

    def add_patch(
        self,
        xs: np.ndarray,
        ys: np.ndarray,
        boxes: list[tuple[float, float, float, float, int]],
    ) -> None:
        ids = np.array([[self._node(float(x), float(y)) for x in xs] for y in ys], dtype=np.int64)
        cx = 0.5 * (xs[:-1] + xs[1:])
        cy = 0.5 * (ys[:-1] + ys[1:])
        gx, gy = np.meshgrid(cx, cy)
        tags = np.zeros(gx.shape, dtype=np.int64)
        for x0, x1, y0, y1, tag in boxes:
            inside = (gx > x0) & (gx < x1) & (gy > y0) & (gy < y1)
            tags[inside] = tag
        n00 = ids[:-1, :-1]
        n10 = ids[:-1, 1:]
        n11 = ids[1:, 1:]
        n01 = ids[1:, :-1]
        keep = tags > 0
        lower = np.stack([n00[keep], n10[keep], n11[keep]], axis=1)
        upper = np.stack([n00[keep], n11[keep], n01[keep]], axis=1)
        cell_tags = tags[keep]
        self._triangles.append(np.stack([lower, upper], axis=1).reshape(-1, 3))
        self._tags.append(np.repeat(cell_tags, 2))

    def finish(
        self,
        regions: dict[str, int],
        segments: list[tuple[str, tuple[float, float], tuple[float, float]]],
        curve_tags: dict[str, int],
        interfaces: dict[str, CollapsedInterface] | None = None,
        always_declare: tuple[str, ...] = (),
    ) -> Mesh:
        nodes = np.asarray(self._coords, dtype=float)
        triangles = np.concatenate(self._triangles)
        tags = np.concatenate(self._tags)

        unique, counts = triangle_edge_counts(triangles)
        boundary = unique[counts == 1]
        mid = 0.5 * (nodes[boundary[:, 0]] + nodes[boundary[:, 1]])
        scale = float(np.ptp(nodes, axis=0).max())
        tol = 1e-9 * scale
        edge_tags = np.zeros(len(boundary), dtype=np.int64)
        for name, (x0, y0), (x1, y1) in segments:
            if y0 == y1:
                on = (np.abs(mid[:, 1] - y0) < tol) & (mid[:, 0] > x0 - tol) & (mid[:, 0] < x1 + tol)
            else:
                on = (np.abs(mid[:, 0] - x0) < tol) & (mid[:, 1] > y0 - tol) & (mid[:, 1] < y1 + tol)
            edge_tags[on & (edge_tags == 0)] = curve_tags[name]
        if np.any(edge_tags == 0):
            raise MeshError(f"{int((edge_tags == 0).sum())} boundary edge(s) lie on no named curve")

        used = set(np.unique(edge_tags).tolist())
        curves = {
            name: tag for name, tag in curve_tags.items() if tag in used or name in always_declare
        }
        used_regions = set(np.unique(tags).tolist())
        region_map = {name: tag for name, tag in regions.items() if tag in used_regions}
        return Mesh.build(
            nodes, triangles, tags, boundary, edge_tags, region_map, curves, interfaces
        )


#####################################
# Generators
#####################################


def generate_magnet_geometry(
    spec: GeometrySpec, mode: str, h_left: float, h_right: float
) -> Mesh:
    """Mesh the magnet slice in reference or mortar_tsa mode.

    h_left sizes the left cable, the collar and the gap; h_right sizes the
    right cable. In reference mode the cable row and the insulation use
    min(h_left, h_right) vertically so the meshed insulation conforms to both
    cables.
    """
    spec.check()
    if mode not in MODES:
        raise MeshError(f"unknown mode '{mode}', expected one of {', '.join(MODES)}")
    for name, h in (("h_left", h_left), ("h_right", h_right)):
        if not (math.isfinite(h) and h > 0.0):
            raise MeshError(f"{name} must be positive, got {h}")

    reference = mode == MODE_REFERENCE
    wc, height, d = spec.cable_width, spec.cable_height, spec.insulation
    width, y0, top = spec.width, spec.cable_bottom, spec.height
    h_fine = min(h_left, h_right)

    features = [wc, height]
    if reference or not spec.bare:
        features.append(d)
    features.extend(v for v in (spec.gap, spec.collar) if v > 0.0)
    smallest = min(features)
    if max(h_left, h_right) > smallest * (1.0 + 1e-9):
        raise MeshError(
            f"mesh size {max(h_left, h_right):.6g} m exceeds the smallest feature {smallest:.6g} m"
        )

    xs_left = partition(0.0, wc, h_left)
    xs_ins = partition(wc, wc + d, h_fine if reference else h_left)
    xs_right = partition(wc + d, width, h_right)
    xs_all = _join(xs_left, xs_ins, xs_right)

    lower_rows = []
    if spec.collar > 0.0:
        lower_rows.append(partition(0.0, spec.collar, h_left))
    if spec.gap > 0.0:
        lower_rows.append(partition(spec.collar, y0, h_left))
    ys_lower = _join(*lower_rows) if lower_rows else None

    boxes = [
        (0.0, width, 0.0, spec.collar, REGION_TAGS["collar"]),
        (0.0, width, spec.collar, y0, REGION_TAGS["gap"]),
        (0.0, wc, y0, top, REGION_TAGS["cable_left"]),
        (wc + d, width, y0, top, REGION_TAGS["cable_right"]),
    ]
    if reference:
        boxes.append((wc, wc + d, y0, top, REGION_TAGS["insulation"]))

    acc = _MeshAccumulator()
    if reference:
        ys_cable = partition(y0, top, h_fine)
        ys_all = ys_cable if ys_lower is None else _join(ys_lower, ys_cable)
        acc.add_patch(xs_all, ys_all, boxes)
    else:
        if ys_lower is not None:
            acc.add_patch(xs_all, ys_lower, boxes)
        acc.add_patch(xs_left, partition(y0, top, h_left), boxes)
        acc.add_patch(xs_right, partition(y0, top, h_right), boxes)

    segments: list[tuple[str, tuple[float, float], tuple[float, float]]] = []
    if spec.bare:
        segments.append(("insulation_bottom", (wc, 0.0), (wc + d, 0.0)))
        segments.append(("bottom", (0.0, 0.0), (width, 0.0)))
    else:
        segments.append(("bottom", (0.0, 0.0), (width, 0.0)))
        segments.append(("notch", (wc, y0), (wc + d, y0)))
        segments.append(("outer_right_lower", (width, 0.0), (width, y0)))
    segments += [
        ("outer_left", (0.0, 0.0), (0.0, top)),
        ("right_face", (width, y0), (width, top)),
        ("insulation_top", (wc, top), (wc + d, top)),
        ("top_left", (0.0, top), (wc, top)),
        ("top_right", (wc + d, top), (width, top)),
        ("insulation_side1", (wc, y0), (wc, top)),
        ("insulation_side2", (wc + d, y0), (wc + d, top)),
    ]

    interfaces: dict[str, CollapsedInterface] = {}
    always: tuple[str, ...] = ()
    if not reference:
        start_curve = "insulation_bottom" if spec.bare else "notch"
        interfaces[INTERFACE_NAME] = CollapsedInterface(
            name=INTERFACE_NAME,
            side1_curve="insulation_side1",
            side2_curve="insulation_side2",
            thickness=d,
            normal=(1.0, 0.0),
            end_curves=(start_curve, "insulation_top"),
        )
        always = ("insulation_side1", "insulation_side2", start_curve, "insulation_top")

    mesh = acc.finish(REGION_TAGS, segments, CURVE_TAGS, interfaces, always)
    logger.info(
        f"Generated {mode} magnet mesh: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles "
        f"(h_left={h_left:.3g} m, h_right={h_right:.3g} m)"
    )
    return mesh


def generate_rectangle(
    width: float, height: float, h: float, region: str = "domain", origin: tuple[float, float] = (0.0, 0.0)
) -> Mesh:
    """Single-region structured mesh with curves bottom, right, top and left."""
    for name, value in (("width", width), ("height", height), ("h", h)):
        if not (math.isfinite(value) and value > 0.0):
            raise MeshError(f"{name} must be positive, got {value}")
    if h > min(width, height) * (1.0 + 1e-9):
        raise MeshError(f"mesh size {h:.6g} exceeds the smallest side {min(width, height):.6g}")
    x0, y0 = origin
    x1, y1 = x0 + width, y0 + height
    acc = _MeshAccumulator()
    acc.add_patch(partition(x0, x1, h), partition(y0, y1, h), [(x0, x1, y0, y1, 1)])
    segments = [
        ("bottom", (x0, y0), (x1, y0)),
        ("right", (x1, y0), (x1, y1)),
        ("top", (x0, y1), (x1, y1)),
        ("left", (x0, y0), (x0, y1)),
    ]
    mesh = acc.finish({region: 1}, segments, RECTANGLE_CURVES)
    logger.debug(f"Generated rectangle mesh: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles")
    return mesh
