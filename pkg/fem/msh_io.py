"""
msh_io.py - read and write the ASCII MSH 2.2 subset used by the solver.

Supported sections: $MeshFormat (2.2 0 8), $PhysicalNames, $Nodes and
$Elements with element types 1 (2-node line) and 2 (3-node triangle).
Line elements become boundary edges tagged by their physical curve,
triangles take their physical surface as region tag.
"""

#####################################
# Import Modules
#####################################

# Imports from Python Standard Library
import pathlib
import shlex
from typing import Iterator

# Imports from external packages
import numpy as np

# Import functions from local modules
from fem.errors import MeshFormatError
from fem.mesh import CollapsedInterface, Mesh
from utils.utils_logger import logger

#####################################
# Default Configurations
#####################################

LINE_ELEMENT = 1
TRIANGLE_ELEMENT = 2

#####################################
# Reading
#####################################


class _Lines:
    """Numbered line reader so every error can point at its line."""

    def __init__(self, text: str) -> None:
        self._lines = text.splitlines()
        self.number = 0

    def next(self) -> str:
        while self.number < len(self._lines):
            self.number += 1
            line = self._lines[self.number - 1].strip()
            if line:
                return line
        raise MeshFormatError("unexpected end of file", self.number)

    def __iter__(self) -> Iterator[str]:
        while self.number < len(self._lines):
            self.number += 1
            line = self._lines[self.number - 1].strip()
            if line:
                yield line

    def expect(self, marker: str) -> None:
        line = self.next()
        if line != marker:
            raise MeshFormatError(f"expected {marker}, found {line!r}", self.number)

    def ints(self, count: int | None = None) -> list[int]:
        line = self.next()
        try:
            values = [int(v) for v in line.split()]
        except ValueError:
            raise MeshFormatError(f"expected integers, found {line!r}", self.number) from None
        if count is not None and len(values) != count:
            raise MeshFormatError(f"expected {count} integer(s), found {len(values)}", self.number)
        return values


def load_msh(path: pathlib.Path | str, interfaces: dict[str, CollapsedInterface] | None = None) -> Mesh:
    """Parse an MSH 2.2 ASCII file into a Mesh.

    Collapsed interfaces cannot be expressed in the file format; pass them
    from the configuration when the mesh has a thin-shell gap.
    """
    path = pathlib.Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise MeshFormatError(f"cannot read {path}: {e}") from e
    mesh = parse_msh(text, interfaces)
    logger.info(f"Loaded {path.name}: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles")
    return mesh


def parse_msh(text: str, interfaces: dict[str, CollapsedInterface] | None = None) -> Mesh:
    lines = _Lines(text)
    names: dict[tuple[int, int], str] | None = None
    node_index: dict[int, int] = {}
    coords: list[tuple[float, float]] = []
    tri: list[tuple[int, int, int]] = []
    tri_tags: list[int] = []
    edges: list[tuple[int, int]] = []
    edge_tags: list[int] = []
    seen_format = False
    elements_line = 0

    for line in lines:
        if line == "$MeshFormat":
            parts = lines.next().split()
            if len(parts) != 3 or parts[0] not in ("2.2", "2.2.0") or parts[1] != "0":
                raise MeshFormatError(
                    f"unsupported mesh format {' '.join(parts)!r}, need ASCII 2.2", lines.number
                )
            if parts[2] != "8":
                raise MeshFormatError(
                    f"data-size {parts[2]} is not 8, need double-precision coordinates", lines.number
                )
            seen_format = True
            lines.expect("$EndMeshFormat")
        elif line == "$PhysicalNames":
            names = {}
            (count,) = lines.ints(1)
            for _ in range(count):
                raw = lines.next()
                try:
                    dim, tag, name = shlex.split(raw)
                    names[(int(dim), int(tag))] = name
                except ValueError:
                    raise MeshFormatError(f"bad physical name entry {raw!r}", lines.number) from None
            lines.expect("$EndPhysicalNames")
        elif line == "$Nodes":
            (count,) = lines.ints(1)
            for _ in range(count):
                raw = lines.next()
                parts = raw.split()
                try:
                    node_id, x, y, z = int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3])
                except (ValueError, IndexError):
                    raise MeshFormatError(f"bad node entry {raw!r}", lines.number) from None
                if z != 0.0:
                    raise MeshFormatError(f"node {node_id} has z={z}, only 2D meshes are supported", lines.number)
                if node_id in node_index:
                    raise MeshFormatError(f"duplicate node id {node_id}", lines.number)
                node_index[node_id] = len(coords)
                coords.append((x, y))
            lines.expect("$EndNodes")
        elif line == "$Elements":
            elements_line = lines.number
            (count,) = lines.ints(1)
            for _ in range(count):
                values = lines.ints()
                if len(values) < 3:
                    raise MeshFormatError("truncated element entry", lines.number)
                etype, ntags = values[1], values[2]
                if etype not in (LINE_ELEMENT, TRIANGLE_ELEMENT):
                    raise MeshFormatError(f"unsupported element type {etype}", lines.number)
                if ntags < 1:
                    raise MeshFormatError("element without a physical tag", lines.number)
                n_nodes = 2 if etype == LINE_ELEMENT else 3
                conn = values[3 + ntags :]
                if len(conn) != n_nodes:
                    raise MeshFormatError(
                        f"element type {etype} needs {n_nodes} nodes, found {len(conn)}", lines.number
                    )
                try:
                    local = tuple(node_index[n] for n in conn)
                except KeyError as e:
                    raise MeshFormatError(f"element references unknown node {e.args[0]}", lines.number) from None
                if etype == LINE_ELEMENT:
                    edges.append(local)
                    edge_tags.append(values[3])
                else:
                    tri.append(local)
                    tri_tags.append(values[3])
            lines.expect("$EndElements")
        elif line.startswith("$"):
            # Unknown sections are skipped whole
            end = "$End" + line[1:]
            for skipped in lines:
                if skipped == end:
                    break
        else:
            raise MeshFormatError(f"unexpected content {line!r}", lines.number)

    if not seen_format:
        raise MeshFormatError("missing $MeshFormat section")
    if names is None:
        raise MeshFormatError("missing $PhysicalNames tag section")
    if not tri:
        raise MeshFormatError("mesh has no triangles", elements_line or None)

    regions = {name: tag for (dim, tag), name in names.items() if dim == 2}
    curves = {name: tag for (dim, tag), name in names.items() if dim == 1}
    undeclared = sorted(set(tri_tags) - set(regions.values()))
    if undeclared:
        raise MeshFormatError(f"surface tag {undeclared[0]} is not declared in $PhysicalNames", elements_line)
    undeclared = sorted(set(edge_tags) - set(curves.values()))
    if undeclared:
        raise MeshFormatError(f"curve tag {undeclared[0]} is not declared in $PhysicalNames", elements_line)

    return Mesh.build(
        np.asarray(coords, dtype=float),
        np.asarray(tri, dtype=np.int64),
        np.asarray(tri_tags, dtype=np.int64),
        np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        np.asarray(edge_tags, dtype=np.int64),
        regions,
        curves,
        interfaces,
    )


#####################################
# Writing
#####################################


def format_msh(mesh: Mesh) -> str:
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$PhysicalNames"]
    out.append(str(len(mesh.curves) + len(mesh.regions)))
    out.extend(f'1 {tag} "{name}"' for name, tag in mesh.curves.items())
    out.extend(f'2 {tag} "{name}"' for name, tag in mesh.regions.items())
    out.append("$EndPhysicalNames")

    out.append("$Nodes")
    out.append(str(mesh.n_nodes))
    out.extend(f"{node.id + 1} {node.x:.17g} {node.y:.17g} 0" for node in mesh.iter_nodes())
    out.append("$EndNodes")

    out.append("$Elements")
    out.append(str(len(mesh.edges) + mesh.n_triangles))
    number = 0
    for edge in mesh.iter_boundary_edges():
        number += 1
        a, b = edge.nodes
        out.append(f"{number} 1 2 {edge.curve_tag} {edge.curve_tag} {a + 1} {b + 1}")
    for tri in mesh.iter_triangles():
        number += 1
        a, b, c = tri.nodes
        out.append(f"{number} 2 2 {tri.region_tag} {tri.region_tag} {a + 1} {b + 1} {c + 1}")
    out.append("$EndElements")
    return "\n".join(out) + "\n"


def write_msh(mesh: Mesh, path: pathlib.Path | str) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_msh(mesh), encoding="utf-8")
    logger.info(f"Wrote mesh to {path}")
    return path
