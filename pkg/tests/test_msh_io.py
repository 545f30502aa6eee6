"""MSH 2.2 reading and writing."""

import numpy as np
import pytest

from fem.errors import MeshFormatError
from fem.geometry import GeometrySpec, generate_magnet_geometry
from fem.mesh import validate
from fem.msh_io import format_msh, load_msh, parse_msh, write_msh

HEADER = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat"]
NAMES = ["$PhysicalNames", "2", '1 1 "rim"', '2 10 "plate"', "$EndPhysicalNames"]
NODES = ["$Nodes", "4", "1 0 0 0", "2 1 0 0", "3 1 1 0", "4 0 1 0", "$EndNodes"]
ELEMENTS = [
    "1 1 2 1 1 1 2",
    "2 1 2 1 1 2 3",
    "3 1 2 1 1 3 4",
    "4 1 2 1 1 4 1",
    "5 2 2 10 10 1 2 3",
    "6 2 2 10 10 1 3 4",
]


def msh(header=HEADER, names=NAMES, nodes=NODES, elements=ELEMENTS, extra=()):
    block = ["$Elements", str(len(elements)), *elements, "$EndElements"]
    return "\n".join([*header, *names, *extra, *nodes, *block]) + "\n"


def test_hand_written_square():
    mesh = parse_msh(msh())
    assert mesh.n_nodes == 4
    assert mesh.n_triangles == 2
    assert len(mesh.edges) == 4
    assert mesh.regions == {"plate": 10}
    assert mesh.curves == {"rim": 1}
    assert validate(mesh).ok


def test_quadrilateral_is_rejected_with_its_line():
    elements = ELEMENTS[:5] + ["6 3 2 10 10 1 2 3 4"]
    with pytest.raises(MeshFormatError, match="unsupported element type 3") as info:
        parse_msh(msh(elements=elements))
    # 3 header + 5 names + 7 nodes + 2 element header lines, then the sixth element
    assert info.value.line == 23


def test_missing_physical_names():
    with pytest.raises(MeshFormatError, match=r"missing \$PhysicalNames"):
        parse_msh(msh(names=[]))


def test_missing_mesh_format():
    with pytest.raises(MeshFormatError, match=r"missing \$MeshFormat"):
        parse_msh(msh(header=[]))


def test_binary_or_newer_format_is_rejected():
    with pytest.raises(MeshFormatError, match="need ASCII 2.2") as info:
        parse_msh(msh(header=["$MeshFormat", "4.1 0 8", "$EndMeshFormat"]))
    assert info.value.line == 2


@pytest.mark.parametrize("size", ["4", "16"])
def test_single_or_quad_precision_data_size_is_rejected(size):
    with pytest.raises(MeshFormatError, match=f"data-size {size} is not 8") as info:
        parse_msh(msh(header=["$MeshFormat", f"2.2 0 {size}", "$EndMeshFormat"]))
    assert info.value.line == 2


def test_bad_node_entry_reports_line():
    nodes = NODES[:3] + ["2 one 0 0"] + NODES[4:]
    with pytest.raises(MeshFormatError, match="bad node entry") as info:
        parse_msh(msh(nodes=nodes))
    assert info.value.line == 12


def test_three_dimensional_node_is_rejected():
    nodes = NODES[:4] + ["3 1 1 0.5"] + NODES[5:]
    with pytest.raises(MeshFormatError, match="only 2D"):
        parse_msh(msh(nodes=nodes))


def test_undeclared_surface_tag():
    elements = ELEMENTS[:5] + ["6 2 2 11 11 1 3 4"]
    with pytest.raises(MeshFormatError, match="surface tag 11 is not declared"):
        parse_msh(msh(elements=elements))


def test_unknown_node_reference():
    elements = ELEMENTS[:5] + ["6 2 2 10 10 1 3 9"]
    with pytest.raises(MeshFormatError, match="unknown node 9"):
        parse_msh(msh(elements=elements))


def test_unknown_sections_are_skipped():
    comments = ["$Comments", "written by hand", "$EndComments"]
    mesh = parse_msh(msh(extra=comments))
    assert mesh.n_triangles == 2


def test_truncated_file():
    text = msh().split("$Elements")[0] + "$Elements\n6\n1 1 2 1 1 1 2\n"
    with pytest.raises(MeshFormatError, match="unexpected end of file"):
        parse_msh(text)


def test_unreadable_file(tmp_path):
    with pytest.raises(MeshFormatError, match="cannot read"):
        load_msh(tmp_path / "missing.msh")


def test_round_trip_preserves_the_magnet_mesh(tmp_path):
    spec = GeometrySpec(cable_width=1e-3, cable_height=3e-3, insulation=0.3e-3, gap=0.5e-3, collar=1e-3)
    mesh = generate_magnet_geometry(spec, "mortar_tsa", 2.5e-4, 1e-4)
    path = write_msh(mesh, tmp_path / "out" / "magnet.msh")
    loaded = load_msh(path, mesh.interfaces)

    np.testing.assert_array_equal(loaded.nodes, mesh.nodes)
    np.testing.assert_array_equal(loaded.triangles, mesh.triangles)
    np.testing.assert_array_equal(loaded.triangle_tags, mesh.triangle_tags)
    np.testing.assert_array_equal(loaded.edges, mesh.edges)
    np.testing.assert_array_equal(loaded.edge_tags, mesh.edge_tags)
    assert loaded.regions == mesh.regions
    assert loaded.curves == mesh.curves
    assert loaded.interfaces == mesh.interfaces
    assert format_msh(loaded) == format_msh(mesh)
