"""TOML problem definitions: parsing, overrides, validation and problem building."""

import copy
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import pytest

from cli.problem_config import (
    ProblemConfig,
    apply_override,
    build_mesh,
    build_problem_from_config,
    config_hash,
    dump_config,
    geometry_hash,
    load_config,
    parse_config,
)
from fem.assembly import multiplier_family, sheets_family
from fem.errors import ConfigError
from fem.geometry import MODE_MORTAR_TSA, MODE_REFERENCE

SQUARE = {
    "geometry": {"kind": "rectangle", "width": 1.0, "height": 1.0, "h": 0.1},
    "materials": {"plate": {"kappa": 1.0, "c_v": 1.0}},
    "regions": [{"name": "domain", "material": "plate"}],
    "boundaries": [
        {"curve": "left", "kind": "dirichlet", "value": 20.0},
        {"curve": "right", "kind": "dirichlet", "value": 10.0},
    ],
    "solver": {"dt": 0.01, "t_end": 0.1, "t0": 10.0},
}


def square(**changes):
    raw = copy.deepcopy(SQUARE)
    raw.update(changes)
    return raw


def two_blocks_raw(data_dir):
    return tomllib.loads((data_dir / "two_blocks.toml").read_text(encoding="utf-8"))


@pytest.mark.parametrize("name", ["magnet.toml", "magnet_linear.toml", "two_blocks.toml", "unit_square.toml"])
def test_shipped_configs_load(data_dir, name):
    config = load_config(data_dir / name)
    assert config.mode == MODE_MORTAR_TSA
    assert config.base_dir == data_dir
    assert parse_config(dump_config(config)) == config


def test_defaults_fill_missing_sections():
    config = ProblemConfig.from_dict({k: v for k, v in SQUARE.items() if k not in ("boundaries", "solver")})
    assert config.mode == MODE_MORTAR_TSA
    assert config.boundaries == ()
    assert config.solver.dt == 0.01 and config.solver.t0 == 4.2
    assert not config.steady
    assert config.output.profile_samples == 200


def test_overrides_reach_nested_keys(data_dir):
    text = (data_dir / "two_blocks.toml").read_text(encoding="utf-8")
    config = parse_config(
        text,
        ["tsa.0.n_layers=6", "tsa.0.eliminate_conformal=true", "mode=reference", "geometry.h_reference=2e-4"],
    )
    assert config.tsa[0].n_layers == 6
    assert config.tsa[0].eliminate_conformal is True
    # bare words that are not TOML values stay strings
    assert config.mode == MODE_REFERENCE
    assert config.mesh_sizes() == (2e-4, 2e-4)


def test_override_creates_missing_tables():
    raw = apply_override(square(), "output.series.T_hot=\"domain\"")
    assert raw["output"] == {"series": {"T_hot": "domain"}}
    assert ProblemConfig.from_dict(raw).output.series == {"T_hot": "domain"}


@pytest.mark.parametrize(
    "item, key, message",
    [
        ("solver.dt", "solver.dt", "key=value"),
        ("=3", "=3", "empty override key"),
        ("solver..dt=1", "solver..dt", "empty override key"),
        ("boundaries.5.value=3", "boundaries.5", "no element 5 in an array of 2"),
        ("boundaries.x.value=3", "boundaries.x", "no element x"),
        ("mode.kind=3", "mode.kind", "cannot set a key on a value"),
        ("mode.kind.name=3", "mode.kind", "cannot descend into a value"),
    ],
)
def test_bad_overrides(item, key, message):
    with pytest.raises(ConfigError, match=message) as info:
        apply_override(square(mode="mortar_tsa"), item)
    assert info.value.key == key


@pytest.mark.parametrize(
    "changes, key",
    [
        ({"mode": "hybrid"}, "mode"),
        ({"postprocess": {}}, "config.postprocess"),
        ({"geometry": {"kind": "sphere"}}, "geometry.kind"),
        ({"geometry": {"kind": "rectangle", "width": 1.0, "height": 1.0}}, "geometry.h"),
        ({"geometry": {"kind": "rectangle", "width": -1.0, "height": 1.0, "h": 0.1}}, "geometry.width"),
        ({"geometry": {"kind": "rectangle", "width": 1.0, "height": 1.0, "h": 0.1, "depth": 2.0}}, "geometry.depth"),
        ({"geometry": {"kind": "magnet", "h_left": 1e-4}}, "geometry.h_right"),
        ({"geometry": {"kind": "msh"}}, "geometry.path"),
        ({"materials": {"plate": {"kappa": 1.0, "c_v": 1.0, "preset": "steel"}}}, "materials.plate"),
        ({"materials": {"plate": {"kappa": 1.0}}}, "materials.plate.c_v"),
        ({"materials": {"plate": {"table": [[1.0, 2.0]]}}}, "materials.plate.table.0"),
        ({"regions": []}, "regions"),
        ({"regions": [{"name": "domain", "material": "unobtainium"}]}, "regions.0.material"),
        ({"regions": [{"name": "domain", "material": "plate"}] * 2}, "regions.1.name"),
        ({"regions": [{"name": "domain", "material": "plate", "q": "hot"}]}, "regions.0.q"),
        ({"boundaries": [{"curve": "left", "kind": "convective"}]}, "boundaries.0.kind"),
        ({"boundaries": [{"curve": "left", "kind": "dirichlet", "value": 0.0}]}, "boundaries.0.value"),
        ({"boundaries": [{"curve": "left", "kind": "robin", "h": 10.0}]}, "boundaries.0.t_ref"),
        ({"boundaries": [{"curve": "left", "kind": "neumann", "value": 1.0}]}, "boundaries.0.value"),
        (
            {"boundaries": [{"curve": "left", "kind": "neumann"}, {"curve": "left", "kind": "neumann"}]},
            "boundaries.1.curve",
        ),
        ({"tsa": [{"name": "ins", "n_layers": 0, "materials": "plate"}]}, "tsa.0.n_layers"),
        ({"tsa": [{"name": "ins", "n_layers": 3, "materials": ["plate", "plate"]}]}, "tsa.0.materials"),
        ({"tsa": [{"name": "ins", "n_layers": 2, "materials": "plate", "q": [1.0, 2.0, 3.0]}]}, "tsa.0.q"),
        ({"tsa": [{"name": "ins", "n_layers": 1, "materials": "plate", "include_capacity": 1}]}, "tsa.0.include_capacity"),
        ({"tsa": [{"name": "ins", "n_layers": 1, "materials": "glass"}]}, "tsa.0.materials.0"),
        ({"solver": {"dt": "fast"}}, "solver.dt"),
        ({"solver": {"dt": 0.0}}, "solver.dt"),
        ({"solver": {"picard_max_iters": 2.5}}, "solver.picard_max_iters"),
        ({"solver": {"steady": "yes"}}, "solver.steady"),
        ({"solver": {"theta": 0.5}}, "solver.theta"),
        ({"output": {"profile_samples": 1}}, "output.profile_samples"),
        ({"output": {"series": {"T_max": "collar"}}}, "output.series.T_max"),
        ({"output": {"profile_times": 1.0}}, "output.profile_times"),
    ],
)
def test_invalid_configs_name_the_key(changes, key):
    with pytest.raises(ConfigError) as info:
        ProblemConfig.from_dict(square(**changes))
    assert info.value.key == key
    assert str(info.value).startswith(f"{key}: ")


def test_file_mesh_stacks_need_side_curves():
    raw = square(
        geometry={"kind": "msh", "path": "layer.msh"},
        tsa=[{"name": "ins", "n_layers": 1, "materials": "plate", "side1": "a", "side2": "b"}],
    )
    with pytest.raises(ConfigError) as info:
        ProblemConfig.from_dict(raw)
    assert info.value.key == "tsa.0.thickness"


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError, match="cannot read") as info:
        load_config(tmp_path / "missing.toml")
    assert info.value.key == "config"
    with pytest.raises(ConfigError, match="invalid TOML"):
        parse_config("mode = ")


def test_materials_fall_back_to_presets():
    config = ProblemConfig.from_dict(square(regions=[{"name": "domain", "material": "kapton"}]))
    kapton = config.material("kapton")
    assert not kapton.is_constant
    inline = config.material("constant(2.0, 3.0)")
    assert inline.kappa.eval(10.0) == pytest.approx(2.0)


def test_table_materials():
    config = ProblemConfig.from_dict(
        square(materials={"plate": {"table": [[1.0, 1.0, 1.0], [100.0, 100.0, 50.0]]}})
    )
    plate = config.material("plate")
    assert plate.kappa.eval(50.5) == pytest.approx(50.5)
    # log-log interpolation: c_v follows a power law between the two rows
    assert plate.c_v.eval(50.5) == pytest.approx(50.5 ** (math.log(50.0) / math.log(100.0)))


def test_hashes(data_dir):
    config = load_config(data_dir / "magnet.toml")
    reference = config.with_mode(MODE_REFERENCE)
    assert reference.mode == MODE_REFERENCE
    assert geometry_hash(config) == geometry_hash(reference)
    assert config_hash(config) != config_hash(reference)
    assert config_hash(parse_config(dump_config(config))) == config_hash(config)
    with pytest.raises(ConfigError) as info:
        config.with_mode("hybrid")
    assert info.value.key == "mode"


def test_mesh_sizes_follow_the_mode(data_dir):
    config = load_config(data_dir / "magnet.toml")
    assert config.mesh_sizes() == (2.5e-4, 1.0e-4)
    assert config.with_mode(MODE_REFERENCE).mesh_sizes() == (1.0e-4, 1.0e-4)
    # without h_reference the reference mesh keeps the per-side sizes
    blocks = load_config(data_dir / "two_blocks.toml").with_mode(MODE_REFERENCE)
    assert blocks.mesh_sizes() == (2.5e-4, 2.5e-4)


def test_series_columns(data_dir):
    config = load_config(data_dir / "two_blocks.toml")
    mesh = build_mesh(config)
    assert config.series_columns(mesh) == {"T_max_cable_left": "cable_left", "T_max_cable_right": "cable_right"}
    reference = config.with_mode(MODE_REFERENCE)
    assert "T_max_insulation" in reference.series_columns(build_mesh(reference))
    magnet = load_config(data_dir / "magnet.toml")
    assert list(magnet.output.series) == ["T_max_right_cable", "T_max_left_cable"]


def test_build_unit_square(data_dir):
    config = load_config(data_dir / "unit_square.toml")
    problem = build_problem_from_config(config)
    assert problem.mesh.n_nodes == 121
    assert problem.mesh.n_triangles == 200
    assert problem.dofmap.counts() == {"volume": 121}
    assert problem.is_linear


def test_build_two_blocks(data_dir):
    config = load_config(data_dir / "two_blocks.toml")
    problem = build_problem_from_config(config)
    iface = problem.interface("insulation")
    assert iface.stack.n_sheets == 3
    assert iface.stack.thickness == pytest.approx(0.3e-3)
    counts = problem.dofmap.counts()
    assert counts[sheets_family("insulation")] == 3 * 17
    assert counts[multiplier_family("insulation", 1)] == 17

    eliminated = build_problem_from_config(parse_config(
        (data_dir / "two_blocks.toml").read_text(encoding="utf-8"), ["tsa.0.eliminate_conformal=true"]
    ))
    assert eliminated.interface("insulation").eliminated == (True, True)


def test_reference_mode_meshes_the_layer(data_dir):
    config = load_config(data_dir / "two_blocks.toml").with_mode(MODE_REFERENCE)
    problem = build_problem_from_config(config)
    assert not problem.interfaces
    assert "insulation" in problem.mesh.regions


def test_explicit_thicknesses_must_fill_the_layer(data_dir):
    raw = two_blocks_raw(data_dir)
    raw["tsa"][0]["thicknesses"] = [1.0e-4, 1.0e-4]
    with pytest.raises(ConfigError, match="differs from the layer thickness") as info:
        build_problem_from_config(ProblemConfig.from_dict(raw))
    assert info.value.key == "tsa.0.thicknesses"

    raw["tsa"][0]["thicknesses"] = [1.0e-4, 2.0e-4]
    stack = build_problem_from_config(ProblemConfig.from_dict(raw)).interface("insulation").stack
    assert stack.breakpoints.tolist() == pytest.approx([0.0, 1.0e-4, 3.0e-4])


def test_config_is_checked_against_the_mesh(data_dir):
    raw = square(boundaries=[{"curve": "outer_left", "kind": "dirichlet", "value": 4.2}])
    with pytest.raises(ConfigError, match="unknown curve 'outer_left'") as info:
        build_problem_from_config(ProblemConfig.from_dict(raw))
    assert info.value.key == "boundaries.0.curve"

    raw = two_blocks_raw(data_dir)
    del raw["tsa"]
    with pytest.raises(ConfigError, match="has no \\[\\[tsa\\]\\] entry"):
        build_problem_from_config(ProblemConfig.from_dict(raw))

    raw = two_blocks_raw(data_dir)
    raw["regions"] = [r for r in raw["regions"] if r["name"] != "cable_right"]
    with pytest.raises(ConfigError, match="meshed region 'cable_right'"):
        build_problem_from_config(ProblemConfig.from_dict(raw))
