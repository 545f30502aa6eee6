"""
problem_config.py - TOML problem definitions for the solver entry point.

A configuration file has the sections [geometry], [materials.<name>],
[[regions]], [[boundaries]], [[tsa]], [solver] and [output] plus a top-level
mode. load_config() parses, applies --override items and validates before any
mesh is built, so every ConfigError names the key at fault.

Example:

    mode = "mortar_tsa"

    [geometry]
    kind = "rectangle"
    width = 1.0
    height = 1.0
    h = 0.1

    [materials.steel]
    preset = "steel"

    [[regions]]
    name = "domain"
    material = "steel"
"""

#####################################
# Import Modules
#####################################

# Imports from Python Standard Library
import hashlib
import json
import math
import pathlib
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping

# Imports from external packages
import tomli_w

# Import functions from local modules
from fem.assembly import BC_KINDS, DIRICHLET, NEUMANN, ROBIN, BoundaryCondition
from fem.errors import ConfigError, MaterialError
from fem.geometry import MODE_MORTAR_TSA, MODE_REFERENCE, MODES, GeometrySpec, generate_magnet_geometry, generate_rectangle
from fem.materials import Material, SourceSpec, preset
from fem.mesh import CollapsedInterface, Mesh
from fem.msh_io import load_msh
from fem.problem import ThermalProblem, build_problem, materials_by_tag
from fem.solver import TransientConfig
from fem.tsa import TsaStack
from utils.utils_logger import logger

#####################################
# Default Configurations
#####################################

SECTIONS = ("mode", "geometry", "materials", "regions", "boundaries", "tsa", "solver", "output")
GEOMETRY_KINDS = ("magnet", "rectangle", "msh")
DEFAULT_PROFILE_SAMPLES = 200

_GEOMETRY_KEYS = {
    "magnet": ("cable_width", "cable_height", "insulation", "gap", "collar", "h_left", "h_right", "h_reference"),
    "rectangle": ("width", "height", "h"),
    "msh": ("path",),
}
_SOLVER_KEYS = ("dt", "t_end", "t0", "picard_tol", "picard_max_iters", "steady_tol", "steady")


#####################################
# Helper Functions
#####################################


def _require(section: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in section:
        raise ConfigError(f"{where}.{key}", "missing required value")
    return section[key]


def _number(value: Any, key: str, positive: bool = False, allow_zero: bool = True) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(key, "must be finite")
    if positive and (value < 0.0 or (value == 0.0 and not allow_zero)):
        raise ConfigError(key, f"must be {'>= 0' if allow_zero else 'positive'}, got {value}")
    return value


def _pair(value: Any, key: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(key, f"expected two numbers, got {value!r}")
    return (_number(value[0], f"{key}.0"), _number(value[1], f"{key}.1"))


def _table(value: Any, key: str) -> Mapping[str, Any]:
    if not isinstance(value, Mapping):
        raise ConfigError(key, "expected a table")
    return value


def _array_of_tables(raw: Mapping[str, Any], key: str) -> list[Mapping[str, Any]]:
    items = raw.get(key, [])
    if not isinstance(items, list):
        raise ConfigError(key, "expected an array of tables")
    return [_table(item, f"{key}.{i}") for i, item in enumerate(items)]


def _unknown_keys(section: Mapping[str, Any], allowed: Iterable[str], where: str) -> None:
    extra = sorted(set(section) - set(allowed))
    if extra:
        raise ConfigError(f"{where}.{extra[0]}", "unknown key")


def _without_none(data: dict[str, Any]) -> dict[str, Any]:
    return {k: v for k, v in data.items() if v is not None}


#####################################
# Configuration Sections
#####################################


@dataclass(frozen=True)
class GeometryConfig:
    kind: str = "magnet"
    values: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "GeometryConfig":
        kind = raw.get("kind", "magnet")
        if kind not in GEOMETRY_KINDS:
            raise ConfigError("geometry.kind", f"expected one of {', '.join(GEOMETRY_KINDS)}, got {kind!r}")
        _unknown_keys(raw, ("kind", *_GEOMETRY_KEYS[kind]), "geometry")
        values: dict[str, Any] = {}
        if kind == "msh":
            path = _require(raw, "path", "geometry")
            if not isinstance(path, str) or not path:
                raise ConfigError("geometry.path", "expected a file path")
            values["path"] = path
        elif kind == "rectangle":
            for key in _GEOMETRY_KEYS["rectangle"]:
                values[key] = _number(_require(raw, key, "geometry"), f"geometry.{key}", True, False)
        else:
            defaults = GeometrySpec()
            for key in ("cable_width", "cable_height", "insulation"):
                values[key] = _number(raw.get(key, getattr(defaults, key)), f"geometry.{key}", True, False)
            for key in ("gap", "collar"):
                values[key] = _number(raw.get(key, getattr(defaults, key)), f"geometry.{key}", True)
            for key in ("h_left", "h_right"):
                values[key] = _number(_require(raw, key, "geometry"), f"geometry.{key}", True, False)
            if "h_reference" in raw:
                values["h_reference"] = _number(raw["h_reference"], "geometry.h_reference", True, False)
        return cls(kind, values)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, **self.values}

    def spec(self) -> GeometrySpec:
        return GeometrySpec(**{k: self.values[k] for k in ("cable_width", "cable_height", "insulation", "gap", "collar")})


@dataclass(frozen=True)
class MaterialConfig:
    name: str
    preset: str | None = None
    kappa: float | None = None
    c_v: float | None = None
    table: tuple[tuple[float, float, float], ...] | None = None

    @classmethod
    def from_dict(cls, name: str, raw: Mapping[str, Any]) -> "MaterialConfig":
        where = f"materials.{name}"
        _unknown_keys(raw, ("preset", "kappa", "c_v", "table"), where)
        kinds = [k for k in ("preset", "table") if k in raw] + (["kappa"] if "kappa" in raw or "c_v" in raw else [])
        if len(kinds) != 1:
            raise ConfigError(where, "give exactly one of preset, table or kappa/c_v")
        if "preset" in raw:
            if not isinstance(raw["preset"], str):
                raise ConfigError(f"{where}.preset", "expected a preset name")
            return cls(name, preset=raw["preset"])
        if "table" in raw:
            rows = raw["table"]
            if not isinstance(rows, list) or not rows:
                raise ConfigError(f"{where}.table", "expected rows [T, kappa, c_v]")
            table = []
            for i, row in enumerate(rows):
                if not isinstance(row, list) or len(row) != 3:
                    raise ConfigError(f"{where}.table.{i}", "expected [T, kappa, c_v]")
                table.append(tuple(_number(v, f"{where}.table.{i}", True, False) for v in row))
            return cls(name, table=tuple(table))
        kappa = _number(_require(raw, "kappa", where), f"{where}.kappa", True, False)
        c_v = _number(_require(raw, "c_v", where), f"{where}.c_v", True, False)
        return cls(name, kappa=kappa, c_v=c_v)

    def to_dict(self) -> dict[str, Any]:
        table = [list(row) for row in self.table] if self.table is not None else None
        return _without_none({"preset": self.preset, "kappa": self.kappa, "c_v": self.c_v, "table": table})

    def build(self) -> Material:
        if self.preset is not None:
            return preset(self.preset)
        if self.table is not None:
            return Material.from_table(self.name, self.table)
        return Material.constant(self.kappa, self.c_v, name=self.name)


@dataclass(frozen=True)
class RegionConfig:
    name: str
    material: str
    q: float = 0.0

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], where: str) -> "RegionConfig":
        _unknown_keys(raw, ("name", "material", "q"), where)
        name = _require(raw, "name", where)
        material = _require(raw, "material", where)
        if not isinstance(name, str) or not isinstance(material, str):
            raise ConfigError(where, "name and material must be strings")
        return cls(name, material, _number(raw.get("q", 0.0), f"{where}.q"))

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "material": self.material, "q": self.q}


@dataclass(frozen=True)
class BoundaryConfig:
    curve: str
    kind: str
    value: float = 0.0
    gradient: tuple[float, float] = (0.0, 0.0)
    origin: tuple[float, float] = (0.0, 0.0)
    h: float = 0.0
    t_ref: float = 0.0

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], where: str) -> "BoundaryConfig":
        curve = _require(raw, "curve", where)
        kind = _require(raw, "kind", where)
        if kind not in BC_KINDS:
            raise ConfigError(f"{where}.kind", f"expected one of {', '.join(BC_KINDS)}, got {kind!r}")
        allowed = {
            DIRICHLET: ("curve", "kind", "value", "gradient", "origin"),
            NEUMANN: ("curve", "kind"),
            ROBIN: ("curve", "kind", "h", "t_ref"),
        }[kind]
        _unknown_keys(raw, allowed, where)
        if kind == DIRICHLET:
            value = _number(_require(raw, "value", where), f"{where}.value")
            if value <= 0.0 and "gradient" not in raw:
                raise ConfigError(f"{where}.value", f"temperature must be positive, got {value}")
            return cls(
                curve,
                kind,
                value,
                _pair(raw.get("gradient", (0.0, 0.0)), f"{where}.gradient"),
                _pair(raw.get("origin", (0.0, 0.0)), f"{where}.origin"),
            )
        if kind == ROBIN:
            h = _number(_require(raw, "h", where), f"{where}.h", True)
            t_ref = _number(_require(raw, "t_ref", where), f"{where}.t_ref", True, False)
            return cls(curve, kind, h=h, t_ref=t_ref)
        return cls(curve, kind)

    def to_dict(self) -> dict[str, Any]:
        if self.kind == DIRICHLET:
            return {
                "curve": self.curve,
                "kind": self.kind,
                "value": self.value,
                "gradient": list(self.gradient),
                "origin": list(self.origin),
            }
        if self.kind == ROBIN:
            return {"curve": self.curve, "kind": self.kind, "h": self.h, "t_ref": self.t_ref}
        return {"curve": self.curve, "kind": self.kind}

    def build(self) -> BoundaryCondition:
        return BoundaryCondition(self.kind, self.curve, self.value, self.gradient, self.origin, self.h, self.t_ref)


@dataclass(frozen=True)
class TsaConfig:
    name: str
    n_layers: int
    materials: tuple[str, ...]
    thicknesses: tuple[float, ...] | None = None
    q: tuple[float, ...] = (0.0,)
    include_capacity: bool = True
    eliminate_conformal: bool = False
    side1: str | None = None
    side2: str | None = None
    thickness: float | None = None
    normal: tuple[float, float] | None = None
    end_curves: tuple[str, str] | None = None

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], where: str) -> "TsaConfig":
        _unknown_keys(
            raw,
            (
                "name", "n_layers", "materials", "thicknesses", "q", "include_capacity",
                "eliminate_conformal", "side1", "side2", "thickness", "normal", "end_curves",
            ),
            where,
        )
        name = _require(raw, "name", where)
        n_layers = _require(raw, "n_layers", where)
        if isinstance(n_layers, bool) or not isinstance(n_layers, int) or n_layers < 1:
            raise ConfigError(f"{where}.n_layers", f"expected an integer >= 1, got {n_layers!r}")
        materials = _require(raw, "materials", where)
        materials = (materials,) if isinstance(materials, str) else tuple(materials)
        if len(materials) not in (1, n_layers) or not all(isinstance(m, str) for m in materials):
            raise ConfigError(f"{where}.materials", f"expected one name or {n_layers} names")
        thicknesses = None
        if "thicknesses" in raw:
            thicknesses = tuple(
                _number(v, f"{where}.thicknesses.{i}", True, False) for i, v in enumerate(raw["thicknesses"])
            )
            if len(thicknesses) != n_layers:
                raise ConfigError(f"{where}.thicknesses", f"expected {n_layers} values, got {len(thicknesses)}")
        q = raw.get("q", 0.0)
        q = (q,) if not isinstance(q, list) else tuple(q)
        q = tuple(_number(v, f"{where}.q") for v in q)
        if len(q) not in (1, n_layers):
            raise ConfigError(f"{where}.q", f"expected one value or {n_layers} values")
        for key in ("include_capacity", "eliminate_conformal"):
            if key in raw and not isinstance(raw[key], bool):
                raise ConfigError(f"{where}.{key}", "expected true or false")
        thickness = None
        if "thickness" in raw:
            thickness = _number(raw["thickness"], f"{where}.thickness", True, False)
        normal = _pair(raw["normal"], f"{where}.normal") if "normal" in raw else None
        end_curves = None
        if "end_curves" in raw:
            ends = raw["end_curves"]
            if not isinstance(ends, list) or len(ends) != 2:
                raise ConfigError(f"{where}.end_curves", "expected two curve names")
            end_curves = (str(ends[0]), str(ends[1]))
        return cls(
            name=str(name),
            n_layers=n_layers,
            materials=materials,
            thicknesses=thicknesses,
            q=q,
            include_capacity=raw.get("include_capacity", True),
            eliminate_conformal=raw.get("eliminate_conformal", False),
            side1=raw.get("side1"),
            side2=raw.get("side2"),
            thickness=thickness,
            normal=normal,
            end_curves=end_curves,
        )

    def to_dict(self) -> dict[str, Any]:
        return _without_none(
            {
                "name": self.name,
                "n_layers": self.n_layers,
                "materials": list(self.materials),
                "thicknesses": list(self.thicknesses) if self.thicknesses is not None else None,
                "q": list(self.q),
                "include_capacity": self.include_capacity,
                "eliminate_conformal": self.eliminate_conformal,
                "side1": self.side1,
                "side2": self.side2,
                "thickness": self.thickness,
                "normal": list(self.normal) if self.normal is not None else None,
                "end_curves": list(self.end_curves) if self.end_curves is not None else None,
            }
        )

    def layer_list(self, values: tuple) -> list:
        return list(values) * self.n_layers if len(values) == 1 else list(values)

    def collapsed(self) -> CollapsedInterface:
        """The collapsed layer of a file mesh (side curves and thickness from the config)."""
        ends = self.end_curves or (None, None)
        return CollapsedInterface(
            self.name, self.side1, self.side2, self.thickness, self.normal or (1.0, 0.0), ends
        )


@dataclass(frozen=True)
class OutputConfig:
    dir: str | None = None
    profile_y: float | None = None
    profile_samples: int = DEFAULT_PROFILE_SAMPLES
    profile_times: tuple[float, ...] = ()
    field_times: tuple[float, ...] = ()
    series: Mapping[str, str] = field(default_factory=dict)
    compare_threshold: float | None = None

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "OutputConfig":
        _unknown_keys(
            raw,
            ("dir", "profile_y", "profile_samples", "profile_times", "field_times", "series", "compare_threshold"),
            "output",
        )
        samples = raw.get("profile_samples", DEFAULT_PROFILE_SAMPLES)
        if isinstance(samples, bool) or not isinstance(samples, int) or samples < 2:
            raise ConfigError("output.profile_samples", f"expected an integer >= 2, got {samples!r}")
        series = _table(raw.get("series", {}), "output.series")
        for column, region in series.items():
            if not isinstance(region, str):
                raise ConfigError(f"output.series.{column}", "expected a region name")
        times = {}
        for key in ("profile_times", "field_times"):
            values = raw.get(key, [])
            if not isinstance(values, list):
                raise ConfigError(f"output.{key}", "expected a list of times")
            times[key] = tuple(_number(v, f"output.{key}.{i}", True) for i, v in enumerate(values))
        threshold = raw.get("compare_threshold")
        return cls(
            dir=raw.get("dir"),
            profile_y=_number(raw["profile_y"], "output.profile_y") if "profile_y" in raw else None,
            profile_samples=samples,
            profile_times=times["profile_times"],
            field_times=times["field_times"],
            series=dict(series),
            compare_threshold=None if threshold is None else _number(threshold, "output.compare_threshold", True),
        )

    def to_dict(self) -> dict[str, Any]:
        return _without_none(
            {
                "dir": self.dir,
                "profile_y": self.profile_y,
                "profile_samples": self.profile_samples,
                "profile_times": list(self.profile_times),
                "field_times": list(self.field_times),
                "series": dict(self.series),
                "compare_threshold": self.compare_threshold,
            }
        )


def solver_from_dict(raw: Mapping[str, Any]) -> tuple[TransientConfig, bool]:
    _unknown_keys(raw, _SOLVER_KEYS, "solver")
    defaults = TransientConfig()
    kwargs = {}
    for key in ("dt", "t_end", "t0", "picard_tol", "steady_tol"):
        kwargs[key] = _number(raw.get(key, getattr(defaults, key)), f"solver.{key}")
    iters = raw.get("picard_max_iters", defaults.picard_max_iters)
    if isinstance(iters, bool) or not isinstance(iters, int):
        raise ConfigError("solver.picard_max_iters", f"expected an integer, got {iters!r}")
    steady = raw.get("steady", False)
    if not isinstance(steady, bool):
        raise ConfigError("solver.steady", "expected true or false")
    return TransientConfig(picard_max_iters=iters, **kwargs), steady


def solver_to_dict(config: TransientConfig, steady: bool) -> dict[str, Any]:
    return {
        "dt": config.dt,
        "t_end": config.t_end,
        "t0": config.t0,
        "picard_tol": config.picard_tol,
        "picard_max_iters": config.picard_max_iters,
        "steady_tol": config.steady_tol,
        "steady": steady,
    }


#####################################
# Problem Configuration
#####################################


@dataclass(frozen=True)
class ProblemConfig:
    mode: str
    geometry: GeometryConfig
    materials: Mapping[str, MaterialConfig]
    regions: tuple[RegionConfig, ...]
    boundaries: tuple[BoundaryConfig, ...] = ()
    tsa: tuple[TsaConfig, ...] = ()
    solver: TransientConfig = field(default_factory=TransientConfig)
    steady: bool = False
    output: OutputConfig = field(default_factory=OutputConfig)
    base_dir: pathlib.Path = field(default=pathlib.Path("."), compare=False)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], base_dir: pathlib.Path | str = ".") -> "ProblemConfig":
        _unknown_keys(raw, SECTIONS, "config")
        mode = raw.get("mode", MODE_MORTAR_TSA)
        if mode not in MODES:
            raise ConfigError("mode", f"expected one of {', '.join(MODES)}, got {mode!r}")
        geometry = GeometryConfig.from_dict(_table(raw.get("geometry", {}), "geometry"))
        materials = {
            name: MaterialConfig.from_dict(name, _table(section, f"materials.{name}"))
            for name, section in _table(raw.get("materials", {}), "materials").items()
        }
        regions = tuple(
            RegionConfig.from_dict(item, f"regions.{i}") for i, item in enumerate(_array_of_tables(raw, "regions"))
        )
        if not regions:
            raise ConfigError("regions", "at least one region is required")
        boundaries = tuple(
            BoundaryConfig.from_dict(item, f"boundaries.{i}")
            for i, item in enumerate(_array_of_tables(raw, "boundaries"))
        )
        tsa = tuple(TsaConfig.from_dict(item, f"tsa.{i}") for i, item in enumerate(_array_of_tables(raw, "tsa")))
        solver, steady = solver_from_dict(_table(raw.get("solver", {}), "solver"))
        output = OutputConfig.from_dict(_table(raw.get("output", {}), "output"))
        config = cls(mode, geometry, materials, regions, boundaries, tsa, solver, steady, output, pathlib.Path(base_dir))
        config.validate()
        return config

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "mode": self.mode,
            "geometry": self.geometry.to_dict(),
            "materials": {name: m.to_dict() for name, m in self.materials.items()},
            "regions": [r.to_dict() for r in self.regions],
        }
        if self.boundaries:
            data["boundaries"] = [b.to_dict() for b in self.boundaries]
        if self.tsa:
            data["tsa"] = [t.to_dict() for t in self.tsa]
        data["solver"] = solver_to_dict(self.solver, self.steady)
        data["output"] = self.output.to_dict()
        return data

    def validate(self) -> None:
        """Resolve every referenced name that does not need a mesh."""
        names = [r.name for r in self.regions]
        for i, region in enumerate(self.regions):
            if names.index(region.name) != i:
                raise ConfigError(f"regions.{i}.name", f"region '{region.name}' listed twice")
            self.material(region.material, f"regions.{i}.material")
        curves = [b.curve for b in self.boundaries]
        for i, curve in enumerate(curves):
            if curves.index(curve) != i:
                raise ConfigError(f"boundaries.{i}.curve", f"curve '{curve}' has more than one condition")
        for i, stack in enumerate(self.tsa):
            for j, name in enumerate(stack.materials):
                self.material(name, f"tsa.{i}.materials.{j}")
            if self.geometry.kind == "msh":
                for key in ("side1", "side2", "thickness"):
                    if getattr(stack, key) is None:
                        raise ConfigError(f"tsa.{i}.{key}", "required for a geometry read from a mesh file")
        for column, region in self.output.series.items():
            if region not in names:
                raise ConfigError(f"output.series.{column}", f"unknown region '{region}'")

    def material(self, name: str, key: str = "materials") -> Material:
        """Material by config name, falling back to the preset table."""
        try:
            if name in self.materials:
                return self.materials[name].build()
            return preset(name)
        except MaterialError as e:
            raise ConfigError(key, f"unknown or invalid material '{name}': {e}") from e

    def with_mode(self, mode: str) -> "ProblemConfig":
        if mode not in MODES:
            raise ConfigError("mode", f"expected one of {', '.join(MODES)}, got {mode!r}")
        return replace(self, mode=mode)

    def series_columns(self, mesh: Mesh) -> dict[str, str]:
        """Configured series, or one T_max_<region> column per meshed region."""
        if self.output.series:
            return {c: r for c, r in self.output.series.items() if r in mesh.regions}
        return {f"T_max_{r.name}": r.name for r in self.regions if r.name in mesh.regions}

    def mesh_sizes(self) -> tuple[float, float]:
        values = self.geometry.values
        if self.mode == MODE_REFERENCE and "h_reference" in values:
            return values["h_reference"], values["h_reference"]
        return values["h_left"], values["h_right"]


#####################################
# Overrides, Load and Dump
#####################################


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"value = {text}")["value"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(raw: dict[str, Any], item: str) -> dict[str, Any]:
    """Set one dotted key=value in place; integer parts index arrays of tables."""
    if "=" not in item:
        raise ConfigError(item, "override must look like key=value")
    key, text = item.split("=", 1)
    key = key.strip()
    parts = key.split(".")
    if not key or any(not p for p in parts):
        raise ConfigError(key or item, "empty override key")
    node: Any = raw
    for depth, part in enumerate(parts[:-1]):
        where = ".".join(parts[: depth + 1])
        if isinstance(node, list):
            if not part.isdigit() or int(part) >= len(node):
                raise ConfigError(where, f"no element {part} in an array of {len(node)}")
            node = node[int(part)]
        elif isinstance(node, dict):
            node = node.setdefault(part, {})
        else:
            raise ConfigError(where, "cannot descend into a value")
    last = parts[-1]
    value = _parse_value(text.strip())
    if isinstance(node, list):
        if not last.isdigit() or int(last) >= len(node):
            raise ConfigError(key, f"no element {last} in an array of {len(node)}")
        node[int(last)] = value
    elif isinstance(node, dict):
        node[last] = value
    else:
        raise ConfigError(key, "cannot set a key on a value")
    logger.info(f"Override {key} = {value!r}")
    return raw


def apply_overrides(raw: dict[str, Any], overrides: Iterable[str]) -> dict[str, Any]:
    for item in overrides:
        apply_override(raw, item)
    return raw


def parse_config(text: str, overrides: Iterable[str] = (), base_dir: pathlib.Path | str = ".") -> ProblemConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("config", f"invalid TOML: {e}") from e
    return ProblemConfig.from_dict(apply_overrides(raw, overrides), base_dir)


def load_config(path: pathlib.Path | str, overrides: Iterable[str] = ()) -> ProblemConfig:
    path = pathlib.Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError("config", f"cannot read {path}: {e}") from e
    config = parse_config(text, overrides, path.parent)
    logger.info(f"Loaded config {path.name} (mode {config.mode}, geometry {config.geometry.kind})")
    return config


def dump_config(config: ProblemConfig) -> str:
    return tomli_w.dumps(config.to_dict())


def _digest(data: Any) -> str:
    text = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def config_hash(config: ProblemConfig) -> str:
    return _digest(config.to_dict())


def geometry_hash(config: ProblemConfig) -> str:
    """Hash of the geometry section alone, equal for both modes of one setup."""
    return _digest(config.geometry.to_dict())


#####################################
# Building Meshes and Problems
#####################################


def build_mesh(config: ProblemConfig) -> Mesh:
    geometry = config.geometry
    if geometry.kind == "magnet":
        h_left, h_right = config.mesh_sizes()
        return generate_magnet_geometry(geometry.spec(), config.mode, h_left, h_right)
    if geometry.kind == "rectangle":
        region = config.regions[0].name if len(config.regions) == 1 else "domain"
        return generate_rectangle(geometry.values["width"], geometry.values["height"], geometry.values["h"], region)
    path = pathlib.Path(geometry.values["path"])
    if not path.is_absolute():
        path = config.base_dir / path
    interfaces = None
    if config.mode == MODE_MORTAR_TSA:
        interfaces = {stack.name: stack.collapsed() for stack in config.tsa}
    return load_msh(path, interfaces)


def _check_against_mesh(config: ProblemConfig, mesh: Mesh) -> None:
    names = {r.name for r in config.regions}
    for name in mesh.regions:
        if name not in names:
            raise ConfigError("regions", f"meshed region '{name}' has no [[regions]] entry")
    for i, bc in enumerate(config.boundaries):
        if bc.curve not in mesh.curves:
            raise ConfigError(f"boundaries.{i}.curve", f"unknown curve '{bc.curve}' (mode {config.mode})")
    stacks = {s.name for s in config.tsa}
    for name in mesh.interfaces:
        if name not in stacks:
            raise ConfigError("tsa", f"collapsed interface '{name}' has no [[tsa]] entry")


def build_stack(config: TsaConfig, thickness: float, problem: ProblemConfig, where: str) -> TsaStack:
    materials = [problem.material(name, f"{where}.materials") for name in config.layer_list(config.materials)]
    q = config.layer_list(config.q)
    if config.thicknesses is None:
        thicknesses = [thickness / config.n_layers] * config.n_layers
    else:
        thicknesses = list(config.thicknesses)
        total = sum(thicknesses)
        if abs(total - thickness) > 1e-12 * max(1.0, thickness) + 1e-15:
            raise ConfigError(f"{where}.thicknesses", f"sum {total:.17g} differs from the layer thickness {thickness:.17g}")
    return TsaStack.from_thicknesses(config.name, thicknesses, materials, q, config.include_capacity)


def build_problem_from_config(config: ProblemConfig, mesh: Mesh | None = None) -> ThermalProblem:
    """Mesh (unless given), materials, sources, conditions and stacks of one run."""
    mesh = mesh if mesh is not None else build_mesh(config)
    _check_against_mesh(config, mesh)
    by_name = {r.name: config.material(r.material, f"regions.{i}.material") for i, r in enumerate(config.regions)}
    materials = materials_by_tag(mesh, by_name)
    source = SourceSpec({mesh.regions[r.name]: r.q for r in config.regions if r.name in mesh.regions})
    bcs = [bc.build() for bc in config.boundaries]
    stacks, eliminate = {}, {}
    for i, stack in enumerate(config.tsa):
        collapsed = mesh.interfaces.get(stack.name)
        if collapsed is None:
            continue
        stacks[stack.name] = build_stack(stack, collapsed.thickness, config, f"tsa.{i}")
        eliminate[stack.name] = stack.eliminate_conformal
    return build_problem(mesh, materials, source, bcs, stacks, eliminate, config.mode)
