"""
materials.py - temperature-dependent thermal properties and heat sources.

Property curves interpolate piecewise-linearly in (log T, log value) and
clamp at both ends of the table. Named presets are simplified cryogenic
tables kept in data/material_presets.csv; they are plausible shapes for a
NbTi/Cu composite, polyimide film and austenitic steel, not reference data.

Units: T in K, kappa in W/(m K), c_v in J/(m^3 K), Q in W/m^3 per unit
out-of-plane depth.
"""

#####################################
# Import Modules
#####################################

# Imports from Python Standard Library
import functools
import pathlib
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

# Imports from external packages
import numpy as np
import pandas as pd

# Import functions from local modules
from fem.errors import MaterialError
from utils.utils_config import get_material_presets_path
from utils.utils_logger import logger

#####################################
# Default Configurations
#####################################

PRESET_COLUMNS = ("material", "T", "kappa", "c_v")

# Flat curves span the whole operating range
CONSTANT_RANGE = (1.0, 500.0)

_CONSTANT_PATTERN = re.compile(
    r"^constant\(\s*([^,\s]+)\s*,\s*([^,\s\)]+)\s*\)$", re.IGNORECASE
)

#####################################
# Property Curves
#####################################


@dataclass(frozen=True, eq=False)
class PropertyCurve:
    temperatures: np.ndarray
    values: np.ndarray
    _log_t: np.ndarray = field(init=False, repr=False)
    _log_v: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        t = np.array(self.temperatures, dtype=float).ravel()
        v = np.array(self.values, dtype=float).ravel()
        if t.size < 1 or t.size != v.size:
            raise MaterialError("property curve needs matching, non-empty T and value lists")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise MaterialError("property curve breakpoints must be finite")
        if np.any(t <= 0.0):
            raise MaterialError("property curve temperatures must be positive")
        if np.any(np.diff(t) <= 0.0):
            raise MaterialError("property curve temperatures must be strictly increasing")
        if np.any(v <= 0.0):
            raise MaterialError("property curve values must be positive")
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "temperatures", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "_log_t", np.log(t))
        object.__setattr__(self, "_log_v", np.log(v))

    @classmethod
    def flat(cls, value: float) -> "PropertyCurve":
        return cls(np.asarray(CONSTANT_RANGE), np.full(2, float(value)))

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.values == self.values[0]))

    def eval(self, T: np.ndarray | float) -> np.ndarray | float:
        """Clamped log-log interpolation, exact at the breakpoints."""
        arr = np.asarray(T, dtype=float)
        if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0):
            raise MaterialError("property evaluation needs finite T > 0 K")
        if self.is_constant:
            out = np.full(arr.shape, self.values[0])
        else:
            out = np.exp(np.interp(np.log(arr), self._log_t, self._log_v))
            idx = np.clip(np.searchsorted(self.temperatures, arr), 0, self.temperatures.size - 1)
            exact = self.temperatures[idx] == arr
            out = np.where(exact, self.values[idx], out)
        return float(out) if out.ndim == 0 else out

    __call__ = eval


def evaluate(curve: PropertyCurve, T: np.ndarray | float) -> np.ndarray | float:
    return curve.eval(T)


#####################################
# Materials
#####################################


@dataclass(frozen=True)
class Material:
    name: str
    kappa: PropertyCurve
    c_v: PropertyCurve

    @classmethod
    def constant(cls, kappa: float, c_v: float, name: str | None = None) -> "Material":
        if not (np.isfinite(kappa) and kappa > 0.0 and np.isfinite(c_v) and c_v > 0.0):
            raise MaterialError(f"constant material needs kappa > 0 and c_v > 0, got ({kappa}, {c_v})")
        return cls(
            name or f"constant({kappa:g}, {c_v:g})",
            PropertyCurve.flat(kappa),
            PropertyCurve.flat(c_v),
        )

    @classmethod
    def from_table(cls, name: str, rows: Iterable[Sequence[float]]) -> "Material":
        """Build from rows of (T, kappa, c_v)."""
        table = np.asarray(list(rows), dtype=float)
        if table.ndim != 2 or table.shape[1] != 3:
            raise MaterialError(f"material '{name}' table rows must be [T, kappa, c_v]")
        return cls(name, PropertyCurve(table[:, 0], table[:, 1]), PropertyCurve(table[:, 0], table[:, 2]))

    @property
    def is_constant(self) -> bool:
        return self.kappa.is_constant and self.c_v.is_constant


@dataclass(frozen=True)
class SourceSpec:
    """Constant volumetric heat source per region tag (W/m^3)."""

    q_by_region: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for tag, q in self.q_by_region.items():
            if not np.isfinite(q):
                raise MaterialError(f"heat source for region {tag} must be finite")

    @property
    def active_regions(self) -> tuple[int, ...]:
        return tuple(tag for tag, q in self.q_by_region.items() if q != 0.0)

    def per_triangle(self, triangle_tags: np.ndarray) -> np.ndarray:
        q = np.zeros(triangle_tags.shape, dtype=float)
        for tag, value in self.q_by_region.items():
            q[triangle_tags == tag] = value
        return q


#####################################
# Presets
#####################################


@functools.lru_cache(maxsize=8)
def load_presets(path: pathlib.Path | str | None = None) -> dict[str, Material]:
    """Read the preset table (columns material, T, kappa, c_v)."""
    path = pathlib.Path(path) if path is not None else get_material_presets_path()
    try:
        df = pd.read_csv(path, comment="#")
    except (OSError, pd.errors.ParserError) as e:
        raise MaterialError(f"cannot read material presets {path}: {e}") from e
    missing = [c for c in PRESET_COLUMNS if c not in df.columns]
    if missing:
        raise MaterialError(f"material presets {path} lack column(s) {', '.join(missing)}")
    presets: dict[str, Material] = {}
    for name, group in df.groupby("material", sort=True):
        group = group.sort_values("T")
        presets[str(name)] = Material.from_table(
            str(name), group[["T", "kappa", "c_v"]].to_numpy(dtype=float)
        )
    logger.debug(f"Loaded {len(presets)} material preset(s) from {path}")
    return presets


def preset(
    name: str,
    kappa: float | None = None,
    c_v: float | None = None,
    presets: Mapping[str, Material] | None = None,
) -> Material:
    """Look up a named preset; "constant" takes kappa and c_v (or "constant(k, c)")."""
    key = name.strip()
    match = _CONSTANT_PATTERN.match(key)
    if match:
        try:
            return Material.constant(float(match.group(1)), float(match.group(2)))
        except ValueError:
            raise MaterialError(f"bad constant material '{name}'") from None
    if key.lower() == "constant":
        if kappa is None or c_v is None:
            raise MaterialError("constant material needs kappa and c_v")
        return Material.constant(kappa, c_v)
    table = presets if presets is not None else load_presets()
    try:
        return table[key]
    except KeyError:
        known = ", ".join(sorted(table)) + ", constant(kappa, c_v)"
        logger.error(f"Unknown material preset '{name}'")
        raise MaterialError(f"unknown material preset '{name}' (known: {known})") from None
