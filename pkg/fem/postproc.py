"""
postproc.py

Quantities read off solved states:
- maximum temperature per region over time (TimeSeriesRecord, CSV),
- horizontal control-line profiles, which cross a collapsed layer by
  emitting both one-sided trace values and every sheet at its physical
  position inside the layer,
- relative errors between two runs (time series and profiles),
- legacy ASCII VTK export of the volume field and of the shell sheets.

Every function only reads the state; nothing here changes a problem.
"""

from __future__ import annotations

import pathlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from fem.errors import PostprocError
from fem.mesh import GEOM_TOL, SIDE_EXTERNAL_1, SIDE_EXTERNAL_2, Mesh
from fem.problem import ThermalProblem
from fem.solver import TransientState
from utils.utils_logger import logger

#####################################
# Constants
#####################################

EPSILON = 1e-30
FLOAT_FORMAT = "%.17g"
SIDE_VOLUME = "volume"
SHEET_REGION = -1
PROFILE_COLUMNS = ("x", "T", "region_tag", "side")
VTK_TRIANGLE = 5
VTK_POLY_LINE = 4

_BARY_TOL = 1e-12


def sheet_side(j: int) -> str:
    return f"sheet-{j}"


#####################################
# Domain Types
#####################################


@dataclass(frozen=True)
class TimeSeriesRecord:
    """Named scalars at one time level plus the provenance of the run."""

    time: float
    values: Mapping[str, float]
    picard_iters: int = 0
    model: str = ""
    config_hash: str = ""


@dataclass(frozen=True, eq=False)
class LineProfile:
    y: float
    x: np.ndarray
    T: np.ndarray
    region_tag: np.ndarray
    side: np.ndarray
    markers: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        n = len(self.x)
        if not (len(self.T) == len(self.region_tag) == len(self.side) == n):
            raise PostprocError("profile columns differ in length")
        if n and np.any(np.diff(self.x) < -GEOM_TOL):
            raise PostprocError("profile positions must not decrease")

    def __len__(self) -> int:
        return len(self.x)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "x": np.asarray(self.x, dtype=float),
                "T": np.asarray(self.T, dtype=float),
                "region_tag": np.asarray(self.region_tag, dtype=int),
                "side": np.asarray(self.side, dtype=str),
            },
            columns=list(PROFILE_COLUMNS),
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, y: float = float("nan")) -> "LineProfile":
        missing = [c for c in PROFILE_COLUMNS if c not in frame.columns]
        if missing:
            raise PostprocError(f"profile table lacks column(s) {', '.join(missing)}")
        return cls(
            y,
            frame["x"].to_numpy(dtype=float),
            frame["T"].to_numpy(dtype=float),
            frame["region_tag"].to_numpy(dtype=int),
            frame["side"].astype(str).to_numpy(),
        )

    def select(self, region_tag: int) -> np.ndarray:
        return np.asarray(self.T)[np.asarray(self.region_tag) == region_tag]


#####################################
# Helpers
#####################################


def _state_vector(state: TransientState | np.ndarray) -> np.ndarray:
    x = state.x if isinstance(state, TransientState) else state
    return np.asarray(x, dtype=float)


def _mesh_and_volume(state, problem_or_mesh: ThermalProblem | Mesh) -> tuple[Mesh, np.ndarray]:
    x = _state_vector(state)
    if isinstance(problem_or_mesh, ThermalProblem):
        return problem_or_mesh.mesh, problem_or_mesh.volume(x)
    mesh = problem_or_mesh
    if x.size < mesh.n_nodes:
        raise PostprocError(f"state has {x.size} entries for a mesh of {mesh.n_nodes} nodes")
    return mesh, x[: mesh.n_nodes]


def _line_intervals(coords: np.ndarray, y: float) -> tuple[np.ndarray, np.ndarray]:
    """x extent of the line y = const inside each triangle (nan where it misses)."""
    ys = coords[:, :, 1]
    xs = coords[:, :, 0]
    lo = np.full(len(coords), np.nan)
    hi = np.full(len(coords), np.nan)
    hit = (ys.min(axis=1) <= y + GEOM_TOL) & (ys.max(axis=1) >= y - GEOM_TOL)
    for e in np.flatnonzero(hit):
        points = []
        for a, b in ((0, 1), (1, 2), (2, 0)):
            ya, yb = ys[e, a], ys[e, b]
            if abs(ya - y) <= GEOM_TOL:
                points.append(xs[e, a])
            if (ya - y) * (yb - y) < 0.0:
                t = (y - ya) / (yb - ya)
                points.append(xs[e, a] + t * (xs[e, b] - xs[e, a]))
        if points:
            lo[e], hi[e] = min(points), max(points)
    return lo, hi


def _merge(intervals: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    merged: list[list[float]] = []
    for a, b in sorted(intervals):
        if merged and a <= merged[-1][1] + GEOM_TOL:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [(a, b) for a, b in merged]


def _interpolate(mesh: Mesh, volume: np.ndarray, candidates: np.ndarray, px: np.ndarray, y: float):
    """P1 values and region tags at (px, y); nan / 0 where no candidate triangle holds the point."""
    values = np.full(px.size, np.nan)
    tags = np.zeros(px.size, dtype=int)
    if candidates.size == 0 or px.size == 0:
        return values, tags
    tri = mesh.triangles[candidates]
    c = mesh.nodes[tri]
    x0, y0 = c[:, 0, 0], c[:, 0, 1]
    d1 = c[:, 1] - c[:, 0]
    d2 = c[:, 2] - c[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    rx = px[:, None] - x0[None, :]
    ry = y - y0[None, :]
    l1 = (rx * d2[None, :, 1] - ry * d2[None, :, 0]) / det
    l2 = (d1[None, :, 0] * ry - d1[None, :, 1] * rx) / det
    l0 = 1.0 - l1 - l2
    inside = (l0 >= -_BARY_TOL) & (l1 >= -_BARY_TOL) & (l2 >= -_BARY_TOL)
    found = inside.any(axis=1)
    first = inside.argmax(axis=1)
    rows = np.flatnonzero(found)
    e = first[rows]
    T = volume[tri[e]]
    values[rows] = l0[rows, e] * T[:, 0] + l1[rows, e] * T[:, 1] + l2[rows, e] * T[:, 2]
    tags[rows] = mesh.triangle_tags[candidates[e]]
    return values, tags


def _shell_crossing(shell_points: np.ndarray, y: float) -> int | None:
    """Index of the first shell segment whose y range holds the line."""
    ys = shell_points[:, 1]
    for i in range(len(ys) - 1):
        if min(ys[i], ys[i + 1]) - GEOM_TOL <= y <= max(ys[i], ys[i + 1]) + GEOM_TOL:
            return i
    return None


#####################################
# Region maxima and time series
#####################################


def max_in_region(state, problem_or_mesh: ThermalProblem | Mesh, region_tag: int) -> float:
    """Maximum nodal temperature over the nodes of one region."""
    mesh, volume = _mesh_and_volume(state, problem_or_mesh)
    nodes = mesh.region_nodes(region_tag)
    if nodes.size == 0:
        logger.error(f"Region tag {region_tag} has no nodes")
        raise PostprocError(f"region {region_tag} is empty")
    return float(volume[nodes].max())


def record_state(
    state: TransientState,
    problem: ThermalProblem,
    series: Mapping[str, str],
    model: str = "",
    config_hash: str = "",
) -> TimeSeriesRecord:
    """Evaluate every configured column (column name -> region name) at one state."""
    values = {
        column: max_in_region(state, problem, problem.mesh.region_tag(region))
        for column, region in series.items()
    }
    return TimeSeriesRecord(
        state.time, values, state.diagnostics.picard_iters, model, config_hash
    )


def records_frame(records: Sequence[TimeSeriesRecord]) -> pd.DataFrame:
    """time, the named scalars in first-record order, then picard_iters."""
    if not records:
        raise PostprocError("no time series records")
    names = list(records[0].values)
    times = np.array([r.time for r in records], dtype=float)
    if np.any(np.diff(times) <= 0.0):
        raise PostprocError("time series times must increase strictly")
    for r in records:
        if list(r.values) != names:
            raise PostprocError(f"record at t={r.time:.6g} s has columns {list(r.values)}, expected {names}")
    data = {"time": times}
    for name in names:
        data[name] = np.array([r.values[name] for r in records], dtype=float)
    data["picard_iters"] = np.array([r.picard_iters for r in records], dtype=int)
    return pd.DataFrame(data)


def write_time_series(records: Sequence[TimeSeriesRecord], path: pathlib.Path | str) -> pathlib.Path:
    path = pathlib.Path(path)
    frame = records_frame(records)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"Wrote {len(frame)} time levels to {path}")
    return path


def read_time_series(path: pathlib.Path | str) -> pd.DataFrame:
    path = pathlib.Path(path)
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as e:
        raise PostprocError(f"cannot read time series {path}: {e}") from e
    if "time" not in frame.columns:
        raise PostprocError(f"{path} has no 'time' column")
    return frame


#####################################
# Control-line profiles
#####################################


def sample_line(state, problem: ThermalProblem | Mesh, y: float, n_samples: int = 200) -> LineProfile:
    """Temperature along the horizontal line at height y.

    Inside triangles the P1 field is interpolated. Where the line crosses a
    collapsed layer the hole is replaced by the side-1 trace value, the
    N + 1 sheets at x + w_j and the side-2 trace value.
    """
    if n_samples < 2:
        raise PostprocError(f"n_samples must be at least 2, got {n_samples}")
    mesh, volume = _mesh_and_volume(state, problem)
    coords = mesh.nodes[mesh.triangles]
    lo, hi = _line_intervals(coords, y)
    candidates = np.flatnonzero(np.isfinite(lo))
    if candidates.size == 0:
        logger.error(f"Control line y={y:g} m misses the domain")
        raise PostprocError(f"line y={y:g} m does not intersect the domain")

    x_min, x_max = float(lo[candidates].min()), float(hi[candidates].max())
    px = np.linspace(x_min, x_max, n_samples)
    values, tags = _interpolate(mesh, volume, candidates, px, y)

    markers: set[float] = set()
    for tag in np.unique(mesh.triangle_tags[candidates]):
        mine = candidates[mesh.triangle_tags[candidates] == tag]
        for a, b in _merge(zip(lo[mine], hi[mine])):
            markers.update((a, b))

    rows_x: list[np.ndarray] = [px]
    rows_T: list[np.ndarray] = [values]
    rows_tag: list[np.ndarray] = [tags]
    rows_side: list[np.ndarray] = [np.full(px.size, SIDE_VOLUME, dtype=object)]
    keep = np.isfinite(values)

    interfaces = problem.interfaces if isinstance(problem, ThermalProblem) else ()
    for iface in interfaces:
        i = _shell_crossing(iface.shell.points, y)
        if i is None:
            continue
        p0, p1 = iface.shell.points[i], iface.shell.points[i + 1]
        t = 0.0 if abs(p1[1] - p0[1]) <= GEOM_TOL else (y - p0[1]) / (p1[1] - p0[1])
        s_cross = float(iface.shell.s[i] + t * (iface.shell.s[i + 1] - iface.shell.s[i]))
        x_cross = float(p0[0] + t * (p1[0] - p0[0]))
        normal = np.asarray(iface.collapsed.normal)
        w = iface.stack.breakpoints
        sheet_x = x_cross + normal[0] * w
        x_lo, x_hi = min(sheet_x[0], sheet_x[-1]), max(sheet_x[0], sheet_x[-1])
        # samples that fell into the hole or onto its faces are replaced
        keep &= ~((px >= x_lo - GEOM_TOL) & (px <= x_hi + GEOM_TOL))

        sheets = problem.sheets(_state_vector(state), iface).values
        side1, side2 = iface.sides[0].external, iface.sides[1].external
        first_tag = _interpolate(mesh, volume, candidates, np.array([sheet_x[0]]), y)[1][0]
        last_tag = _interpolate(mesh, volume, candidates, np.array([sheet_x[-1]]), y)[1][0]
        xs = np.concatenate([[sheet_x[0]], sheet_x, [sheet_x[-1]]])
        Ts = np.concatenate(
            [
                [float(side1.value_at(volume[side1.node_ids], s_cross))],
                [float(iface.shell.value_at(sheets[j], s_cross)) for j in range(iface.stack.n_sheets)],
                [float(side2.value_at(volume[side2.node_ids], s_cross))],
            ]
        )
        region = np.concatenate([[first_tag], np.full(iface.stack.n_sheets, SHEET_REGION), [last_tag]])
        side = np.array(
            [SIDE_EXTERNAL_1] + [sheet_side(j) for j in range(iface.stack.n_sheets)] + [SIDE_EXTERNAL_2],
            dtype=object,
        )
        if normal[0] < 0.0:
            xs, Ts, region, side = xs[::-1], Ts[::-1], region[::-1], side[::-1]
        rows_x.append(xs)
        rows_T.append(Ts)
        rows_tag.append(region)
        rows_side.append(side)
        markers.update((x_lo, x_hi))
        logger.debug(f"Control line y={y:g} m crosses interface '{iface.name}' at x={x_cross:.6g} m")

    rows_x[0], rows_T[0], rows_tag[0], rows_side[0] = px[keep], values[keep], tags[keep], rows_side[0][keep]
    x_all = np.concatenate(rows_x)
    order = np.argsort(x_all, kind="stable")
    profile = LineProfile(
        float(y),
        x_all[order],
        np.concatenate(rows_T)[order],
        np.concatenate(rows_tag).astype(int)[order],
        np.concatenate(rows_side).astype(str)[order],
        tuple(sorted(markers)),
    )
    logger.debug(f"Sampled {len(profile)} point(s) on y={y:g} m")
    return profile


def write_profile(profile: LineProfile, path: pathlib.Path | str) -> pathlib.Path:
    path = pathlib.Path(path)
    profile.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_profile(path: pathlib.Path | str) -> LineProfile:
    path = pathlib.Path(path)
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as e:
        raise PostprocError(f"cannot read profile {path}: {e}") from e
    return LineProfile.from_frame(frame)


#####################################
# Relative errors
#####################################


def _as_frame(series) -> pd.DataFrame:
    if isinstance(series, pd.DataFrame):
        return series
    return records_frame(list(series))


def relative_error(series_a, series_b, quantity: str) -> pd.Series:
    """|a - b| / max(|b|, 1e-30) for one column, indexed by time.

    Series are DataFrames with a time column or sequences of
    TimeSeriesRecord. When the time grids differ both series are linearly
    interpolated onto the coarser grid restricted to the overlap.
    """
    a, b = _as_frame(series_a), _as_frame(series_b)
    for name, frame in (("a", a), ("b", b)):
        if quantity not in frame.columns:
            raise PostprocError(f"series {name} has no column '{quantity}'")
    ta, tb = a["time"].to_numpy(dtype=float), b["time"].to_numpy(dtype=float)
    va, vb = a[quantity].to_numpy(dtype=float), b[quantity].to_numpy(dtype=float)
    if ta.size == 0 or tb.size == 0:
        raise PostprocError("relative error of an empty series")

    if ta.shape == tb.shape and np.allclose(ta, tb, rtol=0.0, atol=1e-12 * max(1.0, abs(ta[-1]))):
        times = ta
    else:
        start, stop = max(ta[0], tb[0]), min(ta[-1], tb[-1])
        coarse = ta if ta.size <= tb.size else tb
        times = coarse[(coarse >= start - 1e-12) & (coarse <= stop + 1e-12)]
        if times.size == 0:
            logger.error(f"Time ranges [{ta[0]:g}, {ta[-1]:g}] and [{tb[0]:g}, {tb[-1]:g}] do not overlap")
            raise PostprocError("time series do not overlap")
        va, vb = np.interp(times, ta, va), np.interp(times, tb, vb)
    error = np.abs(va - vb) / np.maximum(np.abs(vb), EPSILON)
    return pd.Series(error, index=pd.Index(times, name="time"), name=quantity)


def relative_error_profile(profile_a: LineProfile, profile_b: LineProfile) -> float:
    """Maximum relative error of a against b interpolated at a's positions."""
    xb = np.asarray(profile_b.x, dtype=float)
    if xb.size == 0 or len(profile_a) == 0:
        raise PostprocError("relative error of an empty profile")
    xb_unique, first = np.unique(xb, return_index=True)
    Tb = np.asarray(profile_b.T, dtype=float)[first]
    xa = np.asarray(profile_a.x, dtype=float)
    inside = (xa >= xb_unique[0] - GEOM_TOL) & (xa <= xb_unique[-1] + GEOM_TOL)
    if not inside.any():
        raise PostprocError("profiles do not overlap")
    Ta = np.asarray(profile_a.T, dtype=float)[inside]
    ref = np.interp(xa[inside], xb_unique, Tb)
    return float((np.abs(Ta - ref) / np.maximum(np.abs(ref), EPSILON)).max())


def interface_fluxes(state, problem: ThermalProblem) -> dict[str, float]:
    """Integrated multiplier (W per unit depth) leaving each coupled side into its shell."""
    x = _state_vector(state)
    out = {}
    for block in problem.couplings:
        carrier = block.interface.space.carrier
        lengths = carrier.segment_lengths
        weights = np.zeros(carrier.n_nodes)
        weights[:-1] += 0.5 * lengths
        weights[1:] += 0.5 * lengths
        key = f"{block.interface.name}:{block.interface.side}"
        out[key] = float(weights @ x[block.multiplier_dofs])
    return out


#####################################
# VTK export
#####################################


def _write_vtk(
    path: pathlib.Path,
    title: str,
    points: np.ndarray,
    cells: list[np.ndarray],
    cell_type: int,
    temperature: np.ndarray,
    cell_scalars: tuple[str, np.ndarray],
) -> None:
    n_cell_values = sum(len(c) + 1 for c in cells)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"{title}\n")
        f.write("ASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {len(points)} double\n")
        np.savetxt(f, np.column_stack([points, np.zeros(len(points))]), fmt=FLOAT_FORMAT)
        f.write(f"CELLS {len(cells)} {n_cell_values}\n")
        for cell in cells:
            f.write(" ".join(str(int(v)) for v in (len(cell), *cell)) + "\n")
        f.write(f"CELL_TYPES {len(cells)}\n")
        f.writelines(f"{cell_type}\n" for _ in cells)
        name, values = cell_scalars
        f.write(f"CELL_DATA {len(cells)}\n")
        f.write(f"SCALARS {name} int 1\nLOOKUP_TABLE default\n")
        np.savetxt(f, np.asarray(values, dtype=int), fmt="%d")
        f.write(f"POINT_DATA {len(points)}\n")
        f.write("SCALARS temperature double 1\nLOOKUP_TABLE default\n")
        np.savetxt(f, np.asarray(temperature, dtype=float), fmt=FLOAT_FORMAT)


def export_fields(state, problem: ThermalProblem | Mesh, path: pathlib.Path | str) -> list[pathlib.Path]:
    """Write the volume field to path and each interface's sheets to <stem>_<name>.vtk."""
    path = pathlib.Path(path)
    mesh, volume = _mesh_and_volume(state, problem)
    time = state.time if isinstance(state, TransientState) else 0.0
    written = []
    try:
        _write_vtk(
            path,
            f"temperature t={time:.17g}",
            mesh.nodes,
            list(mesh.triangles),
            VTK_TRIANGLE,
            volume,
            ("region", mesh.triangle_tags),
        )
        written.append(path)
        interfaces = problem.interfaces if isinstance(problem, ThermalProblem) else ()
        for iface in interfaces:
            sheets = problem.sheets(_state_vector(state), iface).values
            n = iface.n_hat
            points = np.concatenate([iface.sheet_points(j) for j in range(iface.stack.n_sheets)])
            cells = [j * n + np.arange(n) for j in range(iface.stack.n_sheets)]
            sheet_path = path.with_name(f"{path.stem}_{iface.name}{path.suffix or '.vtk'}")
            _write_vtk(
                sheet_path,
                f"sheets {iface.name} t={time:.17g}",
                points,
                cells,
                VTK_POLY_LINE,
                sheets.ravel(),
                ("sheet", np.arange(iface.stack.n_sheets)),
            )
            written.append(sheet_path)
    except OSError as e:
        logger.error(f"Cannot write VTK output {path}: {e}")
        raise PostprocError(f"cannot write {path}: {e}") from e
    logger.debug(f"Exported fields at t={time:.6g} s to {', '.join(p.name for p in written)}")
    return written


def load_vtk_temperature(path: pathlib.Path | str) -> tuple[int, np.ndarray]:
    """Point count and temperature array of a file written by export_fields."""
    lines = pathlib.Path(path).read_text(encoding="utf-8").splitlines()
    n_points = None
    for i, line in enumerate(lines):
        if line.startswith("POINTS "):
            n_points = int(line.split()[1])
        if line.startswith("SCALARS temperature"):
            if n_points is None:
                break
            start = i + 2
            return n_points, np.array([float(v) for v in lines[start : start + n_points]])
    raise PostprocError(f"{path} holds no temperature point data")

