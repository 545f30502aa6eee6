"""
solver_cli.py - command-line entry point.

Subcommands:
- run:       solve one configuration in reference or mortar_tsa mode and
             write the time series, control-line profiles, VTK fields and
             a run manifest into the output directory.
- compare:   relative errors between two run directories; exit 3 when the
             largest one exceeds the threshold.
- mesh-info: node, element, trace and DoF counts of a configuration.

Run it as a module from the project root:

    python -m cli.solver_cli run --config data/magnet.toml --mode reference
    python -m cli.solver_cli compare runs/magnet_mortar_tsa runs/magnet_reference

Exit codes: 0 ok, 1 configuration, mesh or material error, 2 solver or
post-processing failure, 3 threshold exceeded, 130 interrupted.
"""

#####################################
# Import Modules
#####################################

# Imports from Python Standard Library
import argparse
import contextlib
import json
import os
import pathlib
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Iterator, Sequence

# Imports from external packages
import numpy as np
import pandas as pd

# Import functions from local modules
import fem
from cli.problem_config import (
    ProblemConfig,
    build_mesh,
    build_problem_from_config,
    config_hash,
    dump_config,
    geometry_hash,
    load_config,
)
from fem.assembly import sheets_family
from fem.errors import ConfigError, MaterialError, MeshError, ThermalModelError
from fem.geometry import MODES
from fem.mesh import validate
from fem.postproc import (
    FLOAT_FORMAT,
    export_fields,
    read_profile,
    read_time_series,
    record_state,
    relative_error,
    relative_error_profile,
    sample_line,
    write_profile,
    write_time_series,
)
from fem.solver import TransientState, run_transient, solve_steady
from utils.utils_config import get_compare_threshold, get_default_config_path, get_output_dir
from utils.utils_logger import add_run_log, logger, remove_run_log

#####################################
# Default Configurations
#####################################

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_THRESHOLD = 3
EXIT_INTERRUPTED = 130

CONFIG_COPY = "config.toml"
MANIFEST_NAME = "manifest.json"
TIME_SERIES_NAME = "time_series.csv"
LOCK_NAME = ".lock"
COMPARE_DIR = "compare"


def time_label(t: float) -> str:
    return f"t{t:.6f}"


#####################################
# Run Manifest
#####################################


@dataclass
class RunManifest:
    config_hash: str
    geometry_hash: str
    mode: str
    version: str = fem.__version__
    config_path: str = ""
    started: str = ""
    wall_clock_s: float = 0.0
    n_dofs: int = 0
    n_states: int = 0
    outputs: list[str] = field(default_factory=list)

    def write(self, out_dir: pathlib.Path) -> pathlib.Path:
        """Write manifest.json atomically (temporary file, then replace)."""
        path = out_dir / MANIFEST_NAME
        fd, tmp = tempfile.mkstemp(prefix=".manifest-", suffix=".json", dir=out_dir)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
                json.dump(asdict(self), f, indent=2, sort_keys=True)
                f.write("\n")
            os.replace(tmp, path)
        except BaseException:
            with contextlib.suppress(OSError):
                os.unlink(tmp)
            raise
        return path

    @classmethod
    def read(cls, run_dir: pathlib.Path) -> "RunManifest":
        path = run_dir / MANIFEST_NAME
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(str(run_dir), f"no readable {MANIFEST_NAME}: {e}") from e
        return cls(**data)


@contextlib.contextmanager
def run_lock(out_dir: pathlib.Path) -> Iterator[pathlib.Path]:
    """Hold <out>/.lock for the duration of one run."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError("output.dir", f"{out_dir} is in use by another run (remove {lock} if stale)") from None
    with os.fdopen(fd, "w") as f:
        f.write(f"{os.getpid()}\n")
    try:
        yield lock
    finally:
        with contextlib.suppress(OSError):
            lock.unlink()


def exit_code(error: BaseException) -> int:
    if isinstance(error, (ConfigError, MeshError, MaterialError)):
        return EXIT_CONFIG
    return EXIT_SOLVER


#####################################
# run
#####################################


def resolve_out_dir(config: ProblemConfig, config_path: pathlib.Path, out: str | None) -> pathlib.Path:
    if out:
        return pathlib.Path(out)
    if config.output.dir:
        return pathlib.Path(config.output.dir)
    return get_output_dir() / f"{config_path.stem}_{config.mode}"


def _due(pending: list[float], t: float, dt: float) -> bool:
    for wanted in pending:
        if abs(t - wanted) <= 0.5 * dt:
            pending.remove(wanted)
            return True
    return False


def execute_run(config: ProblemConfig, config_path: pathlib.Path, out_dir: pathlib.Path) -> RunManifest:
    """Solve one configuration and write every output into out_dir."""
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    clock = time.perf_counter()
    c_hash = config_hash(config)
    (out_dir / CONFIG_COPY).write_text(dump_config(config), encoding="utf-8", newline="\n")
    outputs = [CONFIG_COPY]

    mesh = build_mesh(config)
    report = validate(mesh)
    for note in report.notes:
        logger.info(f"Mesh check: {note}")
    if not report.ok:
        raise MeshError("mesh validation failed: " + "; ".join(report.violations))
    problem = build_problem_from_config(config, mesh)
    series = config.series_columns(mesh)
    solver = config.solver

    profile_y = config.output.profile_y
    final_time = solver.n_steps * solver.dt
    profile_times = sorted(config.output.profile_times) or ([final_time] if profile_y is not None else [])
    field_times = sorted(config.output.field_times)
    records = []

    def emit(state: TransientState, force: bool = False) -> None:
        records.append(record_state(state, problem, series, config.mode, c_hash))
        label = time_label(state.time)
        if profile_y is not None and (_due(profile_times, state.time, solver.dt) or force):
            path = out_dir / f"profile_{label}.csv"
            write_profile(sample_line(state, problem, profile_y, config.output.profile_samples), path)
            outputs.append(path.name)
        if _due(field_times, state.time, solver.dt) or (force and config.output.field_times):
            for path in export_fields(state, problem, out_dir / f"fields_{label}.vtk"):
                outputs.append(path.name)

    if config.steady:
        states = [solve_steady(problem, solver)]
        emit(states[0], force=True)
        # the single state stands in for every requested time
        profile_times.clear()
        field_times.clear()
    else:
        states = run_transient(problem, solver, callback=emit)
    for t in profile_times + field_times:
        logger.warning(f"No time level matched requested output time {t:g} s")

    write_time_series(records, out_dir / TIME_SERIES_NAME)
    outputs.append(TIME_SERIES_NAME)
    manifest = RunManifest(
        config_hash=c_hash,
        geometry_hash=geometry_hash(config),
        mode=config.mode,
        config_path=str(config_path),
        started=started,
        wall_clock_s=time.perf_counter() - clock,
        n_dofs=problem.n_dofs,
        n_states=len(states),
        outputs=sorted(set(outputs)),
    )
    manifest.write(out_dir)
    logger.info(f"Run finished in {manifest.wall_clock_s:.2f} s; outputs in {out_dir}")
    return manifest


def cmd_run(args: argparse.Namespace) -> int:
    config_path = pathlib.Path(args.config) if args.config else get_default_config_path()
    config = load_config(config_path, args.override or ())
    if args.mode:
        config = config.with_mode(args.mode)
    out_dir = resolve_out_dir(config, config_path, args.out)
    with run_lock(out_dir):
        handler_id = add_run_log(out_dir)
        try:
            logger.info(f"Running {config_path} in {config.mode} mode")
            execute_run(config, config_path, out_dir)
        finally:
            remove_run_log(handler_id)
    return EXIT_OK


#####################################
# compare
#####################################


def compare_runs(run_a: pathlib.Path, run_b: pathlib.Path, out_dir: pathlib.Path, threshold: float) -> dict:
    """Relative errors of run_a against run_b; returns the summary that is also written."""
    manifest_a, manifest_b = RunManifest.read(run_a), RunManifest.read(run_b)
    if manifest_a.geometry_hash != manifest_b.geometry_hash:
        raise ConfigError("geometry", f"{run_a} and {run_b} were run on different geometries")

    series_a = read_time_series(run_a / TIME_SERIES_NAME)
    series_b = read_time_series(run_b / TIME_SERIES_NAME)
    skip = {"time", "picard_iters"}
    columns = [c for c in series_a.columns if c not in skip and c in series_b.columns]
    if not columns:
        raise ConfigError("output.series", "the runs share no time series column")
    errors = pd.concat([relative_error(series_a, series_b, c) for c in columns], axis=1)

    out_dir.mkdir(parents=True, exist_ok=True)
    errors.reset_index().to_csv(
        out_dir / "errors.csv", index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
    )

    profile_errors = {}
    for path in sorted(run_a.glob("profile_*.csv")):
        other = run_b / path.name
        if other.exists():
            profile_errors[path.name] = relative_error_profile(read_profile(path), read_profile(other))
    pd.DataFrame(
        {"profile": list(profile_errors), "max_relative_error": list(profile_errors.values())}
    ).to_csv(out_dir / "profile_errors.csv", index=False, float_format=FLOAT_FORMAT, lineterminator="\n")

    series_max = {c: float(np.max(errors[c].to_numpy())) for c in columns}
    worst = max([*series_max.values(), *profile_errors.values()])
    summary = {
        "run_a": str(run_a),
        "run_b": str(run_b),
        "mode_a": manifest_a.mode,
        "mode_b": manifest_b.mode,
        "max_relative_error": series_max,
        "profile_max_relative_error": profile_errors,
        "worst": worst,
        "threshold": threshold,
        "passed": bool(worst <= threshold),
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n"
    )
    for name, value in {**series_max, **profile_errors}.items():
        logger.info(f"max relative error {name}: {value:.3e}")
    return summary


def cmd_compare(args: argparse.Namespace) -> int:
    run_a, run_b = pathlib.Path(args.run_a), pathlib.Path(args.run_b)
    threshold = args.threshold
    if threshold is None:
        with contextlib.suppress(ConfigError):
            threshold = load_config(run_a / CONFIG_COPY).output.compare_threshold
    if threshold is None:
        threshold = get_compare_threshold()
    out_dir = pathlib.Path(args.out) if args.out else run_a / COMPARE_DIR
    summary = compare_runs(run_a, run_b, out_dir, threshold)
    if not summary["passed"]:
        logger.warning(f"Largest relative error {summary['worst']:.3e} exceeds threshold {threshold:.3e}")
        return EXIT_THRESHOLD
    logger.info(f"Largest relative error {summary['worst']:.3e} is within threshold {threshold:.3e}")
    return EXIT_OK


#####################################
# mesh-info
#####################################


def mesh_statistics(config: ProblemConfig) -> dict:
    mesh = build_mesh(config)
    problem = build_problem_from_config(config, mesh)
    regions = {
        name: {
            "triangles": int((mesh.triangle_tags == tag).sum()),
            "nodes": int(mesh.region_nodes(tag).size),
        }
        for name, tag in mesh.regions.items()
    }
    interfaces = {
        iface.name: {
            "side1": iface.sides[0].external.n_nodes,
            "side2": iface.sides[1].external.n_nodes,
            "shell": iface.n_hat,
            "sheets": iface.stack.n_sheets,
            "eliminated": list(iface.eliminated),
        }
        for iface in problem.interfaces
    }
    counts = problem.dofmap.counts()
    sheet_dofs = sum(size for name, size in counts.items() if name.startswith(sheets_family("")))
    return {
        "mode": config.mode,
        "nodes": mesh.n_nodes,
        "triangles": mesh.n_triangles,
        "regions": regions,
        "interfaces": interfaces,
        "dofs": counts,
        "sheet_dofs": sheet_dofs,
        "total_dofs": problem.n_dofs,
    }


def cmd_mesh_info(args: argparse.Namespace) -> int:
    config_path = pathlib.Path(args.config) if args.config else get_default_config_path()
    config = load_config(config_path, args.override or ())
    if args.mode:
        config = config.with_mode(args.mode)
    stats = mesh_statistics(config)
    print(f"mode: {stats['mode']}")
    print(f"nodes: {stats['nodes']}")
    print(f"triangles: {stats['triangles']}")
    for name, counts in stats["regions"].items():
        print(f"region {name}: {counts['triangles']} triangles, {counts['nodes']} nodes")
    for name, counts in stats["interfaces"].items():
        print(
            f"interface {name}: side1 {counts['side1']} nodes, side2 {counts['side2']} nodes, "
            f"shell {counts['shell']} nodes, {counts['sheets']} sheets"
        )
    for name, size in stats["dofs"].items():
        print(f"dofs {name}: {size}")
    print(f"sheet dofs: {stats['sheet_dofs']}")
    print(f"total dofs: {stats['total_dofs']}")
    return EXIT_OK


#####################################
# Argument Parsing
#####################################


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1)."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        logger.error(message)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="solver", description="Transient heat conduction with thin-shell insulation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_config_options(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="problem TOML (default: SOLVER_CONFIG or data/magnet.toml)")
        p.add_argument("--mode", choices=MODES, help="override the configured mode")
        p.add_argument(
            "--override",
            action="append",
            metavar="KEY=VALUE",
            help="dotted config key, repeatable (e.g. tsa.0.n_layers=6)",
        )

    run = sub.add_parser("run", help="solve one configuration")
    add_config_options(run)
    run.add_argument("--out", help="output directory (default: SOLVER_OUTPUT_DIR/<config>_<mode>)")
    run.set_defaults(handler=cmd_run)

    compare = sub.add_parser("compare", help="relative errors between two runs")
    compare.add_argument("run_a")
    compare.add_argument("run_b", help="run used as the reference")
    compare.add_argument("--out", help="report directory (default: <run_a>/compare)")
    compare.add_argument("--threshold", type=float, help="largest acceptable relative error")
    compare.set_defaults(handler=cmd_compare)

    info = sub.add_parser("mesh-info", help="print mesh and DoF statistics")
    add_config_options(info)
    info.set_defaults(handler=cmd_mesh_info)
    return parser


#####################################
# Main Function
#####################################


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except KeyboardInterrupt:
        logger.warning("Interrupted by user.")
        return EXIT_INTERRUPTED
    except ThermalModelError as e:
        code = exit_code(e)
        logger.error(f"{type(e).__name__}: {e}")
        return code


#####################################
# Conditional Execution
#####################################

if __name__ == "__main__":
    sys.exit(main())
