"""Command-line entry point: run, compare, mesh-info and exit codes."""

import json

import pytest

import cli.solver_cli as solver_cli
from cli.problem_config import load_config
from cli.solver_cli import (
    EXIT_CONFIG,
    EXIT_INTERRUPTED,
    EXIT_OK,
    EXIT_SOLVER,
    EXIT_THRESHOLD,
    RunManifest,
    compare_runs,
    exit_code,
    main,
    mesh_statistics,
    run_lock,
)
from fem.errors import ConfigError, ConvergenceError, MaterialError, MeshError, PostprocError, SolverError
from fem.postproc import read_profile, read_time_series

NONLINEAR_PLATE = "materials.plate={table=[[1.0, 1.0, 1.0], [100.0, 100.0, 100.0]]}"


def run(config, out, *extra):
    return main(["run", "--config", str(config), "--out", str(out), *extra])


@pytest.fixture
def square_config(data_dir):
    return data_dir / "unit_square.toml"


def test_run_writes_every_output(square_config, tmp_path):
    out = tmp_path / "square"
    assert run(square_config, out, "--override", "output.field_times=[0.1]") == EXIT_OK

    manifest = RunManifest.read(out)
    assert manifest.mode == "mortar_tsa"
    assert manifest.n_dofs == 121
    assert manifest.n_states == 11
    assert manifest.outputs == [
        "config.toml", "fields_t0.100000.vtk", "profile_t0.100000.csv", "time_series.csv",
    ]
    assert not (out / ".lock").exists()

    series = read_time_series(out / "time_series.csv")
    assert list(series.columns) == ["time", "T_max_domain", "picard_iters"]
    assert len(series) == 11
    assert series["T_max_domain"].to_numpy() == pytest.approx(20.0)

    profile = read_profile(out / "profile_t0.100000.csv")
    assert len(profile) == 21
    assert (profile.x[0], profile.x[-1]) == pytest.approx((0.0, 1.0))
    assert profile.T[0] == pytest.approx(20.0)

    copy = load_config(out / "config.toml")
    assert copy.output.field_times == (0.1,)
    assert manifest.config_hash == solver_cli.config_hash(copy)
    assert "Run finished" in (out / "run.log").read_text(encoding="utf-8")


def test_run_mode_flag_and_overrides(square_config, tmp_path):
    out = tmp_path / "short"
    assert run(square_config, out, "--mode", "reference", "--override", "solver.t_end=0.05") == EXIT_OK
    manifest = RunManifest.read(out)
    assert manifest.mode == "reference"
    assert manifest.n_states == 6
    assert load_config(out / "config.toml").mode == "reference"


def test_steady_run_writes_one_profile(data_dir, tmp_path, log_messages):
    out = tmp_path / "blocks"
    assert run(data_dir / "two_blocks.toml", out) == EXIT_OK
    manifest = RunManifest.read(out)
    assert manifest.n_states == 1
    assert "profile_t0.000000.csv" in manifest.outputs
    assert not any("No time level matched" in m for m in log_messages)


def test_default_output_directory(square_config, tmp_path, monkeypatch):
    monkeypatch.setenv("SOLVER_OUTPUT_DIR", str(tmp_path / "runs"))
    assert main(["run", "--config", str(square_config)]) == EXIT_OK
    assert (tmp_path / "runs" / "unit_square_mortar_tsa" / "manifest.json").exists()


def test_configuration_errors_exit_1(square_config, tmp_path):
    assert run(tmp_path / "missing.toml", tmp_path / "a") == EXIT_CONFIG
    assert run(square_config, tmp_path / "b", "--override", "solver.dt=0") == EXIT_CONFIG
    assert run(square_config, tmp_path / "c", "--override", "boundaries.0.curve=\"outer_left\"") == EXIT_CONFIG


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["run", "--mode", "hybrid"], ["compare", "only_one"]])
def test_usage_errors_exit_1(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == EXIT_CONFIG


def test_solver_failure_exits_2(square_config, tmp_path):
    out = tmp_path / "stalled"
    code = run(square_config, out, "--override", NONLINEAR_PLATE, "--override", "solver.picard_max_iters=1")
    assert code == EXIT_SOLVER
    assert not (out / "manifest.json").exists()
    assert not (out / ".lock").exists()


def test_interrupt_exits_130(square_config, tmp_path, monkeypatch):
    def interrupted(*args):
        raise KeyboardInterrupt

    monkeypatch.setattr(solver_cli, "execute_run", interrupted)
    out = tmp_path / "interrupted"
    assert run(square_config, out) == EXIT_INTERRUPTED
    assert not (out / ".lock").exists()


def test_busy_output_directory(square_config, tmp_path):
    out = tmp_path / "busy"
    out.mkdir()
    (out / ".lock").write_text("1\n", encoding="utf-8")
    assert run(square_config, out) == EXIT_CONFIG
    # a lock this run did not take stays in place
    assert (out / ".lock").exists()


def test_run_lock(tmp_path):
    out = tmp_path / "locked"
    with run_lock(out) as lock:
        assert lock.exists()
        with pytest.raises(ConfigError, match="in use by another run") as info:
            with run_lock(out):
                pass
        assert info.value.key == "output.dir"
    assert not lock.exists()


def test_manifest_round_trip(tmp_path):
    manifest = RunManifest(config_hash="abc", geometry_hash="def", mode="reference", n_dofs=7, outputs=["a.csv"])
    path = manifest.write(tmp_path)
    assert path.name == "manifest.json"
    assert RunManifest.read(tmp_path) == manifest
    assert not list(tmp_path.glob(".manifest-*"))
    with pytest.raises(ConfigError, match="no readable manifest.json"):
        RunManifest.read(tmp_path / "elsewhere")


@pytest.mark.parametrize(
    "error, code",
    [
        (ConfigError("mode", "bad"), EXIT_CONFIG),
        (MeshError("bad"), EXIT_CONFIG),
        (MaterialError("bad"), EXIT_CONFIG),
        (SolverError("bad"), EXIT_SOLVER),
        (ConvergenceError(3, 0.1), EXIT_SOLVER),
        (PostprocError("bad"), EXIT_SOLVER),
    ],
)
def test_exit_codes(error, code):
    assert exit_code(error) == code


def test_compare_identical_runs(square_config, tmp_path, monkeypatch):
    monkeypatch.setenv("SOLVER_COMPARE_THRESHOLD", "1e-9")
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(square_config, a) == EXIT_OK
    assert run(square_config, b, "--mode", "reference") == EXIT_OK
    assert main(["compare", str(a), str(b)]) == EXIT_OK

    summary = json.loads((a / "compare" / "summary.json").read_text(encoding="utf-8"))
    assert summary["passed"]
    assert summary["worst"] == 0.0
    assert summary["threshold"] == 1e-9
    assert (summary["mode_a"], summary["mode_b"]) == ("mortar_tsa", "reference")
    assert set(summary["profile_max_relative_error"]) == {"profile_t0.100000.csv"}
    assert (a / "compare" / "errors.csv").exists()
    assert (a / "compare" / "profile_errors.csv").exists()


def test_compare_over_threshold_exits_3(square_config, tmp_path):
    a, b = tmp_path / "warm", tmp_path / "base"
    assert run(square_config, a, "--override", "boundaries.0.value=21.0") == EXIT_OK
    assert run(square_config, b) == EXIT_OK
    report = tmp_path / "report"
    assert main(["compare", str(a), str(b), "--threshold", "1e-3", "--out", str(report)]) == EXIT_THRESHOLD
    assert main(["compare", str(a), str(b), "--threshold", "0.1", "--out", str(report)]) == EXIT_OK

    summary = compare_runs(a, b, report, 0.1)
    # errors are relative to the second run
    assert summary["max_relative_error"]["T_max_domain"] == pytest.approx(1.0 / 20.0)
    assert summary["worst"] >= summary["max_relative_error"]["T_max_domain"]


def test_compare_rejects_different_geometries(square_config, tmp_path):
    a, b = tmp_path / "fine", tmp_path / "coarse"
    assert run(square_config, a) == EXIT_OK
    assert run(square_config, b, "--override", "geometry.h=0.2") == EXIT_OK
    assert main(["compare", str(a), str(b)]) == EXIT_CONFIG
    assert main(["compare", str(a), str(tmp_path / "nothing")]) == EXIT_CONFIG


def test_mesh_info_prints_counts(data_dir, capsys):
    assert main(["mesh-info", "--config", str(data_dir / "two_blocks.toml")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "mode: mortar_tsa" in out
    assert "interface insulation: side1 17 nodes, side2 17 nodes, shell 17 nodes, 3 sheets" in out
    assert "dofs sheets:insulation: 51" in out
    assert "sheet dofs: 51" in out


def test_mesh_statistics(data_dir):
    config = load_config(data_dir / "two_blocks.toml", ["geometry.h_right=1e-4"])
    stats = mesh_statistics(config)
    ins = stats["interfaces"]["insulation"]
    assert (ins["side1"], ins["side2"], ins["shell"]) == (17, 41, 41)
    assert ins["eliminated"] == [False, False]
    assert stats["sheet_dofs"] == 3 * 41
    assert stats["total_dofs"] == sum(stats["dofs"].values())
    assert set(stats["regions"]) == {"cable_left", "cable_right"}

    reference = mesh_statistics(config.with_mode("reference"))
    assert reference["interfaces"] == {}
    assert reference["sheet_dofs"] == 0
    assert reference["total_dofs"] == reference["nodes"]
