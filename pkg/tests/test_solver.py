"""Linear solves, Picard iteration, time stepping and the energy balance."""

import numpy as np
import pytest
import scipy.sparse as sp

import fem.solver as solver_module
from fem.assembly import BoundaryCondition
from fem.errors import ConfigError, ConvergenceError, SingularSystemError, SolverError
from fem.materials import Material, SourceSpec
from fem.problem import build_problem, materials_by_tag
from fem.solver import (
    SaddleFactorization,
    TransientConfig,
    TransientState,
    energy_balance,
    energy_terms,
    linear_system,
    run_transient,
    solve_saddle,
    solve_steady,
    step,
)
from fem.tsa import TsaStack

# kappa = T and c_v = T between 1 K and 100 K
RISING = Material.from_table("rises", [(1.0, 1.0, 1.0), (100.0, 100.0, 100.0)])


def square_problem(mesh, material, bcs, q=None):
    source = SourceSpec({1: q}) if q is not None else SourceSpec()
    return build_problem(mesh, {1: material}, source, bcs)


def hot_left_cold_right():
    return [BoundaryCondition.dirichlet("left", 20.0), BoundaryCondition.dirichlet("right", 10.0)]


@pytest.mark.parametrize(
    "kwargs, key",
    [
        ({"dt": 0.0}, "solver.dt"),
        ({"dt": 0.1, "t_end": 0.05}, "solver.t_end"),
        ({"picard_tol": 0.0}, "solver.picard_tol"),
        ({"picard_max_iters": 0}, "solver.picard_max_iters"),
        ({"t0": -1.0}, "solver.t0"),
        ({"steady_tol": -1e-3}, "solver.steady_tol"),
    ],
)
def test_transient_config_rejects(kwargs, key):
    with pytest.raises(ConfigError) as info:
        TransientConfig(**kwargs)
    assert info.value.key == key


def test_step_count():
    assert TransientConfig(dt=0.1, t_end=1.0).n_steps == 10
    assert TransientConfig(dt=0.01, t_end=0.01).n_steps == 1


def test_indefinite_saddle_solve():
    matrix = sp.csr_matrix(np.array([[2.0, 1.0], [1.0, 0.0]]))
    factor = SaddleFactorization(matrix)
    np.testing.assert_allclose(factor.solve(np.array([3.0, 1.0])), [1.0, 1.0])
    assert factor.last_residual < 1e-14
    np.testing.assert_allclose(solve_saddle(matrix, np.array([2.0, 0.0])), [0.0, 2.0], atol=1e-15)


def test_singular_and_malformed_matrices():
    with pytest.raises(SingularSystemError, match="singular"):
        SaddleFactorization(sp.csr_matrix(np.ones((2, 2))))
    with pytest.raises(SingularSystemError, match="not square"):
        SaddleFactorization(sp.csr_matrix((2, 3)))
    assert SaddleFactorization(sp.csr_matrix((0, 0))).solve(np.zeros(0)).size == 0


def test_mortar_saddle_system(two_block_mesh_nonconforming):
    mesh = two_block_mesh_nonconforming
    cable = Material.constant(5.0, 2.0e3)
    stack = TsaStack.uniform("insulation", 0.3e-3, 3, Material.constant(0.2, 1.0e3))
    bcs = [BoundaryCondition.dirichlet("outer_left", 4.2), BoundaryCondition.robin("right_face", 800.0, 4.2)]
    materials = materials_by_tag(mesh, {"cable_left": cable, "cable_right": cable})
    source = SourceSpec({mesh.region_tag("cable_left"): 1.0e5})
    problem = build_problem(mesh, materials, source, bcs, {"insulation": stack})

    x0 = problem.initial_vector(4.2)
    system = linear_system(problem, x0)
    assert system.is_structurally_symmetric
    assert system.multiplier_diagonal().size == 2 * problem.interface("insulation").n_hat
    assert not system.multiplier_diagonal().any()
    steady = solve_steady(problem).x
    np.testing.assert_allclose(system.solve(), steady, rtol=1e-9, atol=1e-9 * np.abs(steady).max())

    transient = linear_system(problem, x0, dt=0.01)
    assert transient.is_structurally_symmetric
    assert not transient.multiplier_diagonal().any()
    state = step(TransientState(0.0, x0), TransientConfig(dt=0.01), problem)
    np.testing.assert_allclose(transient.solve(), state.x, rtol=1e-9, atol=1e-9 * np.abs(state.x).max())


def test_steady_linear_profile(unit_square_mesh):
    problem = square_problem(unit_square_mesh, Material.constant(1.0, 1.0), hot_left_cold_right())
    state = solve_steady(problem)
    x = unit_square_mesh.nodes[:, 0]
    np.testing.assert_allclose(problem.volume(state.x), 20.0 - 10.0 * x, rtol=1e-12)


def test_linear_dirichlet_data_is_reproduced(unit_square_mesh):
    def g(curve):
        return BoundaryCondition.dirichlet(curve, 5.0, gradient=(2.0, 3.0))

    bcs = [g(curve) for curve in ("bottom", "right", "top", "left")]
    problem = square_problem(unit_square_mesh, Material.constant(0.7, 1.0), bcs)
    state = solve_steady(problem)
    x, y = unit_square_mesh.nodes.T
    np.testing.assert_allclose(problem.volume(state.x), 5.0 + 2.0 * x + 3.0 * y, rtol=1e-12)


def test_transient_run_settles_on_the_steady_profile(unit_square_mesh):
    problem = square_problem(unit_square_mesh, Material.constant(1.0, 1.0), hot_left_cold_right())
    seen = []
    config = TransientConfig(dt=0.05, t_end=5.0, t0=15.0, steady_tol=1e-7)
    states = run_transient(problem, config, callback=seen.append)
    assert states[0].time == 0.0
    assert states[1].time == pytest.approx(0.05)
    assert len(seen) == len(states)
    assert len(states) - 1 < config.n_steps
    steady = solve_steady(problem)
    np.testing.assert_allclose(states[-1].x, steady.x, rtol=1e-5)


def test_linear_problem_factorizes_once(unit_square_mesh, monkeypatch):
    built = []

    class Counting(SaddleFactorization):
        def __init__(self, matrix):
            built.append(matrix.shape)
            super().__init__(matrix)

    monkeypatch.setattr(solver_module, "SaddleFactorization", Counting)
    problem = square_problem(unit_square_mesh, Material.constant(1.0, 1.0), hot_left_cold_right())
    states = run_transient(problem, TransientConfig(dt=0.01, t_end=0.1))
    assert len(states) == 11
    assert len(built) == 1
    assert all(s.diagnostics.picard_iters <= 2 for s in states[1:])


def test_nonlinear_steady_profile(unit_square_mesh):
    problem = square_problem(unit_square_mesh, RISING, hot_left_cold_right())
    assert not problem.is_linear
    state = solve_steady(problem, TransientConfig(picard_tol=1e-10))
    x = unit_square_mesh.nodes[:, 0]
    # kappa = T makes T^2 linear in x
    np.testing.assert_allclose(problem.volume(state.x), np.sqrt(400.0 - 300.0 * x), atol=0.1)
    assert state.diagnostics.picard_iters > 2
    assert state.diagnostics.updates[-1] < 1e-10


def test_picard_iteration_limit(unit_square_mesh):
    problem = square_problem(unit_square_mesh, RISING, hot_left_cold_right())
    with pytest.raises(ConvergenceError) as info:
        solve_steady(problem, TransientConfig(picard_max_iters=1))
    assert info.value.iterations == 1
    assert info.value.time == 0.0


def test_non_positive_temperature_is_an_error(unit_square_mesh):
    bcs = [BoundaryCondition.dirichlet(c, 4.2) for c in ("bottom", "right", "top", "left")]
    problem = square_problem(unit_square_mesh, Material.constant(1.0, 1.0), bcs, q=-1e4)
    with pytest.raises(SolverError, match="non-positive temperature"):
        solve_steady(problem)


def test_single_step(unit_square_mesh):
    problem = square_problem(unit_square_mesh, Material.constant(1.0, 1.0), hot_left_cold_right())
    config = TransientConfig(dt=0.02, t_end=0.1)
    initial = solver_module.TransientSolver(problem, config).initial_state()
    after = step(initial, config, problem)
    assert after.time == pytest.approx(0.02)
    assert not after.x.flags.writeable


def test_energy_balance_with_source_robin_and_dirichlet(unit_square_mesh):
    bcs = [BoundaryCondition.dirichlet("left", 4.2), BoundaryCondition.robin("right", 5.0, 4.2)]
    problem = square_problem(unit_square_mesh, Material.constant(2.0, 3.0), bcs, q=50.0)
    config = TransientConfig(dt=0.01, t_end=0.05)
    states = run_transient(problem, config)
    for previous, current in zip(states, states[1:]):
        terms = energy_terms(previous, current, problem, config.dt)
        assert terms.source == pytest.approx(50.0)
        assert terms.robin > 0.0
        assert terms.flux > 0.0
        assert terms.residual < 1e-9
        assert energy_balance(previous, current, problem, config.dt) == terms.residual


def test_energy_balance_needs_constant_properties(unit_square_mesh):
    problem = square_problem(unit_square_mesh, RISING, hot_left_cold_right())
    states = run_transient(problem, TransientConfig(dt=0.01, t_end=0.01))
    with pytest.raises(SolverError, match="constant material properties"):
        energy_terms(states[0], states[1], problem, 0.01)
