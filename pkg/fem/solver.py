"""
solver.py - backward Euler time stepping with Picard iteration.

Each time level solves

    (M(T*)/dt + K(T*)) x_{n+1} = M(T*)/dt x_n + f

where K already holds the Robin, thin-shell and mortar blocks, with the
properties frozen at the iterate T* until the relative change of the
temperature DoFs drops below picard_tol. The reduced system (Dirichlet and
identified DoFs removed) is factorized with SuperLU. Problems with constant
properties assemble and factorize once per run.
"""

#####################################
# Import Modules
#####################################

# Imports from Python Standard Library
import math
from dataclasses import dataclass, field
from typing import Callable

# Imports from external packages
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

# Import functions from local modules
from fem.assembly import DofMap, DofReduction
from fem.errors import ConfigError, ConvergenceError, SingularSystemError, SolverError
from fem.problem import GlobalSystem, ThermalProblem
from utils.utils_logger import logger

#####################################
# Default Configurations
#####################################

RESIDUAL_TOL = 1e-10
REFINEMENT_STEPS = 2

#####################################
# Domain Types
#####################################


@dataclass(frozen=True)
class TransientConfig:
    dt: float = 0.01
    t_end: float = 2.0
    picard_tol: float = 1e-8
    picard_max_iters: int = 50
    t0: float = 4.2
    steady_tol: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ConfigError("solver.dt", f"must be positive, got {self.dt}")
        if not (math.isfinite(self.t_end) and self.t_end >= self.dt * (1.0 - 1e-12)):
            raise ConfigError("solver.t_end", f"must be at least dt={self.dt}, got {self.t_end}")
        if not self.picard_tol > 0.0:
            raise ConfigError("solver.picard_tol", f"must be positive, got {self.picard_tol}")
        if self.picard_max_iters < 1:
            raise ConfigError("solver.picard_max_iters", f"must be at least 1, got {self.picard_max_iters}")
        if not (math.isfinite(self.t0) and self.t0 > 0.0):
            raise ConfigError("solver.t0", f"must be a positive temperature, got {self.t0}")
        if self.steady_tol < 0.0:
            raise ConfigError("solver.steady_tol", f"must be >= 0, got {self.steady_tol}")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))


@dataclass(frozen=True)
class StepDiagnostics:
    picard_iters: int
    updates: tuple[float, ...] = ()
    residual: float = 0.0


@dataclass(frozen=True, eq=False)
class TransientState:
    time: float
    x: np.ndarray
    diagnostics: StepDiagnostics = field(default_factory=lambda: StepDiagnostics(0))

    def __post_init__(self) -> None:
        x = np.array(self.x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise SolverError(f"state at t={self.time:.6g} s contains non-finite values")
        x.flags.writeable = False
        object.__setattr__(self, "x", x)


@dataclass(frozen=True, eq=False)
class SaddleSystem:
    """One linearized system [[A, Bt], [B, 0]] x = rhs over the full DoF vector."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    dofmap: DofMap | None = None
    reduction: DofReduction | None = None

    @property
    def is_structurally_symmetric(self) -> bool:
        pattern = (self.matrix != 0).astype(np.int8)
        return (pattern != pattern.T).nnz == 0

    def multiplier_diagonal(self) -> np.ndarray:
        if self.dofmap is None:
            return np.zeros(0)
        return self.matrix.diagonal()[~self.dofmap.temperature_mask]

    def solve(self) -> np.ndarray:
        if self.reduction is None:
            return solve_saddle(self.matrix, self.rhs)
        reduced, rhs = self.reduction.reduce(self.matrix, self.rhs)
        return self.reduction.expand(solve_saddle(reduced, rhs))


def linear_system(
    problem: ThermalProblem,
    x_star: np.ndarray,
    x_prev: np.ndarray | None = None,
    dt: float | None = None,
) -> SaddleSystem:
    """Backward Euler system at the iterate x_star, or the stationary one when dt is None."""
    system = problem.assemble(x_star)
    if dt is None:
        return SaddleSystem(system.K, system.f, problem.dofmap, problem.reduction)
    previous = x_star if x_prev is None else x_prev
    return SaddleSystem(
        (system.K + system.M / dt).tocsr(),
        system.f + system.M @ previous / dt,
        problem.dofmap,
        problem.reduction,
    )


#####################################
# Linear Solve
#####################################


class SaddleFactorization:
    """SuperLU factors of one (possibly indefinite) matrix with residual control."""

    def __init__(self, matrix: sp.spmatrix) -> None:
        self.matrix = sp.csc_matrix(matrix)
        n, m = self.matrix.shape
        if n != m:
            raise SingularSystemError(f"matrix is {n}x{m}, not square")
        self.last_residual = 0.0
        if n == 0:
            self._lu = None
            return
        try:
            self._lu = splu(self.matrix)
        except RuntimeError as e:
            logger.error(f"Factorization failed: {e}")
            raise SingularSystemError("structurally or exactly singular matrix", str(e)) from e
        self._norm = float(abs(self.matrix).sum(axis=1).max())

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        b = np.asarray(rhs, dtype=float)
        if self._lu is None:
            return np.zeros(0)
        x = self._lu.solve(b)
        b_norm = float(np.linalg.norm(b))
        residual = b - self.matrix @ x
        for _ in range(REFINEMENT_STEPS):
            if np.linalg.norm(residual) <= 1e-15 * b_norm:
                break
            x = x + self._lu.solve(residual)
            residual = b - self.matrix @ x
        if not np.all(np.isfinite(x)):
            raise SingularSystemError("factorization produced non-finite values", "zero or tiny pivot")
        r_norm = float(np.linalg.norm(residual))
        relative = r_norm / b_norm if b_norm > 0.0 else r_norm
        self.last_residual = relative
        if relative > RESIDUAL_TOL:
            backward = float(np.abs(residual).max()) / (
                self._norm * float(np.abs(x).max()) + float(np.abs(b).max()) + 1e-300
            )
            if backward > RESIDUAL_TOL:
                logger.error(f"Linear solve residual {relative:.3e} (backward error {backward:.3e})")
                raise SingularSystemError(
                    "numerically singular matrix", f"relative residual {relative:.3e}"
                )
            logger.debug(f"Small right-hand side: residual {relative:.3e}, backward error {backward:.3e}")
        return x


def solve_saddle(matrix: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    """Direct sparse solve of a symmetric indefinite system with one factorization."""
    return SaddleFactorization(matrix).solve(rhs)


#####################################
# Time Stepping
#####################################


class TransientSolver:
    def __init__(self, problem: ThermalProblem, config: TransientConfig) -> None:
        self.problem = problem
        self.config = config
        self.linear = problem.is_linear
        self._mask = problem.dofmap.temperature_mask
        self._system: GlobalSystem | None = None
        self._factor: SaddleFactorization | None = None
        self._factor_dt: float | None = None
        self._operator: sp.csr_matrix | None = None

    def _linearized(self, x_star: np.ndarray, dt: float | None):
        if self.linear and self._system is not None and self._factor_dt == dt:
            return self._system, self._operator, self._factor
        system = self.problem.assemble(x_star)
        operator = system.K if dt is None else (system.K + system.M / dt).tocsr()
        reduced, _ = self.problem.reduction.reduce(operator, np.zeros(operator.shape[0]))
        factor = SaddleFactorization(reduced)
        if self.linear:
            self._system, self._operator, self._factor, self._factor_dt = system, operator, factor, dt
        return system, operator, factor

    def _solve_level(self, x_prev: np.ndarray, time: float, dt: float | None) -> TransientState:
        """Picard iteration on increments: each pass solves for the correction to x_star."""
        reduction = self.problem.reduction
        x_star = reduction.consistent(x_prev)
        updates: list[float] = []
        for iteration in range(1, self.config.picard_max_iters + 1):
            system, operator, factor = self._linearized(x_star, dt)
            rhs = system.f if dt is None else system.f + system.M @ x_prev / dt
            # fixed and identified rows of the increment vanish, so no lift is needed
            increment = reduction.P @ factor.solve(reduction.P.T @ (rhs - operator @ x_star))
            x_new = x_star + increment
            scale = max(float(np.linalg.norm(x_new[self._mask])), 1e-300)
            updates.append(float(np.linalg.norm(increment[self._mask])) / scale)
            x_star = x_new
            logger.debug(f"t={time:.6g} s Picard {iteration}: relative update {updates[-1]:.3e}")
            if updates[-1] < self.config.picard_tol:
                break
        else:
            logger.error(f"Picard iteration stalled at t={time:.6g} s")
            raise ConvergenceError(self.config.picard_max_iters, updates[-1], time)
        temperatures = x_star[self._mask]
        if np.any(temperatures <= 0.0):
            raise SolverError(f"non-positive temperature {temperatures.min():.6g} K at t={time:.6g} s")
        return TransientState(
            time, x_star, StepDiagnostics(iteration, tuple(updates), factor.last_residual)
        )

    def initial_state(self) -> TransientState:
        return TransientState(0.0, self.problem.initial_vector(self.config.t0))

    def step(self, state: TransientState) -> TransientState:
        n = int(round(state.time / self.config.dt)) + 1
        return self._solve_level(state.x, n * self.config.dt, self.config.dt)

    def steady(self) -> TransientState:
        return self._solve_level(self.problem.initial_vector(self.config.t0), 0.0, None)

    def run(self, callback: Callable[[TransientState], None] | None = None) -> list[TransientState]:
        state = self.initial_state()
        states = [state]
        if callback is not None:
            callback(state)
        for n in range(1, self.config.n_steps + 1):
            new = self.step(state)
            states.append(new)
            if callback is not None:
                callback(new)
            change = np.linalg.norm(new.x[self._mask] - state.x[self._mask]) / max(
                float(np.linalg.norm(new.x[self._mask])), 1e-300
            )
            state = new
            if n % 50 == 0 or n == self.config.n_steps:
                logger.info(
                    f"Step {n}/{self.config.n_steps} t={new.time:.4g} s, "
                    f"{new.diagnostics.picard_iters} Picard iteration(s), change {change:.3e}"
                )
            if self.config.steady_tol > 0.0 and change < self.config.steady_tol:
                logger.info(f"Steady state reached at t={new.time:.6g} s (change {change:.3e})")
                break
        return states


def step(state: TransientState, config: TransientConfig, problem: ThermalProblem) -> TransientState:
    return TransientSolver(problem, config).step(state)


def run_transient(
    problem: ThermalProblem,
    config: TransientConfig,
    callback: Callable[[TransientState], None] | None = None,
) -> list[TransientState]:
    """States at t = 0, dt, 2 dt, ... up to t_end (or the steady-state exit)."""
    logger.info(
        f"Running {config.n_steps} step(s) of dt={config.dt:g} s "
        f"({'linear' if problem.is_linear else 'nonlinear'} problem, {problem.n_dofs} DoFs)"
    )
    return TransientSolver(problem, config).run(callback)


def solve_steady(problem: ThermalProblem, config: TransientConfig | None = None) -> TransientState:
    """Stationary solution, Picard iteration started from the uniform t0 field."""
    return TransientSolver(problem, config or TransientConfig()).steady()


#####################################
# Energy Balance
#####################################


@dataclass(frozen=True)
class EnergyBalance:
    stored_rate: float
    source: float
    robin: float
    flux: float
    residual: float


def energy_terms(
    previous: TransientState, current: TransientState, problem: ThermalProblem, dt: float
) -> EnergyBalance:
    """Power terms (W per unit depth) of one backward Euler step.

    robin and flux are the powers leaving through Robin and Dirichlet
    boundaries; flux is the reaction on the fixed rows.
    """
    if not problem.is_linear:
        raise SolverError("energy balance needs constant material properties")
    system = problem.assemble(current.x)
    mask = problem.dofmap.temperature_mask
    dx = current.x - previous.x
    stored = system.M @ dx / dt
    residual = stored + system.K @ current.x - system.f
    stored_rate = float(stored[mask].sum())
    source = float(system.source[mask].sum())
    robin = float((system.R @ problem.volume(current.x) - system.r).sum())
    fixed = problem.reduction.fixed & mask
    flux = -float(residual[fixed].sum())
    balance = abs(stored_rate - (source - robin - flux))
    scale = max(abs(source), abs(robin), abs(flux), abs(stored_rate), 1e-30)
    return EnergyBalance(stored_rate, source, robin, flux, balance / scale)


def energy_balance(
    previous: TransientState, current: TransientState, problem: ThermalProblem, dt: float
) -> float:
    """Relative mismatch between stored-energy rate and net boundary and source power."""
    return energy_terms(previous, current, problem, dt).residual
