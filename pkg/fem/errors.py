"""
errors.py - exception hierarchy for the thermal solver.

Library code logs and raises these; only the command-line entry point turns
them into exit codes.
"""

from __future__ import annotations


class ThermalModelError(Exception):
    """Base class for every error raised by the fem package."""


class ConfigError(ThermalModelError):
    """Invalid or incomplete problem configuration."""

    def __init__(self, key: str, message: str) -> None:
        self.key = key
        super().__init__(f"{key}: {message}")


class MeshError(ThermalModelError):
    """Geometry or mesh that violates a structural requirement."""


class MeshFormatError(MeshError):
    """Unreadable mesh file."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class MaterialError(ThermalModelError):
    """Unknown preset or invalid property curve."""


class AssemblyError(ThermalModelError):
    """Element, boundary or TSA assembly failure."""


class MortarError(ThermalModelError):
    """Incompatible traces or multiplier spaces."""


class SolverError(ThermalModelError):
    """Failure inside the linear or nonlinear solve."""


class SingularSystemError(SolverError):
    """Factorization failed or produced an unusable solution."""

    def __init__(self, message: str, pivot_info: str = "") -> None:
        self.pivot_info = pivot_info
        super().__init__(f"{message} ({pivot_info})" if pivot_info else message)


class ConvergenceError(SolverError):
    """Picard iteration ran out of iterations."""

    def __init__(self, iterations: int, residual: float, time: float | None = None) -> None:
        self.iterations = iterations
        self.residual = residual
        self.time = time
        at = f" at t={time:.6g} s" if time is not None else ""
        super().__init__(
            f"Picard iteration did not converge{at} after {iterations} iterations "
            f"(last relative update {residual:.3e})"
        )


class PostprocError(ThermalModelError):
    """Sampling, comparison or export failure."""
