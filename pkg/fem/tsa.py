"""
tsa.py - thin-shell approximation of a collapsed insulation layer.

The layer of thickness d is split into N virtual layers at breakpoints
w_0 = 0 < w_1 < ... < w_N = d. The temperature is P1 in w inside each layer
and P1 along the shell trace, so the unknowns are N + 1 sheets T_j living on
the trace nodes. Sheet DoFs are numbered sheet-major: j * n_trace + i.

Per layer k the through-thickness integrals reduce to 2x2 matrices
(conduction across, conduction along, capacity, source). They are evaluated
per trace node at the mean of the two adjacent sheet iterates and then
integrated along the trace with P1 segments and two-point Gauss.
"""

#####################################
# Import Modules
#####################################

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from fem.assembly import GAUSS_T, GAUSS_W, SparseBuilder, assemble_vector
from fem.errors import AssemblyError
from fem.materials import Material
from fem.mesh import TraceMesh
from utils.utils_logger import logger

#####################################
# Default Configurations
#####################################

_JUMP = np.array([[1.0, -1.0], [-1.0, 1.0]])
_MASS_1D = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0

#####################################
# Domain Types
#####################################


@dataclass(frozen=True, eq=False)
class TsaStack:
    """Virtual layers across one collapsed interface."""

    name: str
    breakpoints: np.ndarray
    materials: tuple[Material, ...]
    q: tuple[float, ...]
    include_capacity: bool = True

    def __post_init__(self) -> None:
        w = np.array(self.breakpoints, dtype=float).ravel()
        object.__setattr__(self, "breakpoints", w)
        n = w.size - 1
        if n < 1:
            raise AssemblyError(f"TSA stack '{self.name}' needs at least one layer")
        if not np.all(np.isfinite(w)) or np.any(np.diff(w) <= 0.0):
            raise AssemblyError(f"TSA stack '{self.name}' breakpoints must increase strictly")
        if len(self.materials) != n or len(self.q) != n:
            raise AssemblyError(
                f"TSA stack '{self.name}' has {n} layers but {len(self.materials)} materials "
                f"and {len(self.q)} sources"
            )

    @classmethod
    def uniform(
        cls,
        name: str,
        thickness: float,
        n_layers: int,
        material: Material,
        q: float = 0.0,
        include_capacity: bool = True,
    ) -> "TsaStack":
        if n_layers < 1:
            raise AssemblyError(f"TSA stack '{name}' needs at least one layer")
        if not thickness > 0.0:
            raise AssemblyError(f"TSA stack '{name}' needs a positive thickness")
        return cls(
            name,
            np.linspace(0.0, thickness, n_layers + 1),
            (material,) * n_layers,
            (float(q),) * n_layers,
            include_capacity,
        )

    @classmethod
    def from_thicknesses(
        cls,
        name: str,
        thicknesses: list[float],
        materials: list[Material],
        q: list[float],
        include_capacity: bool = True,
    ) -> "TsaStack":
        w = np.concatenate([[0.0], np.cumsum(np.asarray(thicknesses, dtype=float))])
        return cls(name, w, tuple(materials), tuple(float(v) for v in q), include_capacity)

    @property
    def n_layers(self) -> int:
        return int(self.breakpoints.size - 1)

    @property
    def n_sheets(self) -> int:
        return self.n_layers + 1

    @property
    def thickness(self) -> float:
        return float(self.breakpoints[-1] - self.breakpoints[0])

    @property
    def layer_thicknesses(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def is_linear(self) -> bool:
        return all(m.is_constant for m in self.materials)


@dataclass(frozen=True, eq=False)
class SheetField:
    """Sheet temperatures, shape (N + 1, n_trace)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 2:
            raise AssemblyError("sheet field must have shape (N + 1, n_trace) with N >= 1")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_dofs(cls, dofs: np.ndarray, n_sheets: int) -> "SheetField":
        dofs = np.asarray(dofs, dtype=float)
        if dofs.size % n_sheets:
            raise AssemblyError(f"{dofs.size} sheet DoFs do not split into {n_sheets} sheets")
        return cls(dofs.reshape(n_sheets, -1))

    @property
    def n_sheets(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_trace(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True, eq=False)
class Tsa1dMatrices:
    """Through-thickness matrices of one layer, one (2, 2) block per trace node."""

    layer: int
    K: np.ndarray
    M_kappa: np.ndarray
    M_cv: np.ndarray
    q: np.ndarray


@dataclass(frozen=True, eq=False)
class TsaBlocks:
    K: sp.csr_matrix
    M: sp.csr_matrix
    f: np.ndarray


#####################################
# Operations
#####################################


def _sheet_values(stack: TsaStack, sheets: SheetField | np.ndarray) -> np.ndarray:
    values = sheets.values if isinstance(sheets, SheetField) else np.asarray(sheets, dtype=float)
    if values.ndim != 2 or values.shape[0] != stack.n_sheets:
        raise AssemblyError(
            f"stack '{stack.name}' has {stack.n_sheets} sheets, field has shape {values.shape}"
        )
    if not np.all(np.isfinite(values)):
        raise AssemblyError(f"stack '{stack.name}': sheet iterate contains non-finite values")
    return values


def tsa_1d_matrices(stack: TsaStack, k: int, sheets: SheetField | np.ndarray) -> Tsa1dMatrices:
    """Matrices of layer k (1-based) at the per-node mean of sheets k-1 and k."""
    if not 1 <= k <= stack.n_layers:
        raise AssemblyError(f"layer {k} outside 1..{stack.n_layers}")
    values = _sheet_values(stack, sheets)
    d = float(stack.breakpoints[k] - stack.breakpoints[k - 1])
    if not d > 0.0:
        raise AssemblyError(f"layer {k} of stack '{stack.name}' has thickness {d}")
    material = stack.materials[k - 1]
    mean_T = 0.5 * (values[k - 1] + values[k])
    kappa = np.atleast_1d(material.kappa.eval(mean_T))
    c_v = np.atleast_1d(material.c_v.eval(mean_T))
    K = (kappa / d)[:, None, None] * _JUMP
    M_kappa = (kappa * d)[:, None, None] * _MASS_1D
    if stack.include_capacity:
        M_cv = (c_v * d)[:, None, None] * _MASS_1D
    else:
        M_cv = np.zeros_like(M_kappa)
    q = np.full((mean_T.size, 2), 0.5 * stack.q[k - 1] * d)
    return Tsa1dMatrices(k, K, M_kappa, M_cv, q)


def tsa_tangential_gradient(trace: TraceMesh | np.ndarray, values: np.ndarray) -> np.ndarray:
    """Difference quotient dT/ds on every segment (last axis runs along the trace).

    trace is a TraceMesh or its arc-length coordinates.
    """
    s = trace.s if isinstance(trace, TraceMesh) else np.asarray(trace, dtype=float)
    values = np.asarray(values, dtype=float)
    if s.size < 2:
        raise AssemblyError("a tangential gradient needs at least two trace nodes")
    if values.shape[-1] != s.size:
        raise AssemblyError(f"{values.shape[-1]} values for a trace of {s.size} nodes")
    ds = np.diff(s)
    if np.any(ds <= 0.0):
        raise AssemblyError("trace has a zero-length segment")
    return np.diff(values, axis=-1) / ds


def _segment_integrals(nodal: np.ndarray, lengths: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray):
    """Integral over each segment of c(s) phi_p phi_q for nodal (n, 2, 2) coefficient blocks."""
    phi = np.stack([1.0 - GAUSS_T, GAUSS_T], axis=1)
    ca, cb = nodal[seg_a], nodal[seg_b]
    out = np.zeros((len(lengths), 2, 2, 2, 2))
    for g in range(GAUSS_T.size):
        coeff = (1.0 - GAUSS_T[g]) * ca + GAUSS_T[g] * cb
        out += np.einsum(
            "e,eIJ,p,q->eIpJq", GAUSS_W[g] * lengths, coeff, phi[g], phi[g]
        )
    return out


def assemble_tsa(
    trace: TraceMesh, stack: TsaStack, matrices: list[Tsa1dMatrices] | None = None, sheets=None
) -> TsaBlocks:
    """Shell stiffness, capacity and load on the sheet DoFs of one interface.

    matrices defaults to tsa_1d_matrices at the given sheet iterate.
    """
    n = trace.n_nodes
    if matrices is None:
        if sheets is None:
            raise AssemblyError("assemble_tsa needs layer matrices or a sheet iterate")
        matrices = [tsa_1d_matrices(stack, k, sheets) for k in range(1, stack.n_layers + 1)]
    if len(matrices) != stack.n_layers:
        raise AssemblyError(f"{len(matrices)} layer matrices for {stack.n_layers} layers")

    size = stack.n_sheets * n
    lengths = trace.segment_lengths
    if np.any(lengths <= 0.0):
        raise AssemblyError("trace has a zero-length segment")
    seg_a = np.arange(n - 1)
    seg_b = seg_a + 1
    k_builder = SparseBuilder((size, size))
    m_builder = SparseBuilder((size, size))
    f = np.zeros(size)

    for mats in matrices:
        if mats.K.shape != (n, 2, 2):
            raise AssemblyError(f"layer {mats.layer} matrices do not match a trace of {n} nodes")
        k = mats.layer
        local_nodes = np.stack([seg_a, seg_b], axis=1)
        dofs = np.concatenate([(k - 1) * n + local_nodes, k * n + local_nodes], axis=1)

        across = _segment_integrals(mats.K, lengths, seg_a, seg_b)
        along_coeff = 0.5 * (mats.M_kappa[seg_a] + mats.M_kappa[seg_b])
        along = np.einsum("eIJ,pq->eIpJq", along_coeff / lengths[:, None, None], _JUMP)
        k_builder.add_local(dofs, (across + along).reshape(-1, 4, 4))

        capacity = _segment_integrals(mats.M_cv, lengths, seg_a, seg_b)
        m_builder.add_local(dofs, capacity.reshape(-1, 4, 4))

        qa, qb = mats.q[seg_a], mats.q[seg_b]
        load = np.zeros((n - 1, 2, 2))
        phi = np.stack([1.0 - GAUSS_T, GAUSS_T], axis=1)
        for g in range(GAUSS_T.size):
            coeff = (1.0 - GAUSS_T[g]) * qa + GAUSS_T[g] * qb
            load += np.einsum("e,eI,p->eIp", GAUSS_W[g] * lengths, coeff, phi[g])
        f += assemble_vector(dofs, load.reshape(-1, 4), size)

    logger.debug(f"Assembled TSA stack '{stack.name}': {stack.n_sheets} sheets x {n} trace nodes")
    return TsaBlocks(k_builder.finalize(), m_builder.finalize(), f)
