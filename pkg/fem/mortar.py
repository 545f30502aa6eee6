"""
mortar.py - weak temperature coupling across non-conforming traces.

Each side k of a collapsed layer gets a multiplier lambda_k, P1 on the
shell trace. lambda_k is the conductive heat flux density (W/m^2) leaving
external subdomain k into the shell. The constraint rows read

    D_ext T - D_shell T_sheet = 0

and their transposes enter the external rows with a plus sign (the external
residual loses the flux it hands over) and the sheet rows with a minus sign
(the shell receives it), which keeps the global matrix symmetric.

Products of P1 functions from two different traces are integrated exactly
on the common refinement of both breakpoint sets.
"""

#####################################
# Import Modules
#####################################

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from fem.assembly import GAUSS_T, GAUSS_W, SparseBuilder
from fem.errors import MortarError
from fem.mesh import GEOM_TOL, TraceMesh
from utils.utils_logger import logger

#####################################
# Domain Types
#####################################


@dataclass(frozen=True, eq=False)
class MultiplierSpace:
    carrier: TraceMesh
    side: int

    def __post_init__(self) -> None:
        if self.side not in (1, 2):
            raise MortarError(f"multiplier side must be 1 or 2, got {self.side}")

    @property
    def size(self) -> int:
        return self.carrier.n_nodes


@dataclass(frozen=True, eq=False)
class CommonRefinement:
    breakpoints: np.ndarray
    parent_a: np.ndarray
    parent_b: np.ndarray
    local_a: np.ndarray
    local_b: np.ndarray

    @property
    def n_segments(self) -> int:
        return int(self.breakpoints.size - 1)

    @property
    def segment_lengths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def length(self) -> float:
        return float(self.breakpoints[-1] - self.breakpoints[0])


@dataclass(frozen=True, eq=False)
class MortarInterface:
    """One side of a collapsed layer: external trace, shell trace and multiplier space.

    The external trace must already run in the shell's direction.
    """

    name: str
    side: int
    external: TraceMesh
    shell: TraceMesh
    space: MultiplierSpace

    @classmethod
    def build(cls, name: str, side: int, external: TraceMesh, shell: TraceMesh) -> "MortarInterface":
        return cls(name, side, external, shell, MultiplierSpace(shell, side))

    @property
    def conforming(self) -> bool:
        return self.external.n_nodes == self.shell.n_nodes and bool(
            np.all(np.abs(self.external.s - self.shell.s) <= GEOM_TOL)
        )


@dataclass(frozen=True, eq=False)
class CouplingBlocks:
    """Coupling matrices of one side placed in the global numbering."""

    interface: MortarInterface
    D_ext: sp.csr_matrix
    D_shell: sp.csr_matrix
    ext_dofs: np.ndarray
    shell_dofs: np.ndarray
    multiplier_dofs: np.ndarray


@dataclass(frozen=True, eq=False)
class SaddleCoupling:
    """Transposed constraint blocks: rows are temperature DoFs, columns multipliers."""

    B_ext: sp.csr_matrix
    B_shell: sp.csr_matrix

    def symmetric(self) -> sp.csr_matrix:
        B = (self.B_ext + self.B_shell).tocsr()
        return (B + B.T).tocsr()


@dataclass(frozen=True, eq=False)
class ConformalIdentification:
    """Shell node i of the given sheet is the volume node volume_nodes[i]."""

    name: str
    side: int
    shell_nodes: np.ndarray
    volume_nodes: np.ndarray


#####################################
# Operations
#####################################


def common_refinement(trace_a: TraceMesh, trace_b: TraceMesh, tol: float = GEOM_TOL) -> CommonRefinement:
    """Merge both breakpoint sets along the shared arc-length coordinate."""
    sa, sb = trace_a.s, trace_b.s
    if abs(sa[0] - sb[0]) > tol or abs(sa[-1] - sb[-1]) > tol:
        raise MortarError(
            f"trace endpoints do not match: [{sa[0]:.17g}, {sa[-1]:.17g}] vs [{sb[0]:.17g}, {sb[-1]:.17g}]"
        )
    merged = np.sort(np.concatenate([sa, sb]), kind="stable")
    keep = np.concatenate([[True], np.diff(merged) > tol])
    bp = merged[keep].copy()
    if bp.size < 2:
        raise MortarError("common refinement is empty")
    bp[0], bp[-1] = sa[0], sa[-1]

    mid = 0.5 * (bp[:-1] + bp[1:])

    def _parents(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        parent = np.clip(np.searchsorted(s, mid) - 1, 0, s.size - 2)
        h = s[parent + 1] - s[parent]
        local = np.column_stack([(bp[:-1] - s[parent]) / h, (bp[1:] - s[parent]) / h])
        return parent, np.clip(local, 0.0, 1.0)

    parent_a, local_a = _parents(sa)
    parent_b, local_b = _parents(sb)
    return CommonRefinement(bp, parent_a, parent_b, local_a, local_b)


def coupling_matrix(
    trace_a: TraceMesh, trace_b: TraceMesh, refinement: CommonRefinement | None = None
) -> sp.csr_matrix:
    """Entries of the integral of phi_i(a) phi_j(b) ds, rows on trace_a, columns on trace_b."""
    ref = refinement if refinement is not None else common_refinement(trace_a, trace_b)
    if ref.n_segments < 1:
        raise MortarError("common refinement is empty")
    lengths = ref.segment_lengths
    builder = SparseBuilder((trace_a.n_nodes, trace_b.n_nodes))
    rows = ref.parent_a[:, None] + np.arange(2)
    cols = ref.parent_b[:, None] + np.arange(2)
    for g in range(GAUSS_T.size):
        t = GAUSS_T[g]
        xa = ref.local_a[:, 0] + t * (ref.local_a[:, 1] - ref.local_a[:, 0])
        xb = ref.local_b[:, 0] + t * (ref.local_b[:, 1] - ref.local_b[:, 0])
        phi_a = np.column_stack([1.0 - xa, xa])
        phi_b = np.column_stack([1.0 - xb, xb])
        vals = (GAUSS_W[g] * lengths)[:, None, None] * phi_a[:, :, None] * phi_b[:, None, :]
        builder.add(rows[:, :, None], cols[:, None, :], vals)
    return builder.finalize()


def assemble_coupling(interface: MortarInterface) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """D_ext (multipliers x external trace) and D_shell (multipliers x shell trace)."""
    carrier = interface.space.carrier
    D_ext = coupling_matrix(carrier, interface.external)
    D_shell = coupling_matrix(carrier, interface.shell)
    logger.debug(
        f"Coupling '{interface.name}' side {interface.side}: "
        f"{carrier.n_nodes} multipliers, {interface.external.n_nodes} external trace nodes"
    )
    return D_ext, D_shell


def modified_interface_blocks(blocks: Sequence[CouplingBlocks], n_total: int) -> SaddleCoupling:
    """Global transposed constraint blocks for every coupled side."""
    ext = SparseBuilder((n_total, n_total))
    shell = SparseBuilder((n_total, n_total))
    for block in blocks:
        d_ext = block.D_ext.tocoo()
        ext.add(block.ext_dofs[d_ext.col], block.multiplier_dofs[d_ext.row], d_ext.data)
        d_shell = block.D_shell.tocoo()
        shell.add(block.shell_dofs[d_shell.col], block.multiplier_dofs[d_shell.row], -d_shell.data)
    return SaddleCoupling(ext.finalize(), shell.finalize())


def eliminate_conformal(interface: MortarInterface) -> ConformalIdentification:
    """Identify the shell sheet on this side with the external trace nodes."""
    if not interface.conforming:
        raise MortarError(
            f"interface '{interface.name}' side {interface.side} is not conforming: "
            f"{interface.external.n_nodes} external vs {interface.shell.n_nodes} shell nodes"
        )
    return ConformalIdentification(
        interface.name,
        interface.side,
        np.arange(interface.shell.n_nodes),
        interface.external.node_ids.copy(),
    )
