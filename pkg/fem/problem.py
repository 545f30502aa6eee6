"""
problem.py - one assembled heat problem: mesh, physics and DoF layout.

A ThermalProblem owns every piece that does not change during a run:
the DoF map, the Dirichlet/identification reduction, the mortar coupling
and the Robin pair. assemble(x_star) adds the property-dependent blocks
(volume K, M, f and the shell blocks) at a Picard iterate.

Global DoF order: volume temperatures, then the sheets of each interface
(sheet-major), then the multipliers of each interface side that was not
eliminated.
"""

#####################################
# Import Modules
#####################################

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from fem.assembly import (
    DIRICHLET,
    VOLUME,
    BoundaryCondition,
    DofMap,
    DofReduction,
    assemble_robin,
    assemble_volume,
    check_boundary_conditions,
    dirichlet_dofs,
    merge_fixed,
    multiplier_family,
    sheets_family,
)
from fem.errors import AssemblyError, MortarError
from fem.materials import Material, SourceSpec
from fem.mesh import (
    GEOM_TOL,
    SIDE_EXTERNAL_1,
    SIDE_EXTERNAL_2,
    SIDE_VIRTUAL,
    CollapsedInterface,
    Mesh,
    TraceMesh,
    check_paired,
    extract_trace,
)
from fem.mortar import (
    CouplingBlocks,
    MortarInterface,
    assemble_coupling,
    eliminate_conformal,
    modified_interface_blocks,
)
from fem.tsa import SheetField, TsaStack, assemble_tsa
from utils.utils_logger import logger

#####################################
# Interfaces
#####################################


@dataclass(frozen=True, eq=False)
class InterfaceModel:
    collapsed: CollapsedInterface
    stack: TsaStack
    shell: TraceMesh
    sides: tuple[MortarInterface, MortarInterface]
    eliminated: tuple[bool, bool]

    @property
    def name(self) -> str:
        return self.collapsed.name

    @property
    def n_hat(self) -> int:
        return self.shell.n_nodes

    def sheet_index(self, side: int) -> int:
        return 0 if side == 1 else self.stack.n_layers

    def sheet_points(self, j: int) -> np.ndarray:
        """Physical positions of sheet j: the shell trace moved w_j along the normal."""
        offset = np.asarray(self.collapsed.normal) * self.stack.breakpoints[j]
        return self.shell.points + offset


def align_to(reference: TraceMesh, other: TraceMesh, offset: np.ndarray) -> TraceMesh:
    """Return other, reversed if needed, so it runs in reference's direction."""
    forward = np.hypot(*(other.points[0] - reference.points[0] - offset))
    backward = np.hypot(*(other.points[-1] - reference.points[0] - offset))
    return other if forward <= backward else other.reversed()


def shell_trace(side1: TraceMesh, side2: TraceMesh) -> TraceMesh:
    """Shell trace on side 1's location using the finer side's nodes (ties go to side 1)."""
    finer = side2 if side2.n_nodes > side1.n_nodes else side1
    s = finer.s.copy()
    s[0], s[-1] = side1.s[0], side1.s[-1]
    return TraceMesh(finer.node_ids, s, side1.point_at(s), side=SIDE_VIRTUAL)


def build_interface(
    mesh: Mesh, collapsed: CollapsedInterface, stack: TsaStack, eliminate: bool = False
) -> InterfaceModel:
    if abs(stack.thickness - collapsed.thickness) > GEOM_TOL + 1e-12 * collapsed.thickness:
        raise AssemblyError(
            f"stack '{stack.name}' is {stack.thickness:.17g} m thick, "
            f"interface '{collapsed.name}' is {collapsed.thickness:.17g} m"
        )
    side1 = extract_trace(mesh, mesh.curve_tag(collapsed.side1_curve), SIDE_EXTERNAL_1)
    side2_raw = extract_trace(mesh, mesh.curve_tag(collapsed.side2_curve), SIDE_EXTERNAL_2)
    offset = np.asarray(collapsed.normal) * collapsed.thickness
    side2 = align_to(side1, side2_raw, offset)
    check_paired(side1, side2, offset)

    shell = shell_trace(side1, side2)
    sides = (
        MortarInterface.build(collapsed.name, 1, side1, shell),
        MortarInterface.build(collapsed.name, 2, side2, shell),
    )
    eliminated = (False, False)
    if eliminate:
        eliminated = tuple(side.conforming for side in sides)
        for side, done in zip(sides, eliminated):
            if not done:
                logger.warning(
                    f"Interface '{collapsed.name}' side {side.side} is not conforming; keeping its multiplier."
                )
    logger.info(
        f"Interface '{collapsed.name}': side traces {side1.n_nodes}/{side2.n_nodes} nodes, "
        f"shell {shell.n_nodes} nodes, {stack.n_layers} layer(s)"
    )
    return InterfaceModel(collapsed, stack, shell, sides, eliminated)


#####################################
# Assembled System
#####################################


@dataclass(frozen=True, eq=False)
class GlobalSystem:
    """K (with Robin and coupling), M and right-hand side at one iterate."""

    K: sp.csr_matrix
    M: sp.csr_matrix
    f: np.ndarray
    source: np.ndarray
    R: sp.csr_matrix
    r: np.ndarray


@dataclass(frozen=True, eq=False)
class ThermalProblem:
    mesh: Mesh
    mode: str
    materials: Mapping[int, Material]
    source: SourceSpec
    bcs: tuple[BoundaryCondition, ...]
    interfaces: tuple[InterfaceModel, ...]
    dofmap: DofMap
    reduction: DofReduction
    coupling: sp.csr_matrix
    couplings: tuple[CouplingBlocks, ...]
    R: sp.csr_matrix
    r: np.ndarray

    @property
    def n_dofs(self) -> int:
        return self.dofmap.n_total

    @property
    def is_linear(self) -> bool:
        used = set(np.unique(self.mesh.triangle_tags).tolist())
        volume_linear = all(self.materials[tag].is_constant for tag in used)
        return volume_linear and all(iface.stack.is_linear for iface in self.interfaces)

    def volume(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[self.dofmap.slice(VOLUME)]

    def sheets(self, x: np.ndarray, iface: InterfaceModel) -> SheetField:
        dofs = np.asarray(x)[self.dofmap.slice(sheets_family(iface.name))]
        return SheetField.from_dofs(dofs, iface.stack.n_sheets)

    def multipliers(self, x: np.ndarray, iface: InterfaceModel, side: int) -> np.ndarray:
        return np.asarray(x)[self.dofmap.slice(multiplier_family(iface.name, side))]

    def interface(self, name: str) -> InterfaceModel:
        for iface in self.interfaces:
            if iface.name == name:
                return iface
        raise AssemblyError(f"unknown interface '{name}'")

    def initial_vector(self, t0: float) -> np.ndarray:
        """Uniform t0 on every temperature DoF, zero multipliers, Dirichlet values imposed."""
        x = np.where(self.dofmap.temperature_mask, float(t0), 0.0)
        fixed = self.reduction.fixed
        x[fixed] = self.reduction.lift[fixed]
        return x

    def assemble(self, x_star: np.ndarray) -> GlobalSystem:
        x_star = np.asarray(x_star, dtype=float)
        if x_star.shape != (self.n_dofs,):
            raise AssemblyError(f"iterate has shape {x_star.shape}, expected ({self.n_dofs},)")
        vol = assemble_volume(self.mesh, self.materials, self.source, self.volume(x_star))
        K_parts = [vol.K + self.R]
        M_parts = [vol.M]
        f_parts = [vol.f]
        for iface in self.interfaces:
            blocks = assemble_tsa(iface.shell, iface.stack, sheets=self.sheets(x_star, iface))
            K_parts.append(blocks.K)
            M_parts.append(blocks.M)
            f_parts.append(blocks.f)
        n_temp = sum(len(f) for f in f_parts)
        n_mult = self.n_dofs - n_temp
        if n_mult:
            K_parts.append(sp.csr_matrix((n_mult, n_mult)))
            M_parts.append(sp.csr_matrix((n_mult, n_mult)))
            f_parts.append(np.zeros(n_mult))
        K = (sp.block_diag(K_parts, format="csr") + self.coupling).tocsr()
        M = sp.block_diag(M_parts, format="csr")
        source = np.concatenate(f_parts)
        r_full = np.zeros(self.n_dofs)
        r_full[self.dofmap.slice(VOLUME)] = self.r
        return GlobalSystem(K, M, source + r_full, source, self.R, self.r)


#####################################
# Construction
#####################################


def _end_dirichlet(
    iface: InterfaceModel, bcs: Sequence[BoundaryCondition], offset: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Sheet DoFs fixed by Dirichlet conditions on the curves closing the layer."""
    by_curve = {bc.curve: bc for bc in bcs if bc.kind == DIRICHLET}
    parts = []
    n = iface.n_hat
    for end, curve in zip((0, n - 1), iface.collapsed.end_curves):
        bc = by_curve.get(curve) if curve is not None else None
        if bc is None:
            continue
        for j in range(iface.stack.n_sheets):
            point = iface.sheet_points(j)[end]
            parts.append((np.array([offset + j * n + end]), bc.dirichlet_values(point)))
    return parts


def _merge_held_ends(couplings: Sequence[CouplingBlocks], fixed: set[int]) -> dict[int, int]:
    """Multiplier ends to merge into their neighbour.

    Where Dirichlet data holds both the external trace end node and the sheet
    end DoF, the full P1 multiplier space can be rank-deficient. The end basis
    function is merged into its neighbour, which keeps constants in the space.
    """
    merged: dict[int, int] = {}
    for block in couplings:
        n = block.multiplier_dofs.size
        for end, ext_end, neighbour in ((0, 0, 1), (n - 1, -1, n - 2)):
            # the external trace may be coarser than the shell
            if int(block.shell_dofs[end]) not in fixed or int(block.ext_dofs[ext_end]) not in fixed:
                continue
            if n < 3:
                raise MortarError(
                    f"interface '{block.interface.name}' side {block.interface.side}: "
                    "both ends are held by Dirichlet data on a shell with fewer than three nodes"
                )
            merged[int(block.multiplier_dofs[end])] = int(block.multiplier_dofs[neighbour])
    return merged


def build_problem(
    mesh: Mesh,
    materials: Mapping[int, Material],
    source: SourceSpec,
    bcs: Sequence[BoundaryCondition],
    stacks: Mapping[str, TsaStack] | None = None,
    eliminate: Mapping[str, bool] | None = None,
    mode: str = "mortar_tsa",
) -> ThermalProblem:
    """Assemble the run-constant parts of a heat problem.

    stacks maps interface names to their TSA stacks; every collapsed
    interface of the mesh needs one.
    """
    bcs = tuple(bcs)
    stacks = dict(stacks or {})
    eliminate = dict(eliminate or {})
    check_boundary_conditions(mesh, bcs)

    interfaces = []
    for name, collapsed in mesh.interfaces.items():
        if name not in stacks:
            raise AssemblyError(f"collapsed interface '{name}' has no TSA stack")
        interfaces.append(build_interface(mesh, collapsed, stacks[name], eliminate.get(name, False)))
    unused = sorted(set(stacks) - set(mesh.interfaces))
    if unused:
        logger.debug(f"Ignoring TSA stack(s) without a collapsed interface: {', '.join(unused)}")

    sizes: list[tuple[str, int]] = [(VOLUME, mesh.n_nodes)]
    for iface in interfaces:
        sizes.append((sheets_family(iface.name), iface.stack.n_sheets * iface.n_hat))
    for iface in interfaces:
        for side, done in zip((1, 2), iface.eliminated):
            sizes.append((multiplier_family(iface.name, side), 0 if done else iface.n_hat))
    dofmap = DofMap.build(sizes)

    couplings = []
    identify: dict[int, int] = {}
    fixed_parts = [dirichlet_dofs(mesh, bcs)]
    for iface in interfaces:
        sheet_offset = dofmap.family(sheets_family(iface.name)).offset
        fixed_parts.extend(_end_dirichlet(iface, bcs, sheet_offset))
        for side_model, done in zip(iface.sides, iface.eliminated):
            j = iface.sheet_index(side_model.side)
            shell_dofs = sheet_offset + j * iface.n_hat + np.arange(iface.n_hat)
            if done:
                ident = eliminate_conformal(side_model)
                for i, node in zip(ident.shell_nodes.tolist(), ident.volume_nodes.tolist()):
                    identify[int(shell_dofs[i])] = int(node)
                continue
            D_ext, D_shell = assemble_coupling(side_model)
            lam = dofmap.family(multiplier_family(iface.name, side_model.side))
            couplings.append(
                CouplingBlocks(
                    side_model,
                    D_ext,
                    D_shell,
                    side_model.external.node_ids.copy(),
                    shell_dofs,
                    lam.offset + np.arange(lam.size),
                )
            )
    fixed_idx, fixed_vals = merge_fixed(fixed_parts)
    merged = _merge_held_ends(couplings, set(fixed_idx.tolist()))
    identify.update(merged)
    dofmap = dofmap.with_dirichlet(fixed_idx)
    reduction = DofReduction.build(dofmap.n_total, fixed_idx, fixed_vals, identify)
    coupling = modified_interface_blocks(couplings, dofmap.n_total).symmetric()
    R, r = assemble_robin(mesh, bcs)

    logger.info(
        f"Problem ({mode}): {dofmap.n_total} DoFs "
        + ", ".join(f"{name}={size}" for name, size in dofmap.counts().items())
        + f"; {fixed_idx.size} fixed, {len(identify) - len(merged)} identified, "
        + f"{len(merged)} end multiplier(s) merged"
    )
    return ThermalProblem(
        mesh=mesh,
        mode=mode,
        materials=dict(materials),
        source=source,
        bcs=bcs,
        interfaces=tuple(interfaces),
        dofmap=dofmap,
        reduction=reduction,
        coupling=coupling,
        couplings=tuple(couplings),
        R=R,
        r=r,
    )


def materials_by_tag(mesh: Mesh, by_name: Mapping[str, Material]) -> dict[int, Material]:
    """Translate region names to tags; names absent from the mesh are skipped."""
    out = {}
    for name, material in by_name.items():
        if name in mesh.regions:
            out[mesh.regions[name]] = material
    missing = [name for name in mesh.regions if mesh.regions[name] not in out]
    if missing:
        raise AssemblyError(f"region '{missing[0]}' has no material")
    return out
