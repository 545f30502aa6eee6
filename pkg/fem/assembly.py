"""
assembly.py - P1 finite-element assembly of the volume heat problem.

Builds the stiffness K(T*), consistent mass M(T*) and load f on triangles,
the Robin boundary pair (R, r) on edges, the global DoF layout shared with
the thin-shell and mortar blocks, and the reduction that removes Dirichlet
and identified DoFs from a system.

Material properties are evaluated once per element at the centroid
temperature (mean of the three vertex values of T*).
"""

#####################################
# Import Modules
#####################################

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from fem.errors import AssemblyError, MeshError
from fem.materials import Material, SourceSpec
from fem.mesh import Mesh
from utils.utils_logger import logger

#####################################
# Default Configurations
#####################################

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
ROBIN = "robin"
BC_KINDS = (DIRICHLET, NEUMANN, ROBIN)

# Dirichlet values closer than this (K) at one DoF are the same value
DIRICHLET_TOL = 1e-12

VOLUME = "volume"

# Two-point Gauss rule on [0, 1]
GAUSS_T = 0.5 + 0.5 * np.polynomial.legendre.leggauss(2)[0]
GAUSS_W = 0.5 * np.polynomial.legendre.leggauss(2)[1]

_MASS_PATTERN = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]])


def sheets_family(interface: str) -> str:
    return f"sheets:{interface}"


def multiplier_family(interface: str, side: int) -> str:
    return f"lambda{side}:{interface}"


#####################################
# P1 Element
#####################################


def p1_elements(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Areas (m,) and shape-function gradients (m, 3, 2) for stacked triangles (m, 3, 2)."""
    coords = np.asarray(coords, dtype=float)
    x, y = coords[..., 0], coords[..., 1]
    twice_area = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    bad = np.flatnonzero(~(twice_area > 0.0))
    if bad.size:
        raise AssemblyError(f"element {int(bad[0])} has zero or negative area")
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    grads = np.stack([b, c], axis=2) / twice_area[:, None, None]
    return 0.5 * twice_area, grads


def p1_element(coords: np.ndarray) -> tuple[float, np.ndarray]:
    """Area and (3, 2) gradients of one triangle given its (3, 2) vertex coordinates."""
    areas, grads = p1_elements(np.asarray(coords, dtype=float)[None, :, :])
    return float(areas[0]), grads[0]


#####################################
# Sparse Accumulation
#####################################


def _sorted_sum(
    rows: np.ndarray, cols: np.ndarray, vals: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sum duplicate (row, col) entries in a fixed order, independent of input order."""
    if rows.size == 0:
        return rows, cols, vals
    order = np.lexsort((vals, cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    start = np.concatenate([[True], (np.diff(rows) != 0) | (np.diff(cols) != 0)])
    idx = np.flatnonzero(start)
    return rows[idx], cols[idx], np.add.reduceat(vals, idx)


class SparseBuilder:
    """Triplet accumulator finalized into CSR with deterministic summation."""

    def __init__(self, shape: tuple[int, int]) -> None:
        self.shape = (int(shape[0]), int(shape[1]))
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []

    def add(self, rows, cols, vals) -> None:
        r, c, v = np.broadcast_arrays(
            np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64), np.asarray(vals, dtype=float)
        )
        self._rows.append(r.ravel())
        self._cols.append(c.ravel())
        self._vals.append(v.ravel())

    def add_local(self, dofs: np.ndarray, local: np.ndarray) -> None:
        """Scatter stacked local matrices local[e] (k, k) onto dofs[e] (k,)."""
        dofs = np.asarray(dofs, dtype=np.int64)
        k = dofs.shape[1]
        self.add(
            np.repeat(dofs, k, axis=1),
            np.tile(dofs, (1, k)),
            np.asarray(local, dtype=float).reshape(len(dofs), k * k),
        )

    def add_block(self, row_offset: int, col_offset: int, block: sp.spmatrix) -> None:
        coo = sp.coo_matrix(block)
        self.add(coo.row + row_offset, coo.col + col_offset, coo.data)

    def finalize(self) -> sp.csr_matrix:
        if self._rows:
            rows = np.concatenate(self._rows)
            cols = np.concatenate(self._cols)
            vals = np.concatenate(self._vals)
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
        if rows.size and (
            rows.min() < 0 or cols.min() < 0 or rows.max() >= self.shape[0] or cols.max() >= self.shape[1]
        ):
            raise AssemblyError(f"triplet index outside a {self.shape[0]}x{self.shape[1]} matrix")
        rows, cols, vals = _sorted_sum(rows, cols, vals)
        return sp.csr_matrix((vals, (rows, cols)), shape=self.shape)


def assemble_vector(dofs: np.ndarray, values: np.ndarray, size: int) -> np.ndarray:
    rows = np.asarray(dofs, dtype=np.int64).ravel()
    vals = np.broadcast_to(np.asarray(values, dtype=float), np.asarray(dofs).shape).ravel()
    rows, _, vals = _sorted_sum(rows, np.zeros_like(rows), vals)
    out = np.zeros(size)
    out[rows] = vals
    return out


#####################################
# DoF Layout
#####################################


@dataclass(frozen=True)
class DofFamily:
    name: str
    offset: int
    size: int

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.size)


@dataclass(frozen=True, eq=False)
class DofMap:
    """Contiguous DoF families in a fixed order: volume, sheets, multipliers."""

    families: tuple[DofFamily, ...]
    dirichlet: np.ndarray

    @classmethod
    def build(cls, sizes: Sequence[tuple[str, int]]) -> "DofMap":
        families = []
        offset = 0
        seen = set()
        for name, size in sizes:
            if name in seen:
                raise AssemblyError(f"duplicate DoF family '{name}'")
            if size < 0:
                raise AssemblyError(f"DoF family '{name}' has negative size")
            seen.add(name)
            families.append(DofFamily(name, offset, int(size)))
            offset += int(size)
        return cls(tuple(families), np.zeros(offset, dtype=bool))

    @property
    def n_total(self) -> int:
        return sum(f.size for f in self.families)

    def family(self, name: str) -> DofFamily:
        for fam in self.families:
            if fam.name == name:
                return fam
        raise AssemblyError(f"unknown DoF family '{name}'")

    def has(self, name: str) -> bool:
        return any(f.name == name for f in self.families)

    def slice(self, name: str) -> slice:
        return self.family(name).slice

    def counts(self) -> dict[str, int]:
        return {f.name: f.size for f in self.families}

    @property
    def temperature_mask(self) -> np.ndarray:
        """True on volume and sheet DoFs, False on multipliers."""
        mask = np.zeros(self.n_total, dtype=bool)
        for fam in self.families:
            if not fam.name.startswith("lambda"):
                mask[fam.slice] = True
        return mask

    def with_dirichlet(self, indices: np.ndarray) -> "DofMap":
        flags = np.zeros(self.n_total, dtype=bool)
        flags[np.asarray(indices, dtype=np.int64)] = True
        flags.flags.writeable = False
        return DofMap(self.families, flags)


#####################################
# Boundary Conditions
#####################################


@dataclass(frozen=True)
class BoundaryCondition:
    """One condition on one named curve.

    Dirichlet data is value + gradient . (x - origin); Robin uses the flux
    h (T - t_ref) leaving the domain.
    """

    kind: str
    curve: str
    value: float = 0.0
    gradient: tuple[float, float] = (0.0, 0.0)
    origin: tuple[float, float] = (0.0, 0.0)
    h: float = 0.0
    t_ref: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in BC_KINDS:
            raise AssemblyError(f"boundary '{self.curve}': unknown kind '{self.kind}'")
        numbers = (self.value, *self.gradient, *self.origin, self.h, self.t_ref)
        if not all(math.isfinite(v) for v in numbers):
            raise AssemblyError(f"boundary '{self.curve}': data must be finite")
        if self.h < 0.0:
            raise AssemblyError(f"boundary '{self.curve}': h must be >= 0")

    @classmethod
    def dirichlet(
        cls,
        curve: str,
        value: float,
        gradient: tuple[float, float] = (0.0, 0.0),
        origin: tuple[float, float] = (0.0, 0.0),
    ) -> "BoundaryCondition":
        return cls(DIRICHLET, curve, float(value), tuple(gradient), tuple(origin))

    @classmethod
    def neumann(cls, curve: str) -> "BoundaryCondition":
        return cls(NEUMANN, curve)

    @classmethod
    def robin(cls, curve: str, h: float, t_ref: float) -> "BoundaryCondition":
        return cls(ROBIN, curve, h=float(h), t_ref=float(t_ref))

    def dirichlet_values(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return self.value + (pts - np.asarray(self.origin)) @ np.asarray(self.gradient)


def check_boundary_conditions(mesh: Mesh, bcs: Iterable[BoundaryCondition]) -> None:
    """Every condition names a declared curve and no curve carries two conditions."""
    seen: dict[str, str] = {}
    for bc in bcs:
        if bc.curve not in mesh.curves:
            raise AssemblyError(f"boundary condition on unknown curve '{bc.curve}'")
        if bc.curve in seen:
            kinds = {seen[bc.curve], bc.kind}
            if kinds == {ROBIN, DIRICHLET}:
                raise AssemblyError(f"curve '{bc.curve}' has both a Robin and a Dirichlet condition")
            raise AssemblyError(f"curve '{bc.curve}' has more than one boundary condition")
        seen[bc.curve] = bc.kind


def merge_fixed(
    parts: Iterable[tuple[np.ndarray, np.ndarray]], tol: float = DIRICHLET_TOL
) -> tuple[np.ndarray, np.ndarray]:
    """Union of (indices, values) pairs; one DoF may not receive two different values."""
    values: dict[int, float] = {}
    for idx, vals in parts:
        for i, v in zip(np.asarray(idx).tolist(), np.asarray(vals, dtype=float).tolist()):
            old = values.get(i)
            if old is not None and abs(old - v) > tol:
                logger.error(f"Conflicting Dirichlet values at DoF {i}: {old} and {v}")
                raise AssemblyError(f"conflicting Dirichlet values at DoF {i}: {old:.17g} vs {v:.17g}")
            values.setdefault(i, v)
    keys = np.array(sorted(values), dtype=np.int64)
    return keys, np.array([values[k] for k in keys.tolist()], dtype=float)


def dirichlet_dofs(mesh: Mesh, bcs: Iterable[BoundaryCondition]) -> tuple[np.ndarray, np.ndarray]:
    """Volume DoFs fixed by Dirichlet curves and their values."""
    parts = []
    for bc in bcs:
        if bc.kind != DIRICHLET:
            continue
        nodes = mesh.curve_nodes(mesh.curve_tag(bc.curve))
        parts.append((nodes, bc.dirichlet_values(mesh.nodes[nodes])))
    return merge_fixed(parts)


#####################################
# Volume and Robin Blocks
#####################################


@dataclass(frozen=True, eq=False)
class SystemBlocks:
    K: sp.csr_matrix
    M: sp.csr_matrix
    f: np.ndarray
    R: sp.csr_matrix
    r: np.ndarray


def assemble_robin(mesh: Mesh, bcs: Iterable[BoundaryCondition]) -> tuple[sp.csr_matrix, np.ndarray]:
    """Boundary mass h<T, T'> and load h T_ref <1, T'> on Robin curves."""
    bcs = list(bcs)
    dirichlet_curves = {bc.curve for bc in bcs if bc.kind == DIRICHLET}
    n = mesh.n_nodes
    builder = SparseBuilder((n, n))
    r = np.zeros(n)
    phi = np.stack([1.0 - GAUSS_T, GAUSS_T], axis=1)
    mass_ref = np.einsum("g,gi,gj->ij", GAUSS_W, phi, phi)
    load_ref = GAUSS_W @ phi
    for bc in bcs:
        if bc.kind != ROBIN:
            continue
        if bc.curve in dirichlet_curves:
            raise AssemblyError(f"Robin curve '{bc.curve}' is also a Dirichlet curve")
        try:
            edges = mesh.curve_edges(mesh.curve_tag(bc.curve))
        except MeshError as e:
            raise AssemblyError(str(e)) from e
        if bc.h == 0.0 or edges.size == 0:
            continue
        length = np.hypot(*(mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]]).T)
        builder.add_local(edges, bc.h * length[:, None, None] * mass_ref)
        r += assemble_vector(edges, bc.h * bc.t_ref * length[:, None] * load_ref, n)
    return builder.finalize(), r


def assemble_volume(
    mesh: Mesh,
    materials: Mapping[int, Material],
    source: SourceSpec,
    T_star: np.ndarray,
    bcs: Iterable[BoundaryCondition] = (),
) -> SystemBlocks:
    """K, M and f at the iterate T*, plus the Robin pair for the given conditions."""
    T_star = np.asarray(T_star, dtype=float)
    if T_star.shape != (mesh.n_nodes,):
        raise AssemblyError(f"T* has shape {T_star.shape}, expected ({mesh.n_nodes},)")
    if not np.all(np.isfinite(T_star)):
        raise AssemblyError("T* contains non-finite values")
    tags = mesh.triangle_tags
    missing = sorted(set(np.unique(tags).tolist()) - set(materials))
    if missing:
        raise AssemblyError(
            f"no material assigned to region {mesh.region_name(missing[0])} (tag {missing[0]})"
        )

    tri = mesh.triangles
    areas, grads = p1_elements(mesh.nodes[tri])
    centroid_T = T_star[tri].mean(axis=1)
    kappa = np.empty(len(tri))
    c_v = np.empty(len(tri))
    for tag in np.unique(tags).tolist():
        sel = tags == tag
        material = materials[tag]
        kappa[sel] = material.kappa.eval(centroid_T[sel])
        c_v[sel] = material.c_v.eval(centroid_T[sel])

    n = mesh.n_nodes
    k_local = (kappa * areas)[:, None, None] * np.einsum("mik,mjk->mij", grads, grads)
    # each element row sums to zero up to one rounding, so conduction conserves energy
    diag = np.arange(3)
    k_local[:, diag, diag] = 0.0
    k_local[:, diag, diag] = -k_local.sum(axis=2)
    m_local = (c_v * areas / 12.0)[:, None, None] * _MASS_PATTERN
    q = source.per_triangle(tags)
    k_builder = SparseBuilder((n, n))
    k_builder.add_local(tri, k_local)
    m_builder = SparseBuilder((n, n))
    m_builder.add_local(tri, m_local)
    f = assemble_vector(tri, np.repeat((q * areas / 3.0)[:, None], 3, axis=1), n)
    R, r = assemble_robin(mesh, bcs)
    return SystemBlocks(k_builder.finalize(), m_builder.finalize(), f, R, r)


#####################################
# Dirichlet Elimination and Identification
#####################################


@dataclass(frozen=True, eq=False)
class DofReduction:
    """Full vector x = P y + lift, with y the independent unknowns."""

    P: sp.csr_matrix
    lift: np.ndarray
    fixed: np.ndarray
    representatives: np.ndarray
    identified: int = 0

    @classmethod
    def build(
        cls,
        n_full: int,
        fixed_dofs: np.ndarray = (),
        fixed_values: np.ndarray = (),
        identify: Mapping[int, int] | None = None,
        tol: float = DIRICHLET_TOL,
    ) -> "DofReduction":
        """identify maps a DoF onto the DoF that represents it; targets are never sources."""
        fixed = np.zeros(n_full, dtype=bool)
        value = np.zeros(n_full)
        idx = np.asarray(fixed_dofs, dtype=np.int64)
        fixed[idx] = True
        value[idx] = np.asarray(fixed_values, dtype=float)

        rep = np.arange(n_full)
        pairs = sorted((identify or {}).items())
        sources = {s for s, _ in pairs}
        for src, dst in pairs:
            if dst in sources:
                raise AssemblyError(f"DoF {dst} is identified onto another DoF and cannot be a target")
            if fixed[src] and fixed[dst]:
                if abs(value[src] - value[dst]) > tol:
                    raise AssemblyError(
                        f"conflicting Dirichlet values on identified DoFs {src} and {dst}: "
                        f"{value[src]:.17g} vs {value[dst]:.17g}"
                    )
            elif fixed[src]:
                fixed[dst] = True
                value[dst] = value[src]
            rep[src] = dst
        for src, dst in pairs:
            fixed[src] = fixed[dst]
            value[src] = value[dst]

        identity = np.arange(n_full)
        free_reps = np.flatnonzero((rep == identity) & ~fixed)
        column = np.full(n_full, -1, dtype=np.int64)
        column[free_reps] = np.arange(free_reps.size)
        rows = np.flatnonzero(~fixed)
        P = sp.csr_matrix(
            (np.ones(rows.size), (rows, column[rep[rows]])), shape=(n_full, free_reps.size)
        )
        lift = np.where(fixed, value, 0.0)
        fixed.flags.writeable = False
        free_reps.flags.writeable = False
        return cls(P, lift, fixed, free_reps, identified=len(pairs))

    @property
    def n_full(self) -> int:
        return int(self.P.shape[0])

    @property
    def n_free(self) -> int:
        return int(self.P.shape[1])

    @property
    def is_identity(self) -> bool:
        return self.identified == 0 and not self.fixed.any()

    def reduce(self, A: sp.spmatrix, b: np.ndarray) -> tuple[sp.csr_matrix, np.ndarray]:
        """Symmetric reduction: Pt A P and Pt (b - A lift)."""
        if self.is_identity:
            return sp.csr_matrix(A), np.asarray(b, dtype=float)
        A = sp.csr_matrix(A)
        Pt = self.P.T.tocsr()
        reduced = (Pt @ (A @ self.P)).tocsr()
        reduced = ((reduced + reduced.T) * 0.5).tocsr()
        rhs = Pt @ (np.asarray(b, dtype=float) - A @ self.lift)
        return reduced, rhs

    def expand(self, y: np.ndarray) -> np.ndarray:
        return self.P @ np.asarray(y, dtype=float) + self.lift

    def restrict(self, x: np.ndarray) -> np.ndarray:
        """Independent unknowns of x, read at the representative DoFs."""
        return np.asarray(x, dtype=float)[self.representatives]

    def consistent(self, x: np.ndarray) -> np.ndarray:
        """x with fixed values imposed and identified DoFs copied from their representative."""
        return self.expand(self.restrict(x))


def apply_dirichlet(
    A: sp.spmatrix,
    b: np.ndarray,
    fixed_dofs: np.ndarray,
    fixed_values: np.ndarray,
    identify: Mapping[int, int] | None = None,
) -> tuple[sp.csr_matrix, np.ndarray, DofReduction]:
    """Eliminate fixed DoFs symmetrically; the reduction rebuilds full vectors."""
    reduction = DofReduction.build(A.shape[0], fixed_dofs, fixed_values, identify)
    A_r, b_r = reduction.reduce(A, b)
    return A_r, b_r, reduction
