"""Thin-shell layer matrices and shell assembly."""

import numpy as np
import pytest

from fem.assembly import apply_dirichlet
from fem.errors import AssemblyError
from fem.materials import Material
from fem.mesh import TraceMesh
from fem.tsa import (
    SheetField,
    TsaStack,
    assemble_tsa,
    tsa_1d_matrices,
    tsa_tangential_gradient,
)

KAPTON_LIKE = Material.constant(0.2, 1000.0)


def straight_trace(s):
    s = np.asarray(s, dtype=float)
    return TraceMesh(np.arange(s.size), s, np.column_stack([np.zeros_like(s), s]))


def uniform_sheets(stack, n_trace, value=4.2):
    return np.full((stack.n_sheets, n_trace), value)


def test_uniform_stack_breakpoints():
    stack = TsaStack.uniform("ins", 3e-4, 3, KAPTON_LIKE)
    np.testing.assert_allclose(stack.breakpoints, [0.0, 1e-4, 2e-4, 3e-4])
    assert stack.n_sheets == 4
    assert stack.thickness == pytest.approx(3e-4)
    assert stack.is_linear
    assert stack.include_capacity


def test_invalid_stacks():
    with pytest.raises(AssemblyError, match="at least one layer"):
        TsaStack.uniform("ins", 3e-4, 0, KAPTON_LIKE)
    with pytest.raises(AssemblyError, match="positive thickness"):
        TsaStack.uniform("ins", 0.0, 2, KAPTON_LIKE)
    with pytest.raises(AssemblyError, match="increase strictly"):
        TsaStack.from_thicknesses("ins", [1e-4, 0.0], [KAPTON_LIKE] * 2, [0.0, 0.0])
    with pytest.raises(AssemblyError, match="2 layers but 1 materials"):
        TsaStack.from_thicknesses("ins", [1e-4, 1e-4], [KAPTON_LIKE], [0.0, 0.0])


def test_layer_matrices_for_constant_material():
    stack = TsaStack.uniform("ins", 2e-4, 2, KAPTON_LIKE, q=5e4)
    mats = tsa_1d_matrices(stack, 2, uniform_sheets(stack, 3))
    d = 1e-4
    assert mats.K.shape == (3, 2, 2)
    np.testing.assert_allclose(mats.K[1], 0.2 / d * np.array([[1.0, -1.0], [-1.0, 1.0]]))
    np.testing.assert_allclose(mats.M_kappa[0], 0.2 * d / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(mats.M_cv[2], 1000.0 * d / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(mats.q, 0.5 * 5e4 * d)


def test_capacity_can_be_left_out():
    stack = TsaStack.uniform("ins", 2e-4, 2, KAPTON_LIKE, include_capacity=False)
    mats = tsa_1d_matrices(stack, 1, uniform_sheets(stack, 2))
    assert not mats.M_cv.any()
    blocks = assemble_tsa(straight_trace([0.0, 1.0]), stack, sheets=uniform_sheets(stack, 2))
    assert blocks.M.nnz == 0 or not blocks.M.toarray().any()


def test_layer_properties_use_the_mean_of_its_two_sheets():
    rising = Material.from_table("rises", [(1.0, 1.0, 1.0), (100.0, 100.0, 1.0)])
    stack = TsaStack.uniform("ins", 1e-4, 1, rising)
    mats = tsa_1d_matrices(stack, 1, np.array([[2.0, 2.0], [4.0, 4.0]]))
    np.testing.assert_allclose(mats.K[:, 0, 0], 3.0 / 1e-4, rtol=1e-12)
    assert not stack.is_linear


def test_layer_matrix_arguments_are_checked():
    stack = TsaStack.uniform("ins", 2e-4, 2, KAPTON_LIKE)
    with pytest.raises(AssemblyError, match="layer 3 outside 1..2"):
        tsa_1d_matrices(stack, 3, uniform_sheets(stack, 2))
    with pytest.raises(AssemblyError, match="has 3 sheets"):
        tsa_1d_matrices(stack, 1, np.ones((2, 4)))
    with pytest.raises(AssemblyError, match="non-finite"):
        tsa_1d_matrices(stack, 1, np.full((3, 2), np.nan))


def test_sheet_field_is_sheet_major():
    field = SheetField.from_dofs(np.arange(6.0), 3)
    assert (field.n_sheets, field.n_trace) == (3, 2)
    np.testing.assert_array_equal(field.values[1], [2.0, 3.0])
    with pytest.raises(AssemblyError, match="do not split into 4 sheets"):
        SheetField.from_dofs(np.arange(6.0), 4)


def test_shell_blocks_conserve_and_integrate():
    trace = straight_trace([0.0, 0.4, 1.0, 2.0])
    stack = TsaStack.uniform("ins", 3e-4, 3, KAPTON_LIKE, q=2e4)
    blocks = assemble_tsa(trace, stack, sheets=uniform_sheets(stack, trace.n_nodes))
    size = stack.n_sheets * trace.n_nodes
    assert blocks.K.shape == (size, size)
    np.testing.assert_allclose(blocks.K @ np.ones(size), 0.0, atol=1e-9)
    assert abs(blocks.K - blocks.K.T).max() < 1e-9
    assert blocks.M.sum() == pytest.approx(1000.0 * 3e-4 * 2.0, rel=1e-12)
    assert blocks.f.sum() == pytest.approx(2e4 * 3e-4 * 2.0, rel=1e-12)


def test_series_layers_add_their_resistances():
    trace = straight_trace([0.0, 2.0])
    stack = TsaStack.from_thicknesses(
        "ins", [1e-4, 2e-4], [Material.constant(0.5, 1.0), Material.constant(2.0, 1.0)], [0.0, 0.0]
    )
    blocks = assemble_tsa(trace, stack, sheets=uniform_sheets(stack, 2))
    # sheet 0 held at 0 K, sheet 2 at 1 K on both trace nodes
    fixed = np.array([0, 1, 4, 5])
    A_r, b_r, reduction = apply_dirichlet(blocks.K, np.zeros(6), fixed, np.array([0.0, 0.0, 1.0, 1.0]))
    x = reduction.expand(np.linalg.solve(A_r.toarray(), b_r))
    resistance = 1e-4 / 0.5 + 2e-4 / 2.0
    heat = blocks.K @ x
    assert heat[4:].sum() == pytest.approx(2.0 / resistance, rel=1e-10)
    assert heat[:2].sum() == pytest.approx(-2.0 / resistance, rel=1e-10)
    # the inner sheet sits where the two resistances divide the drop
    np.testing.assert_allclose(x[2:4], (1e-4 / 0.5) / resistance, rtol=1e-10)


def test_linear_through_thickness_profile_has_no_inner_residual():
    trace = straight_trace([0.0, 0.5, 1.0])
    stack = TsaStack.uniform("ins", 4e-4, 4, KAPTON_LIKE)
    blocks = assemble_tsa(trace, stack, sheets=uniform_sheets(stack, 3))
    x = np.repeat(stack.breakpoints * 1e3, 3)
    heat = blocks.K @ x
    np.testing.assert_allclose(heat[3:-3], 0.0, atol=1e-9)


def test_assemble_tsa_needs_matrices_or_sheets():
    stack = TsaStack.uniform("ins", 1e-4, 1, KAPTON_LIKE)
    with pytest.raises(AssemblyError, match="needs layer matrices or a sheet iterate"):
        assemble_tsa(straight_trace([0.0, 1.0]), stack)
    short = [tsa_1d_matrices(stack, 1, uniform_sheets(stack, 2))]
    with pytest.raises(AssemblyError, match="do not match a trace of 3 nodes"):
        assemble_tsa(straight_trace([0.0, 0.5, 1.0]), stack, matrices=short)


def test_tangential_gradient():
    trace = straight_trace([0.0, 0.5, 1.5])
    values = np.array([[1.0, 2.0, 4.0], [0.0, 0.0, 0.0]])
    np.testing.assert_allclose(tsa_tangential_gradient(trace, values), [[2.0, 2.0], [0.0, 0.0]])
    np.testing.assert_allclose(tsa_tangential_gradient(trace.s, values[0]), [2.0, 2.0])
    with pytest.raises(AssemblyError, match="2 values for a trace of 3 nodes"):
        tsa_tangential_gradient(trace, np.ones(2))
