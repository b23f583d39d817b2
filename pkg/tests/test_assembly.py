import numpy as np
import pytest
import scipy.sparse as sps
from hypothesis import given, settings
from hypothesis import strategies as st

from driftlab.assembly import (AssemblyError, PecletWarning, assemble_adjoint, assemble_drift,
                               assemble_nonlinear_term, assemble_primal, assemble_riesz, full_mass,
                               g, g_prime, peclet_number)
from driftlab.fields import DriftSequenceSpec, Field, coefficient_set, make_drift_field
from driftlab.mesh import build_box_mesh


def test_two_by_two_hand_values():
    mesh = build_box_mesh(2, 2)
    op, load = assemble_primal(mesh, coefficient_set(2, f="1"))
    assert op.matrix.toarray() == pytest.approx(np.array([[4.0]]))
    assert load.values == pytest.approx([0.25])
    # a constant drift adds nothing on the diagonal: int phi E.grad phi = 0
    op2, _ = assemble_primal(mesh, coefficient_set(2, E=[3, -1]))
    assert op2.matrix.toarray() == pytest.approx(np.array([[4.0]]))


@settings(max_examples=15, deadline=None)
@given(st.sampled_from([2, 3]), st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_adjoint_is_exact_transpose(dim, c):
    mesh = build_box_mesh(dim, 3 if dim == 2 else 2)
    A = [[f"{1 + abs(c[0])}", f"{c[1]}*x1"], [f"-{c[1]}*x1", "1"]] if dim == 2 else "1 + x2"
    E = [f"{c[2]}*sin(pi*x1)", f"{c[3]}"] + ([f"{c[4]}*x1*x2"] if dim == 3 else [])
    cs = coefficient_set(dim, A=A, E=E, a=f"{abs(c[5])}")
    P, _ = assemble_primal(mesh, cs)
    D, _ = assemble_adjoint(mesh, cs)
    assert abs(D.matrix - P.matrix.T).max() <= 1e-13 * abs(P.matrix).max()
    assert np.array_equal(D.matrix.indptr, P.matrix.indptr)
    assert np.array_equal(D.matrix.indices, P.matrix.indices)


def test_adjoint_transpose_with_concentrating_drift():
    mesh = build_box_mesh(3, 3)
    E = make_drift_field(DriftSequenceSpec("concentrating", 3, beta=4.0), 8)
    cs = coefficient_set(3, E=E)
    P, _ = assemble_primal(mesh, cs)
    D, _ = assemble_adjoint(mesh, cs)
    assert abs(D.matrix - P.matrix.T).max() <= 1e-13 * abs(P.matrix).max()


def test_primal_splits_into_riesz_plus_drift():
    mesh = build_box_mesh(2, 4)
    E = Field.from_expr(["x2", "cos(x1)"], 2, shape=(2,))
    P, _ = assemble_primal(mesh, coefficient_set(2, E=E))
    K = assemble_riesz(mesh).matrix
    D = assemble_drift(mesh, E).matrix
    assert abs(P.matrix - K - D).max() < 1e-14


def test_drift_assembly_is_linear():
    mesh = build_box_mesh(2, 3)
    E1 = Field.from_expr(["x1", "1"], 2)
    E2 = Field.from_expr(["0", "x1*x2"], 2)
    E12 = Field.from_expr(["2*x1", "2 + 3*x1*x2"], 2)
    lhs = assemble_drift(mesh, E12).matrix
    rhs = 2 * assemble_drift(mesh, E1).matrix + 3 * assemble_drift(mesh, E2).matrix
    assert abs(lhs - rhs).max() < 1e-14


def test_riesz_symmetric_positive_definite():
    K = assemble_riesz(build_box_mesh(3, 3)).matrix
    assert abs(K - K.T).max() == 0
    assert np.linalg.eigvalsh(K.toarray()).min() > 0


def test_mass_and_load_integrate_constants():
    mesh = build_box_mesh(3, 2, [(0, 2), (0, 1), (0, 1)])
    assert full_mass(mesh).sum() == pytest.approx(2.0)


def test_write_sorted_coordinates(tmp_path):
    mesh = build_box_mesh(2, 3)
    op, _ = assemble_primal(mesh, coefficient_set(2, E=[1, 0]))
    path = tmp_path / "K.txt"
    op.write(path)
    rows = [tuple(map(int, line.split()[:2])) for line in path.read_text().splitlines()]
    assert rows == sorted(rows)
    assert len(rows) == op.matrix.nnz


def test_peclet_warning_and_number():
    mesh = build_box_mesh(2, 4)
    cs = coefficient_set(2, E=[100, 0])
    with pytest.warns(PecletWarning):
        assemble_primal(mesh, cs)
    assert peclet_number(mesh, cs) == pytest.approx(100 * mesh.h / 2)


def test_dimension_mismatch():
    with pytest.raises(AssemblyError):
        assemble_primal(build_box_mesh(2, 2), coefficient_set(3))


@pytest.mark.parametrize("dim,power", [(3, 4), (2, 2)])
def test_nonlinearity_and_jacobian(dim, power):
    s = np.linspace(-2, 2, 9)
    assert np.allclose(g(s, dim), np.abs(s) ** power * s)
    eps = 1e-6
    assert np.allclose(g_prime(s, dim), (g(s + eps, dim) - g(s - eps, dim)) / (2 * eps), rtol=1e-6)
    mesh = build_box_mesh(dim, 3)
    w = np.linspace(-1, 1, len(mesh.interior))
    res, jac = assemble_nonlinear_term(mesh, w, 0.5)
    ml = mesh.lumped_mass[mesh.interior]
    assert np.allclose(res.values, 0.5 * ml * g(w, dim))
    assert isinstance(jac.matrix, sps.csr_matrix)
    assert np.allclose(jac.matrix.diagonal(), 0.5 * ml * g_prime(w, dim))
