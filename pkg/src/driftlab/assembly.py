"""P1 Galerkin assembly of the drift operator, its adjoint, the H^1_0 Riesz map
and the lumped monotone regularization term."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .quadrature import CellQuadrature


class AssemblyError(ValueError):
    pass


class NonlinearOverflowError(ArithmeticError):
    """The regularization term overflowed; Newton needs damping."""


class PecletWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SparseOperator:
    """CSR matrix over interior nodes, tagged with its mesh."""

    matrix: sps.csr_matrix
    mesh_tag: str
    interior: np.ndarray

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, x):
        return self.matrix @ x

    def write(self, path):
        """Coordinate text dump ``i j value`` (0-based) sorted by (i, j)."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
                fh.write(f"{i} {j} {v:.17e}\n")


@dataclass(frozen=True)
class LoadVector:
    values: np.ndarray
    mesh_tag: str

    def __len__(self):
        return len(self.values)


def quadrature_for(mesh, coeffs):
    return CellQuadrature(mesh, coeffs.features)


def _check(mesh, coeffs):
    if coeffs.dim != mesh.dim:
        raise AssemblyError(f"coefficients are {coeffs.dim}D but the mesh is {mesh.dim}D")


def _to_interior(mesh, local, symmetric_pattern=True):
    """Scatter (nc, d+1, d+1) local matrices and restrict to interior nodes."""
    cells = mesh.cells
    k = mesh.dim + 1
    rows = np.repeat(cells, k, axis=1).ravel()
    cols = np.tile(cells, (1, k)).ravel()
    full = sps.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.nv, mesh.nv)).tocsr()
    full.sum_duplicates()
    inner = mesh.interior
    M = full[inner][:, inner].tocsr()
    return _canonical(M) if symmetric_pattern else M


def _canonical(M):
    """Keep the union of the nonzero patterns of M and M^T, nothing else."""
    M = M.tocsr()
    M.sum_duplicates()
    n = M.shape[0]
    union = (abs(M) + abs(M.T)).tocsr()
    union.eliminate_zeros()
    union.sort_indices()
    ur = np.repeat(np.arange(n), np.diff(union.indptr))
    ukeys = ur.astype(np.int64) * n + union.indices
    coo = M.tocoo()
    mkeys = coo.row.astype(np.int64) * n + coo.col
    vals = np.zeros(len(ukeys))
    pos = np.searchsorted(ukeys, mkeys)
    ok = (pos < len(ukeys))
    ok[ok] = ukeys[pos[ok]] == mkeys[ok]
    np.add.at(vals, pos[ok], coo.data[ok])
    out = sps.csr_matrix((vals, union.indices.copy(), union.indptr.copy()), shape=M.shape)
    out.has_sorted_indices = True
    return out


def _local_forms(mesh, coeffs, quad, stabilize=False):
    """Local diffusion, drift (divergence form) and reaction matrices plus loads."""
    G = mesh.grads
    w = quad.weights
    lam = quad.bary
    A = coeffs.A(quad.points, quad.cell, mesh)
    E = coeffs.E(quad.points, quad.cell, mesh)
    a = coeffs.a(quad.points, quad.cell, mesh)
    f = coeffs.f(quad.points, quad.cell, mesh)
    for name, val in (("A", A), ("E", E), ("a", a), ("f", f)):
        quad.check_finite(val, f"coefficient {name}")
    Abar = quad.cell_sum(w[:, None, None] * A)
    if stabilize:
        Emag = np.linalg.norm(E, axis=1)
        vol = np.abs(mesh.volumes)
        emean = quad.cell_sum(w * Emag) / vol
        eps = np.maximum(0.0, 0.5 * emean * mesh.diameters - coeffs.alpha)
        Abar = Abar + (eps * vol)[:, None, None] * np.eye(mesh.dim)
    S = quad.cell_sum(w[:, None, None] * lam[:, :, None] * E[:, None, :])   # (nc, k, d)
    R = quad.cell_sum((w * a)[:, None, None] * lam[:, :, None] * lam[:, None, :])
    F = quad.cell_sum((w * f)[:, None] * lam)
    return G, Abar, S, R, F, E


def peclet_number(mesh, coeffs, quad=None):
    """max |E| h / (2 alpha) over quadrature points."""
    quad = quad or quadrature_for(mesh, coeffs)
    E = coeffs.E(quad.points, quad.cell, mesh)
    return float(np.max(np.linalg.norm(E, axis=1) * mesh.diameters[quad.cell]) / (2 * coeffs.alpha))


def _warn_peclet(mesh, coeffs, E, quad):
    pe = float(np.max(np.linalg.norm(E, axis=1) * mesh.diameters[quad.cell]) / (2 * coeffs.alpha))
    if pe > 1.0:
        warnings.warn(f"mesh Peclet number {pe:.3g} > 1; Galerkin solution may oscillate",
                      PecletWarning, stacklevel=3)
    return pe


def _load(mesh, F):
    full = np.bincount(mesh.cells.ravel(), weights=F.ravel(), minlength=mesh.nv)
    return LoadVector(full[mesh.interior], mesh.tag)


def assemble_primal(mesh, coeffs, quad=None, stabilize=False):
    """Matrix of int A grad u.grad v + u E.grad v + a u v and load int f v.

    Entry (i, j) pairs trial phi_j with test phi_i.
    """
    _check(mesh, coeffs)
    quad = quad or quadrature_for(mesh, coeffs)
    G, Abar, S, R, F, E = _local_forms(mesh, coeffs, quad, stabilize)
    _warn_peclet(mesh, coeffs, E, quad)
    diff = np.einsum("cid,cde,cje->cij", G, Abar, G)
    drift = np.einsum("cid,cjd->cij", G, S)
    M = _to_interior(mesh, diff + drift + R)
    return SparseOperator(M, mesh.tag, mesh.interior), _load(mesh, F)


def assemble_adjoint(mesh, coeffs, quad=None, stabilize=False):
    """Matrix of int A^T grad u.grad v + (E.grad u) v + a u v and load int f v."""
    _check(mesh, coeffs)
    quad = quad or quadrature_for(mesh, coeffs)
    G, Abar, S, R, F, E = _local_forms(mesh, coeffs, quad, stabilize)
    _warn_peclet(mesh, coeffs, E, quad)
    AbarT = np.transpose(Abar, (0, 2, 1))
    diff = np.einsum("cid,cde,cje->cij", G, AbarT, G)
    drift = np.einsum("cjd,cid->cij", G, S)
    M = _to_interior(mesh, diff + drift + R)
    return SparseOperator(M, mesh.tag, mesh.interior), _load(mesh, F)


def assemble_drift(mesh, E, quad=None):
    """Drift-only primal matrix int u E.grad v (linear in E)."""
    quad = quad or CellQuadrature(mesh, E.features)
    Ev = E(quad.points, quad.cell, mesh)
    S = quad.cell_sum(quad.weights[:, None, None] * quad.bary[:, :, None] * Ev[:, None, :])
    return SparseOperator(_to_interior(mesh, np.einsum("cid,cjd->cij", mesh.grads, S)),
                          mesh.tag, mesh.interior)


def assemble_riesz(mesh):
    """Dirichlet stiffness of -Laplace on interior nodes (SPD)."""
    return SparseOperator(_to_interior(mesh, stiffness_local(mesh)), mesh.tag, mesh.interior)


def stiffness_local(mesh):
    return np.abs(mesh.volumes)[:, None, None] * np.einsum("cid,cjd->cij", mesh.grads, mesh.grads)


def full_stiffness(mesh):
    """Stiffness over all vertices (no boundary elimination)."""
    k = mesh.dim + 1
    rows = np.repeat(mesh.cells, k, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, k)).ravel()
    return sps.coo_matrix((stiffness_local(mesh).ravel(), (rows, cols)),
                          shape=(mesh.nv, mesh.nv)).tocsr()


def full_mass(mesh):
    """Consistent P1 mass matrix over all vertices."""
    k = mesh.dim + 1
    local = np.full((k, k), 1.0) + np.eye(k)
    local = local / ((k) * (k + 1))
    vals = np.abs(mesh.volumes)[:, None, None] * local[None]
    rows = np.repeat(mesh.cells, k, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, k)).ravel()
    return sps.coo_matrix((vals.ravel(), (rows, cols)), shape=(mesh.nv, mesh.nv)).tocsr()


def interior_mass(mesh):
    return _to_interior(mesh, np.abs(mesh.volumes)[:, None, None]
                        * ((np.ones((mesh.dim + 1,) * 2) + np.eye(mesh.dim + 1))
                           / ((mesh.dim + 1) * (mesh.dim + 2)))[None])


def regularization_power(dim):
    """Exponent k in g(s) = |s|^k s: 4/(N-2) for N >= 3; 2 for N = 2 (extension)."""
    return 4.0 / (dim - 2) if dim > 2 else 2.0


def g(s, dim):
    k = regularization_power(dim)
    return np.abs(s) ** k * s


def g_prime(s, dim):
    k = regularization_power(dim)
    return (1.0 + k) * np.abs(s) ** k


def assemble_nonlinear_term(mesh, w, delta):
    """Lumped residual delta M_L g(w) and its diagonal Jacobian, on interior nodes.

    ``w`` holds interior nodal values.
    """
    w = np.asarray(w, dtype=float)
    ml = mesh.lumped_mass[mesh.interior]
    with np.errstate(over="ignore", invalid="ignore"):
        res = delta * ml * g(w, mesh.dim)
        jac = delta * ml * g_prime(w, mesh.dim)
    if not (np.all(np.isfinite(res)) and np.all(np.isfinite(jac))):
        raise NonlinearOverflowError("regularization term overflowed")
    return LoadVector(res, mesh.tag), SparseOperator(sps.diags(jac, format="csr"), mesh.tag,
                                                     mesh.interior)
