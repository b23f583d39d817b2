"""Linear, adjoint and regularized (damped Newton) solves with residual certificates."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .assembly import (LoadVector, NonlinearOverflowError, SparseOperator, assemble_adjoint,
                       assemble_nonlinear_term, assemble_primal, g, quadrature_for)

log = logging.getLogger(__name__)

LINEAR_TOL = 1e-10
NEWTON_TOL = 1e-9
NEWTON_MAX_STEPS = 50


class SolverError(RuntimeError):
    pass


class SingularMatrixError(SolverError):
    pass


class ConvergenceError(SolverError):
    """Iteration stopped before the tolerance; ``best`` holds the best iterate."""

    def __init__(self, message, best=None, residual=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.iterations = iterations
        self.converged = False


class NewtonStallError(ConvergenceError):
    pass


@dataclass(frozen=True, eq=False)
class P1Function:
    """Nodal values over all mesh vertices."""

    mesh: object
    values: np.ndarray

    def with_values(self, values):
        return replace(self, values=np.asarray(values, dtype=float))

    @property
    def interior_values(self):
        return self.values[self.mesh.interior]


@dataclass(frozen=True, eq=False)
class Solution(P1Function):
    residual: float = 0.0
    method: str = ""
    iterations: int = 0
    converged: bool = True
    history: tuple = field(default=())

    @property
    def mesh_tag(self):
        return self.mesh.tag


def from_interior(mesh, x, **meta):
    values = np.zeros(mesh.nv)
    values[mesh.interior] = x
    return Solution(mesh, values, **meta)


def _matrix(op):
    return op.matrix if isinstance(op, SparseOperator) else sps.csr_matrix(op)


def _vector(rhs):
    return np.asarray(rhs.values if isinstance(rhs, LoadVector) else rhs, dtype=float)


def relative_residual(op, x, rhs):
    A, b = _matrix(op), _vector(rhs)
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return r / nb if nb > 0 else r


def solve_linear(op, rhs, method="direct", tol=LINEAR_TOL, return_info=False):
    """Solve op x = rhs; certify ||op x - rhs|| / ||rhs|| <= tol.

    ``method`` is ``"direct"`` (sparse LU) or ``"iterative"`` (ILU-preconditioned
    BiCGStab, falling back to GMRES).
    """
    A, b = _matrix(op).tocsc(), _vector(rhs)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"shape mismatch: operator {A.shape}, rhs {b.shape}")
    if not np.any(b):
        x = np.zeros_like(b)
        return (x, {"method": method, "iterations": 0, "residual": 0.0}) if return_info else x
    iterations = 0
    if method == "direct":
        try:
            lu = spla.splu(A)
        except RuntimeError as exc:
            raise SingularMatrixError(f"matrix is singular: {exc}") from None
        x = lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SingularMatrixError("matrix is numerically singular")
        res = relative_residual(A, x, b)
        while res > tol and iterations < 3:  # iterative refinement
            x = x + lu.solve(b - A @ x)
            res = relative_residual(A, x, b)
            iterations += 1
    elif method == "iterative":
        x, iterations = _krylov(A, b, tol)
        res = relative_residual(A, x, b)
    else:
        raise ValueError(f"unknown method {method!r}")
    if res > tol:
        raise ConvergenceError(f"{method} solve reached residual {res:.3e} > {tol:.1e}",
                               best=x, residual=res, iterations=iterations)
    info = {"method": method, "iterations": iterations, "residual": float(res)}
    return (x, info) if return_info else x


def _krylov(A, b, tol):
    if np.any(np.diff(A.tocsr().indptr) == 0):
        raise SingularMatrixError("matrix has an empty row")
    try:
        ilu = spla.spilu(A, drop_tol=1e-6, fill_factor=20)
        M = spla.LinearOperator(A.shape, ilu.solve)
    except RuntimeError as exc:
        raise SingularMatrixError(f"incomplete factorization failed: {exc}") from None
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = spla.bicgstab(A, b, rtol=tol * 0.1, atol=0.0, M=M, maxiter=2000, callback=cb)
    if info != 0 or relative_residual(A, x, b) > tol:
        x, info = spla.gmres(A, b, x0=x, rtol=tol * 0.1, atol=0.0, M=M, restart=200,
                             maxiter=50, callback=cb, callback_type="pr_norm")
    return x, count[0]


def _solve(op, load, mesh, method, tol):
    x, info = solve_linear(op, load, method=method, tol=tol, return_info=True)
    return from_interior(mesh, x, residual=info["residual"], method=info["method"],
                         iterations=info["iterations"])


def solve_primal(mesh, coeffs, method="direct", tol=LINEAR_TOL, quad=None):
    """Discrete solution of -div(A grad u + E u) + a u = f, u = 0 on the boundary."""
    op, load = assemble_primal(mesh, coeffs, quad=quad)
    return _solve(op, load, mesh, method, tol)


def solve_adjoint(mesh, coeffs, method="direct", tol=LINEAR_TOL, quad=None, load=None):
    """Discrete solution of -div(A^T grad u) + E.grad u + a u = f.

    ``load`` overrides the assembled right-hand side (interior values).
    """
    op, assembled = assemble_adjoint(mesh, coeffs, quad=quad)
    return _solve(op, assembled if load is None else load, mesh, method, tol)


def newton_regularized(mesh, op, load, delta, w0=None, tol=NEWTON_TOL,
                       max_steps=NEWTON_MAX_STEPS):
    """Damped Newton for op w + delta M_L g(w) = load on interior nodes.

    Returns (w, iterations, history of ||F||_2). Raises NewtonStallError with
    the best iterate when the tolerance is not met.
    """
    K, b = _matrix(op), _vector(load)
    nb = np.linalg.norm(b)
    scale = nb if nb > 0 else 1.0
    w = np.zeros_like(b) if w0 is None else np.array(w0, dtype=float)

    def residual(v):
        nl, jac = assemble_nonlinear_term(mesh, v, delta)
        return K @ v + nl.values - b, jac

    F, J = residual(w)
    norm = np.linalg.norm(F)
    history = [norm]
    for step in range(1, max_steps + 1):
        if norm / scale <= tol:
            return w, step - 1, history
        try:
            dw = solve_linear(K + J.matrix, -F, tol=1e-12 if norm / scale > 1e-6 else 1e-13)
        except ConvergenceError as exc:
            dw = exc.best
        t = 1.0
        while True:
            trial = w + t * dw
            try:
                Ft, Jt = residual(trial)
                nt = np.linalg.norm(Ft)
            except NonlinearOverflowError:
                nt = np.inf
            if nt <= (1 - 1e-4 * t) * norm:
                break
            t *= 0.5
            if t < 1e-10:
                raise NewtonStallError(f"line search failed at Newton step {step}",
                                       best=w, residual=norm / scale, iterations=step)
        assert nt < norm  # damping guarantees monotone decrease
        w, F, J, norm = trial, Ft, Jt, nt
        history.append(norm)
    if norm / scale <= tol:
        return w, max_steps, history
    raise NewtonStallError(f"Newton stalled after {max_steps} steps (residual {norm / scale:.3e})",
                           best=w, residual=norm / scale, iterations=max_steps)


def solve_regularized(mesh, coeffs, delta, quad=None, initial=None, tol=NEWTON_TOL):
    """Solution of -div(A grad w + E w) + delta |w|^k w = f by damped Newton."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    op, load = assemble_primal(mesh, coeffs, quad=quad)
    if initial is None:
        try:
            w0 = solve_linear(op, load)
        except SolverError:
            w0 = None
    else:
        w0 = initial.interior_values if isinstance(initial, P1Function) else initial
    if w0 is not None:
        with np.errstate(over="ignore", invalid="ignore"):
            if not np.all(np.isfinite(g(np.asarray(w0), mesh.dim))):
                w0 = None
    w, its, hist = newton_regularized(mesh, op, load, delta, w0=w0, tol=tol)
    res = hist[-1] / (np.linalg.norm(load.values) or 1.0)
    return from_interior(mesh, w, residual=float(res), method="newton", iterations=its,
                         history=tuple(float(h) for h in hist))
