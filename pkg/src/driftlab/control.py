"""Optimal control of the drift: minimize J(E) = int G(x, u_E) + mu int |E|^p
over E = sum_k c_k B_k, with adjoint gradients and projected descent."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .assembly import assemble_drift, assemble_primal
from .expr import STATE, SYMBOLS, Expr
from .fields import CoefficientError, Field, coefficient_set, combine
from .mesh import level_mesh
from .quadrature import CellQuadrature
from .solve import from_interior, solve_adjoint, solve_linear

log = logging.getLogger(__name__)

TRACE_HEADER = "iter,J,grad_norm,step"
MAX_REJECTIONS = 10


class ControlError(ValueError):
    pass


def _state_function(expr, dim):
    fn = sp.lambdify(tuple(SYMBOLS[:dim]) + (STATE,), expr, modules="numpy")

    def evaluate(x, s):
        x = np.atleast_2d(x)
        return np.broadcast_to(np.asarray(fn(*x.T, s), dtype=float), (x.shape[0],)).copy()

    return evaluate


class ControlProblem:
    """Drift-control problem on a fixed mesh.

    ``coeffs`` supplies A, a and f (its E is ignored). ``G`` is an expression
    in x1..x3 and s; ``G_s`` defaults to its symbolic s-derivative. ``growth``
    = (a_G, b_G) is checked as G(x, s) >= a_G - b_G |s| on a sample grid.
    """

    def __init__(self, mesh, coeffs, G, basis, mu=1.0, p=3.0, lower=-math.inf,
                 upper=math.inf, G_s=None, growth=(0.0, 0.0), srange=10.0):
        self.mesh, self.coeffs = mesh, coeffs
        dim = mesh.dim
        if mu <= 0:
            raise ControlError(f"mu must be positive, got {mu}")
        if (dim == 2 and p <= 2) or (dim > 2 and p < dim):
            raise ControlError(f"p={p} outside the admissible range for N={dim}")
        self.mu, self.p = float(mu), float(p)
        self.basis = list(basis)
        if not self.basis:
            raise ControlError("the drift basis must be nonempty")
        for b in self.basis:
            if b.shape != (dim,):
                raise ControlError(f"basis field {b!r} is not a {dim}-vector field")
        self.lower = np.broadcast_to(np.asarray(lower, dtype=float), (len(self.basis),)).copy()
        self.upper = np.broadcast_to(np.asarray(upper, dtype=float), (len(self.basis),)).copy()
        if np.any(self.lower > self.upper):
            raise ControlError("lower bounds exceed upper bounds")
        self.G_expr = Expr(G)
        gsym = self.G_expr.to_sympy()
        dsym = Expr(G_s).to_sympy() if G_s else sp.diff(gsym, STATE)
        self.G = _state_function(gsym, dim)
        self.G_s = _state_function(dsym, dim)
        self.growth = tuple(float(v) for v in growth)
        self._check_growth(srange)
        feats = tuple(ft for b in self.basis for ft in b.features) + coeffs.features
        self.quad = CellQuadrature(mesh, feats)
        q = self.quad
        self.Bq = np.stack([b(q.points, q.cell, mesh) for b in self.basis])   # (K, nq, d)
        self.drifts = [assemble_drift(mesh, b, q).matrix for b in self.basis]
        self.evaluations = 0

    def _check_growth(self, srange):
        aG, bG = self.growth
        x = self.mesh.vertices
        for s in np.linspace(-srange, srange, 21):
            vals = self.G(x, np.full(len(x), s))
            if np.any(vals < aG - bG * abs(s) - 1e-12):
                raise ControlError(f"G violates G >= {aG} - {bG}|s| at s={s:g}")

    @property
    def size(self):
        return len(self.basis)

    def project(self, c):
        return np.clip(np.asarray(c, dtype=float), self.lower, self.upper)

    def _check(self, c):
        c = np.asarray(c, dtype=float)
        if c.shape != (self.size,):
            raise ControlError(f"expected {self.size} coefficients, got shape {c.shape}")
        if np.any(c < self.lower - 1e-15) or np.any(c > self.upper + 1e-15):
            raise ControlError(f"c={c} is outside the bounds")
        return c

    def drift(self, c):
        return combine(c, self.basis)

    def _Eq(self, c):
        return np.einsum("k,kqd->qd", c, self.Bq)

    def state(self, c):
        c = self._check(c)
        coeffs = self.coeffs.with_(E=self.drift(c))
        op, load = assemble_primal(self.mesh, coeffs, quad=self.quad)
        u = from_interior(self.mesh, solve_linear(op, load))
        self.evaluations += 1
        return u, coeffs

    def _parts(self, c, u):
        q = self.quad
        uq = q.interpolate(u.values)
        Eq = self._Eq(c)
        cost = q.integrate(self.G(q.points, uq))
        penalty = self.mu * q.integrate(np.linalg.norm(Eq, axis=1) ** self.p)
        return cost, penalty, uq, Eq


def eval_objective(prob, c):
    """J(c) = int G(x, u) + mu int |E(c)|^p with the problem's quadrature."""
    u, _ = prob.state(c)
    cost, penalty, _, _ = prob._parts(np.asarray(c, dtype=float), u)
    return cost + penalty


def eval_gradient(prob, c, return_objective=False):
    """dJ/dc_k = int u grad(pi).B_k + mu p int |E|^{p-2} E.B_k, where pi solves the
    adjoint problem with right-hand side -G_s(x, u).

    Exact derivative of the discrete objective: the load of the adjoint solve is
    the nodal gradient of the quadrature of G(x, u_h).
    """
    c = np.asarray(c, dtype=float)
    u, coeffs = prob.state(c)
    mesh, q = prob.mesh, prob.quad
    cost, penalty, uq, Eq = prob._parts(c, u)
    gs = q.weights * prob.G_s(q.points, uq)
    nodal = np.bincount(mesh.cells[q.cell].ravel(), weights=(gs[:, None] * q.bary).ravel(),
                        minlength=mesh.nv)
    pi = solve_adjoint(mesh, coeffs, quad=q, load=-nodal[mesh.interior])
    ui, pii = u.interior_values, pi.interior_values
    grad = np.array([pii @ (D @ ui) for D in prob.drifts])
    mag = np.linalg.norm(Eq, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        wgt = np.where(mag > 0, mag ** (prob.p - 2), 0.0)
    grad += prob.mu * prob.p * np.einsum("q,qd,kqd->k", q.weights * wgt, Eq, prob.Bq)
    return (grad, cost + penalty) if return_objective else grad


def finite_difference_gradient(prob, c, step=1e-5):
    c = np.asarray(c, dtype=float)
    out = np.zeros_like(c)
    for k in range(len(c)):
        e = np.zeros_like(c)
        e[k] = step
        out[k] = (eval_objective(prob, c + e) - eval_objective(prob, c - e)) / (2 * step)
    return out


@dataclass
class OptimizeResult:
    c: np.ndarray
    J: float
    trace: list = field(default_factory=list)   # (iter, J, grad_norm, step)
    stalled: bool = False
    converged: bool = False
    message: str = ""


def optimize(prob, c0, steps=50, initial_step=None, armijo=1e-4, tol=1e-10, trace_path=None):
    """Projected gradient descent with backtracking.

    Each iteration first tries twice the previously accepted step, then halves
    until the Armijo condition holds. Ten rejections in a row end the run as a
    stall; the current (best) iterate is returned either way.
    """
    if steps < 1:
        raise ControlError("steps must be >= 1")
    c = prob.project(c0)
    grad, J = eval_gradient(prob, c, return_objective=True)
    gnorm = float(np.linalg.norm(grad))
    trace = [(0, J, gnorm, 0.0)]
    t_prev = initial_step if initial_step is not None else (0.5 / gnorm if gnorm > 0 else 1.0)
    result = OptimizeResult(c, J, trace)
    for it in range(1, steps + 1):
        if np.linalg.norm(c - prob.project(c - grad)) <= tol:
            result.converged, result.message = True, "projected gradient vanished"
            break
        t = 2.0 * t_prev if it > 1 else t_prev
        for _ in range(MAX_REJECTIONS):
            trial = prob.project(c - t * grad)
            Jt = eval_objective(prob, trial)
            if Jt <= J - armijo * float(grad @ (c - trial)):
                break
            t *= 0.5
        else:
            result.stalled = True
            result.message = f"stalled after {MAX_REJECTIONS} rejected steps at iteration {it}"
            log.info(result.message)
            break
        if np.array_equal(trial, c):
            result.converged, result.message = True, "step below resolution"
            break
        c, t_prev = trial, t
        grad, J = eval_gradient(prob, c, return_objective=True)
        gnorm = float(np.linalg.norm(grad))
        trace.append((it, J, gnorm, t))
    else:
        result.message = f"reached {steps} iterations"
    result.c, result.J = c, J
    if trace_path is not None:
        write_trace(trace, trace_path)
    return result


def write_trace(trace, path):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(TRACE_HEADER + "\n")
            for it, J, g, s in trace:
                fh.write(f"{it},{J:.17e},{g:.17e},{s:.17e}\n")
    except OSError as exc:
        raise OSError(f"cannot write trace {path}: {exc.strerror}") from None


def problem_from_config(cfg):
    """ControlProblem from a :class:`~driftlab.config.ControlConfig`."""
    mesh = level_mesh(cfg.dim, cfg.level, base=cfg.divisions, box=[tuple(b) for b in cfg.box])
    coeffs = coefficient_set(cfg.dim, A=cfg.A, a=cfg.a, f=cfg.f, alpha=cfg.alpha)
    try:
        basis = [Field.from_expr(b, cfg.dim, shape=(cfg.dim,)) for b in cfg.basis]
    except CoefficientError as exc:
        raise ControlError(f"bad basis field: {exc}") from None
    return ControlProblem(mesh, coeffs, cfg.G, basis, mu=cfg.mu, p=cfg.p, lower=cfg.lower,
                          upper=cfg.upper, G_s=cfg.G_s or None, growth=cfg.growth)


__all__ = [
    "ControlError", "ControlProblem", "OptimizeResult", "eval_gradient", "eval_objective",
    "finite_difference_gradient", "optimize", "problem_from_config", "write_trace",
]
