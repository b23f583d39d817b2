"""Measurement toolkit on P1 functions: truncations, log-power compositions,
Lebesgue/Sobolev norms, discrete H^-1 norms, superlevel measures, the entropy
residual and the logarithmic estimate ratios."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import LoadVector, assemble_primal, full_stiffness, quadrature_for
from .fields import integrability_exponent
from .quadrature import CellQuadrature
from .solve import P1Function, solve_linear


@dataclass
class NormReport:
    values: dict
    mesh_tag: str
    params: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]


def truncate(v, k):
    """Nodal T_k: clamp to [-k, k]."""
    if k <= 0:
        raise ValueError(f"truncation height must be positive, got {k}")
    return v.with_values(np.clip(v.values, -k, k))


def log_power(s, q):
    s = np.asarray(s, dtype=float)
    return np.log1p(np.abs(s)) ** q * np.sign(s)


def log_power_compose(v, q):
    """Nodal ln^q(1 + |v|) sgn(v)."""
    if q <= 0:
        raise ValueError(f"log power must be positive, got {q}")
    return v.with_values(log_power(v.values, q))


def _cell_values(v):
    return v.values[v.mesh.cells]


def l2_norm(v):
    mesh = v.mesh
    u = _cell_values(v)
    k = mesh.dim + 1
    vol = np.abs(mesh.volumes)
    sq = vol / (k * (k + 1)) * (np.sum(u ** 2, axis=1) + np.sum(u, axis=1) ** 2)
    return math.sqrt(max(float(sq.sum()), 0.0))


def h1_seminorm(v):
    mesh = v.mesh
    grad = np.einsum("ci,cid->cd", _cell_values(v), mesh.grads)
    return math.sqrt(float(np.sum(np.abs(mesh.volumes) * np.sum(grad ** 2, axis=1))))


def _positive_part_integral(coords, vals):
    """Exact int over each simplex of max(l, 0) for the linear l with vertex values."""
    dim = coords.shape[-1]
    vol = np.abs(np.linalg.det(coords[:, 1:] - coords[:, :1])) / math.factorial(dim)
    out = np.zeros(len(vals))
    pos = vals >= 0
    npos = pos.sum(axis=1)
    allpos = npos == dim + 1
    out[allpos] = vol[allpos] * vals[allpos].mean(axis=1)
    for c in np.flatnonzero((npos > 0) & ~allpos):
        out[c] = _cut_integral(coords[c], vals[c])
    return out


def _simplex_linear_integral(pts, vals):
    dim = pts.shape[1]
    vol = abs(np.linalg.det(pts[1:] - pts[:1])) / math.factorial(dim)
    return vol * float(np.mean(vals))


def _cut_integral(x, v):
    """int of max(l, 0) on one simplex with a sign change (dims 2 and 3)."""
    P = [i for i in range(len(v)) if v[i] >= 0]
    Q = [i for i in range(len(v)) if v[i] < 0]

    def cut(p, q):
        t = v[p] / (v[p] - v[q])
        return x[p] + t * (x[q] - x[p])

    if len(P) == 1:
        p = P[0]
        pts = np.array([x[p]] + [cut(p, q) for q in Q])
        return _simplex_linear_integral(pts, np.array([v[p]] + [0.0] * len(Q)))
    if len(Q) == 1:
        # positive part = whole integral minus the integral over the negative corner
        q = Q[0]
        pts = np.array([x[q]] + [cut(p, q) for p in P])
        neg = _simplex_linear_integral(pts, np.array([v[q]] + [0.0] * len(P)))
        return _simplex_linear_integral(x, v) - neg
    # dim 3, two positive and two negative vertices: prism with ends
    # (p0, c00, c01) and (p1, c10, c11), split into three tetrahedra
    p0, p1 = P
    q0, q1 = Q
    a = [x[p0], cut(p0, q0), cut(p0, q1)]
    b = [x[p1], cut(p1, q0), cut(p1, q1)]
    av = [v[p0], 0.0, 0.0]
    bv = [v[p1], 0.0, 0.0]
    total = 0.0
    for pts, vals in (([a[0], a[1], a[2], b[0]], [av[0], av[1], av[2], bv[0]]),
                      ([a[1], a[2], b[0], b[1]], [av[1], av[2], bv[0], bv[1]]),
                      ([a[2], b[0], b[1], b[2]], [av[2], bv[0], bv[1], bv[2]])):
        total += _simplex_linear_integral(np.array(pts), np.array(vals))
    return total


def l1_norm(v):
    """Exact L1 norm of the P1 interpolant."""
    u = _cell_values(v)
    coords = v.mesh.coords
    return float(_positive_part_integral(coords, u).sum() + _positive_part_integral(coords, -u).sum())


def lp_norm(v, p, quad=None):
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    quad = quad or CellQuadrature(v.mesh)
    vals = np.abs(quad.interpolate(v.values)) ** p
    return float(quad.integrate(vals)) ** (1.0 / p)


def norm(v, which, p=None):
    """Norm of a P1 function: ``L1``, ``L2``, ``Linf``, ``H1semi``, ``H1`` or ``Lp``."""
    if which == "L1":
        return l1_norm(v)
    if which == "L2":
        return l2_norm(v)
    if which == "Linf":
        return float(np.max(np.abs(v.values))) if len(v.values) else 0.0
    if which == "H1semi":
        return h1_seminorm(v)
    if which == "H1":
        return math.hypot(l2_norm(v), h1_seminorm(v))
    if which == "Lp":
        if p is None:
            raise ValueError("Lp norm needs p")
        return lp_norm(v, p)
    raise ValueError(f"unknown norm {which!r}")


def dual_norm_Hm1(rhs, riesz):
    """sqrt(F^T K^{-1} F), the discrete H^-1 norm of a load vector."""
    F = np.asarray(rhs.values if isinstance(rhs, LoadVector) else rhs, dtype=float)
    if not np.any(F):
        return 0.0
    x = solve_linear(riesz, F, tol=1e-12)
    return math.sqrt(max(float(F @ x), 0.0))


def superlevel_measure(v, m):
    """|{|v| > m}| by the vertex-fraction rule: each cell counts the fraction of
    its vertices where |v| exceeds m."""
    if m <= 0:
        raise ValueError(f"level must be positive, got {m}")
    frac = np.mean(np.abs(_cell_values(v)) > m, axis=1)
    return float(np.sum(frac * np.abs(v.mesh.volumes)))


def weak_residual_pairing(u, coeffs, test, op=None, load=None):
    """int (A grad u + E u).grad W + a u W - <f, W> for interior nodal W."""
    if op is None or load is None:
        op, load = assemble_primal(u.mesh, coeffs)
    W = test.values[u.mesh.interior] if isinstance(test, P1Function) else np.asarray(test)
    return float(W @ (op.matrix @ u.interior_values - load.values))


def entropy_residual(u, coeffs, phi, k, op=None, load=None):
    """Signed value of int (A grad u + E u).grad T_k(u - phi) + a u T_k(u - phi)
    - <f, T_k(u - phi)>, with T_k(u - phi) taken as its P1 interpolant."""
    W = np.clip(u.values - phi.values, -k, k)
    if not np.any(W):
        return 0.0
    return weak_residual_pairing(u, coeffs, W[u.mesh.interior], op=op, load=load)


def drift_l2(coeffs, mesh, quad=None):
    quad = quad or quadrature_for(mesh, coeffs)
    E = coeffs.E(quad.points, quad.cell, mesh)
    return math.sqrt(quad.integrate(np.sum(E ** 2, axis=1)))


def drift_lr_power(coeffs, mesh, r, quad=None):
    """int |E|^r with the assembly quadrature."""
    quad = quad or quadrature_for(mesh, coeffs)
    E = coeffs.E(quad.points, quad.cell, mesh)
    return quad.integrate(np.linalg.norm(E, axis=1) ** r)


def boccardo_bound_report(u, coeffs, riesz, load=None, t_values=(2, 4, 6), quad=None):
    """Ratios of the logarithmic estimates.

    R   = |ln(1+|u|) sgn u|_H1 / (||f||_H-1 + ||E||_L2)
    R_t = |ln^{(t+2)/2}(1+|u|) sgn u|_H1^2 / ((int |E|^r)^{(t+2)/r} + ||f||_H-1^2)
    """
    mesh = u.mesh
    quad = quad or quadrature_for(mesh, coeffs)
    if load is None:
        _, load = assemble_primal(mesh, coeffs, quad=quad)
    r = integrability_exponent(mesh.dim, coeffs.p)
    fnorm = dual_norm_Hm1(load, riesz)
    e2 = drift_l2(coeffs, mesh, quad)
    er = drift_lr_power(coeffs, mesh, r, quad)
    vals = {"f_Hm1": fnorm, "E_L2": e2, "E_Lr_power": er}
    den = fnorm + e2
    vals["R"] = h1_seminorm(log_power_compose(u, 1.0)) / den if den > 0 else 0.0
    for t in t_values:
        num = h1_seminorm(log_power_compose(u, (t + 2) / 2.0)) ** 2
        den_t = er ** ((t + 2) / r) + fnorm ** 2
        vals[f"R_t={t}"] = num / den_t if den_t > 0 else 0.0
    return NormReport(vals, mesh.tag, {"t": tuple(t_values), "r": r})


def energy_estimate(w, coeffs, riesz, load, delta, quad=None):
    """Both sides of the regularized energy bound (N >= 3).

    lhs = alpha/2 |w|_H1^2 + (N+2)/(2N) delta sum_i m_i |w_i|^{2N/(N-2)}  (lumped)
    rhs = 2^{N/2} / (N alpha^{N/2} delta^{(N-2)/2}) int |E|^N + ||f||_H-1^2 / alpha
    """
    mesh = w.mesh
    N = mesh.dim
    if N < 3:
        raise ValueError("the energy bound needs N >= 3")
    alpha = coeffs.alpha
    quad = quad or quadrature_for(mesh, coeffs)
    wi = w.interior_values
    grad2 = float(wi @ (riesz.matrix @ wi))
    power = float(np.sum(mesh.lumped_mass[mesh.interior] * np.abs(wi) ** (2 * N / (N - 2))))
    lhs = 0.5 * alpha * grad2 + (N + 2) / (2 * N) * delta * power
    eN = drift_lr_power(coeffs, mesh, N, quad)
    fn = dual_norm_Hm1(load, riesz)
    rhs = 2 ** (N / 2) / (N * alpha ** (N / 2) * delta ** ((N - 2) / 2)) * eN + fn ** 2 / alpha
    return lhs, rhs


def weak_probes(v, dictionary, stiffness=None):
    """int grad v . grad phi_j for P1 interpolants of the dictionary functions."""
    mesh = v.mesh
    K = stiffness if stiffness is not None else full_stiffness(mesh)
    Kv = K @ v.values
    return np.array([float(Kv @ phi(mesh.vertices)) for phi in dictionary])


__all__ = [
    "NormReport", "boccardo_bound_report", "dual_norm_Hm1", "energy_estimate",
    "entropy_residual", "h1_seminorm", "l1_norm", "l2_norm", "log_power_compose",
    "lp_norm", "norm", "superlevel_measure", "truncate", "weak_probes",
]
