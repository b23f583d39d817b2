"""Simplex quadrature: collapsed Gauss rules, Kuhn-composite subdivision and
per-cell rules that refine locally around declared field features."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

DEFAULT_DEGREE = 4


class QuadratureError(RuntimeError):
    def __init__(self, message, cell=None):
        super().__init__(message if cell is None else f"{message} (cell {cell})")
        self.cell = cell


@dataclass(frozen=True)
class Feature:
    """Length scale a field varies on, globally or inside a ball.

    Quadrature subdivides cells intersecting the ball (every cell if
    ``center`` is None) until sub-cells are no larger than ``length``.
    """

    length: float
    center: tuple | None = None
    radius: float = 0.0


@lru_cache(maxsize=None)
def simplex_rule(dim, degree=DEFAULT_DEGREE):
    """Conical-product Gauss rule on the reference simplex.

    Returns (points, weights) with weights summing to 1 (fractions of the
    simplex volume). Exact for polynomials of total degree ``degree``.
    """
    m = degree // 2 + 1
    nodes, weights = [], []
    for k in range(dim):
        a = dim - 1 - k
        x, w = roots_jacobi(m, a, 0)
        nodes.append((x + 1) / 2)
        weights.append(w / 2 ** (a + 1))
    pts, wts = [], []
    for idx in itertools.product(range(m), repeat=dim):
        t = [nodes[k][i] for k, i in enumerate(idx)]
        w = math.prod(weights[k][i] for k, i in enumerate(idx))
        x, scale = [], 1.0
        for tk in t:
            x.append(tk * scale)
            scale *= 1 - tk
        pts.append(x)
        wts.append(w)
    pts = np.array(pts)
    wts = np.array(wts) * math.factorial(dim)
    return pts, wts


@lru_cache(maxsize=None)
def _kuhn_children(dim, level):
    """Sub-simplices (vertex coords on the reference simplex) of the level-k
    Kuhn subdivision; 2**(k*dim) children of equal volume."""
    n = 2 ** level
    out = []
    for corner in itertools.product(range(n), repeat=dim):
        for perm in itertools.permutations(range(dim)):
            path = [np.array(corner, dtype=float)]
            for axis in perm:
                nxt = path[-1].copy()
                nxt[axis] += 1
                path.append(nxt)
            verts = np.array(path) / n
            centre = verts.mean(axis=0)
            if np.all(np.diff(centre) <= 0):  # inside {1 >= y1 >= ... >= yd >= 0}
                out.append(verts)
    out = np.array(out)
    # y -> reference simplex: x_j = y_j - y_{j+1}
    ref = out.copy()
    ref[..., :-1] -= out[..., 1:]
    return ref


@lru_cache(maxsize=None)
def composite_rule(dim, level, degree=DEFAULT_DEGREE):
    """Base rule replicated over the level-``level`` Kuhn subdivision."""
    pts, wts = simplex_rule(dim, degree)
    if level == 0:
        return pts, wts
    kids = _kuhn_children(dim, level)
    edges = kids[:, 1:, :] - kids[:, :1, :]
    allpts = kids[:, None, 0, :] + np.einsum("qk,ckd->cqd", pts, edges)
    frac = np.abs(np.linalg.det(edges))
    allw = frac[:, None] * wts[None, :]
    return allpts.reshape(-1, dim), allw.ravel()


MAX_DEPTH = 8
MAX_LEAVES = 4_000_000


@lru_cache(maxsize=None)
def _child_map(dim):
    """Level-1 Kuhn children of the reference simplex, in reference coordinates."""
    return _kuhn_children(dim, 1)


def _diameters(verts):
    d = np.zeros(len(verts))
    for i, j in itertools.combinations(range(verts.shape[1]), 2):
        d = np.maximum(d, np.linalg.norm(verts[:, i] - verts[:, j], axis=1))
    return d


def _needs_split(verts, features):
    diam = _diameters(verts)
    need = np.zeros(len(verts), dtype=bool)
    for feat in features:
        too_big = diam > feat.length
        if feat.center is None:
            need |= too_big
        else:
            dist = np.linalg.norm(verts.mean(axis=1) - np.asarray(feat.center), axis=1)
            need |= too_big & (dist <= feat.radius + diam)
    return need


def feature_leaves(mesh, features, max_depth=MAX_DEPTH):
    """Adaptive Kuhn subdivision of the cells touched by ``features``.

    Returns (leaf vertex coords (m, dim+1, dim), owning cell (m,)), ordered by
    owning cell. Only sub-simplices that meet a feature ball and are larger
    than its length scale are split further.
    """
    verts, owner = mesh.coords, np.arange(mesh.nc)
    kids = _child_map(mesh.dim)
    out_v, out_o = [], []
    for depth in range(max_depth + 1):
        need = _needs_split(verts, features) if depth < max_depth else np.zeros(len(verts), bool)
        out_v.append(verts[~need])
        out_o.append(owner[~need])
        if not need.any():
            break
        parent = verts[need]
        edges = parent[:, 1:, :] - parent[:, :1, :]
        verts = (parent[:, None, None, 0, :]
                 + np.einsum("kvj,cjd->ckvd", kids, edges)).reshape(-1, mesh.dim + 1, mesh.dim)
        owner = np.repeat(owner[need], len(kids))
        if len(verts) > MAX_LEAVES:
            raise QuadratureError(f"feature subdivision exceeds {MAX_LEAVES} sub-cells",
                                  cell=int(owner[0]))
    verts, owner = np.concatenate(out_v), np.concatenate(out_o)
    order = np.argsort(owner, kind="stable")
    return verts[order], owner[order]


class CellQuadrature:
    """Flattened per-cell quadrature on a mesh.

    Attributes ``points`` (nq, dim), ``weights`` (physical, nq), ``cell``
    (nq,) sorted ascending, ``bary`` (nq, dim+1) barycentric coordinates in
    the owning cell and ``offsets`` for segment sums with ``np.add.reduceat``.
    """

    def __init__(self, mesh, features=(), degree=DEFAULT_DEGREE):
        self.mesh = mesh
        self.features = tuple(features)
        ref, rw = simplex_rule(mesh.dim, degree)
        if self.features:
            leaves, owner = feature_leaves(mesh, self.features)
            edges = leaves[:, 1:, :] - leaves[:, :1, :]
            vol = np.abs(np.linalg.det(edges)) / math.factorial(mesh.dim)
        else:
            leaves, owner = mesh.coords, np.arange(mesh.nc)
            edges = mesh.edge_matrix
            vol = np.abs(mesh.volumes)
        x = leaves[:, None, 0, :] + np.einsum("qk,ckd->cqd", ref, edges)
        self.points = x.reshape(-1, mesh.dim)
        self.weights = (vol[:, None] * rw[None, :]).ravel()
        self.cell = np.repeat(owner, len(rw))
        G = mesh.grads[self.cell]
        rel = self.points - mesh.coords[self.cell, 0]
        lam = np.einsum("qkd,qd->qk", G[:, 1:, :], rel)
        self.bary = np.column_stack([1.0 - lam.sum(axis=1), lam])
        self.offsets = np.flatnonzero(np.r_[True, np.diff(self.cell) != 0])
        self.nleaves = len(leaves)

    def __len__(self):
        return len(self.weights)

    def cell_sum(self, values):
        """Sum ``values`` (nq, ...) per cell -> (nc, ...)."""
        return np.add.reduceat(values, self.offsets, axis=0)

    def integrate(self, values):
        return float(np.dot(self.weights, values))

    def interpolate(self, mesh_values):
        """P1 interpolant of nodal values at the quadrature points."""
        local = np.asarray(mesh_values)[self.mesh.cells[self.cell]]
        return np.einsum("qi,qi->q", self.bary, local)

    def check_finite(self, values, what="integrand"):
        bad = ~np.isfinite(values)
        if bad.any():
            q = np.flatnonzero(bad.reshape(len(self.weights), -1).any(axis=1))[0]
            raise QuadratureError(f"non-finite {what}", cell=int(self.cell[q]))
