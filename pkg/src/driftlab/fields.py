"""Coefficient fields, drift sequences and their integrability diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammaln

from .expr import Expr
from .mesh import build_box_mesh
from .quadrature import CellQuadrature, Feature, QuadratureError


class CoefficientError(ValueError):
    pass


class Field:
    """Evaluation rule x -> value with value shape () / (dim,) / (dim, dim).

    ``features`` tell quadrature where the field varies faster than the mesh.
    Per-cell tables are evaluated through point location on their mesh.
    """

    def __init__(self, shape, func, dim, features=(), exponent=None, label="",
                 table=None, mesh=None):
        self.shape = tuple(shape)
        self.dim = dim
        self._func = func
        self.features = tuple(features)
        self.exponent = exponent
        self.label = label
        self.table = table
        self.mesh = mesh

    def __repr__(self):
        return f"Field({self.label or '<fn>'}, shape={self.shape})"

    def __call__(self, x, cells=None, mesh=None):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.table is not None:
            if cells is None or mesh is not self.mesh:
                cells = self.mesh.locate(x)
            return self.table[cells]
        out = np.asarray(self._func(x), dtype=float)
        return np.broadcast_to(out, (x.shape[0],) + self.shape)

    @classmethod
    def from_expr(cls, spec, dim, shape=None, exponent=None):
        """Build from an expression string, a list (vector) or nested list (matrix).

        A scalar spec with ``shape=(dim, dim)`` means that multiple of the identity.
        """
        if isinstance(spec, (list, tuple)):
            arr = np.array(spec, dtype=object)
        else:
            arr = np.array(spec, dtype=object).reshape(())
        if shape == (dim, dim) and arr.shape == ():
            eye = np.full((dim, dim), "0", dtype=object)
            for i in range(dim):
                eye[i, i] = arr[()]
            arr = eye
        if shape is not None and arr.shape != tuple(shape):
            raise CoefficientError(f"expected shape {shape}, got {arr.shape} for {spec!r}")
        exprs = np.vectorize(lambda s: Expr(s), otypes=[object])(arr)
        flat = exprs.ravel()
        for ex in flat:
            if ex.max_coordinate() > dim:
                raise CoefficientError(f"{ex.source!r} uses a coordinate beyond dim {dim}")

        def func(x):
            vals = np.stack([ex(x) for ex in flat], axis=-1)
            return vals.reshape((x.shape[0],) + arr.shape)

        label = spec if isinstance(spec, str) else repr(spec)
        return cls(arr.shape, func, dim, exponent=exponent, label=str(label))

    @classmethod
    def constant(cls, value, dim):
        value = np.asarray(value, dtype=float)
        return cls(value.shape, lambda x: value, dim, label=repr(value.tolist()))

    @classmethod
    def from_cells(cls, mesh, table):
        table = np.asarray(table, dtype=float)
        if table.shape[0] != mesh.nc:
            raise CoefficientError(f"per-cell table has {table.shape[0]} rows, mesh has {mesh.nc} cells")
        return cls(table.shape[1:], None, mesh.dim, table=table, mesh=mesh, label="cells")


def identity_matrix(dim):
    return Field.constant(np.eye(dim), dim)


def combine(coefs, fields):
    """Linear combination sum_k c_k F_k of same-shape fields."""
    coefs = [float(c) for c in coefs]
    fields = list(fields)
    shape, dim = fields[0].shape, fields[0].dim

    def func(x):
        out = np.zeros((x.shape[0],) + shape)
        for c, f in zip(coefs, fields):
            if c != 0.0:
                out = out + c * f(x)
        return out

    feats = tuple(ft for f in fields for ft in f.features)
    return Field(shape, func, dim, features=feats, label="combination")


@dataclass
class CoefficientSet:
    """Data (A, E, a, f) of -div(A grad u + E u) + a u = f."""

    A: Field
    E: Field
    a: Field
    f: Field
    alpha: float = 1.0
    gamma: float = 0.0
    p: float | None = None  # integrability exponent of E when dim == 2

    @property
    def dim(self):
        return self.E.dim

    @property
    def features(self):
        return tuple(ft for fld in (self.A, self.E, self.a, self.f) for ft in fld.features)

    def with_(self, **changes):
        return replace(self, **changes)

    def validate(self, points, seed=0, nrandom=8):
        """Sampled ellipticity, a >= gamma and boundedness checks at ``points``."""
        if self.alpha <= 0:
            raise CoefficientError(f"alpha must be positive, got {self.alpha}")
        if self.gamma < 0:
            raise CoefficientError(f"gamma must be nonnegative, got {self.gamma}")
        dim = self.dim
        for fld, shape in ((self.A, (dim, dim)), (self.E, (dim,)), (self.a, ()), (self.f, ())):
            if fld.shape != shape:
                raise CoefficientError(f"field {fld!r} has shape {fld.shape}, expected {shape}")
        A = self.A(points)
        if not np.all(np.isfinite(A)):
            raise CoefficientError("A is not bounded on the sample set")
        rng = np.random.default_rng(seed)
        xis = np.vstack([np.eye(dim), rng.standard_normal((nrandom, dim))])
        quad = np.einsum("ki,pij,kj->pk", xis, A, xis)
        floor = self.alpha * np.sum(xis ** 2, axis=1)
        bad = quad < floor[None, :] * (1 - 1e-12)
        if bad.any():
            p = np.flatnonzero(bad.any(axis=1))[0]
            raise CoefficientError(f"ellipticity A xi.xi >= {self.alpha}|xi|^2 fails at x={points[p]}")
        a = self.a(points)
        if np.any(a < self.gamma - 1e-14):
            p = int(np.argmin(a))
            raise CoefficientError(f"a(x) >= gamma={self.gamma} fails at x={points[p]} (a={a[p]})")


def coefficient_set(dim, A="1", E=None, a="0", f="1", alpha=1.0, gamma=0.0, p=None):
    """CoefficientSet from expression specs (strings, numbers or lists)."""
    E = ["0"] * dim if E is None else E

    def norm(spec):
        if isinstance(spec, (list, tuple)):
            return [norm(s) for s in spec]
        return repr(float(spec)) if isinstance(spec, (int, float)) else spec

    def mk(spec, shape):
        return spec if isinstance(spec, Field) else Field.from_expr(norm(spec), dim, shape=shape)

    return CoefficientSet(mk(A, (dim, dim)), mk(E, (dim,)), mk(a, ()), mk(f, ()),
                          float(alpha), float(gamma), p)


def integrability_exponent(dim, p=None):
    """r = N when N > 2; r = p (> 2, user-declared) when N = 2."""
    if dim > 2:
        return float(dim)
    if p is None or p <= 2:
        raise CoefficientError(f"N=2 needs a declared exponent p > 2, got {p}")
    return float(p)


def bump_constant(dim, r, radius):
    """c with int (c (1 - |y/radius|^2)_+^2)^r dy = 1 over R^dim."""
    log_int = (dim * math.log(radius) + 0.5 * dim * math.log(math.pi)
               + gammaln(2 * r + 1) - gammaln(0.5 * dim + 2 * r + 1))
    return math.exp(-log_int / r)


@dataclass
class DriftSequenceSpec:
    """Recipe for the drift sequence E_n."""

    kind: str
    dim: int
    E0: Field | None = None
    beta: float = 1.0
    x0: tuple | None = None
    direction: tuple | None = None
    radius: float = 0.5
    r: float | None = None
    box: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "oscillatory", "concentrating"):
            raise CoefficientError(f"unknown drift kind {self.kind!r}")
        if self.beta < 0:
            raise CoefficientError(f"beta must be >= 0, got {self.beta}")
        if self.E0 is None:
            self.E0 = Field.constant(np.zeros(self.dim), self.dim)
        if self.box is None:
            self.box = ((0.0, 1.0),) * self.dim
        if self.r is None:
            self.r = float(self.dim) if self.dim > 2 else 4.0
        if self.x0 is None:
            self.x0 = tuple(0.5 * (lo + hi) for lo, hi in self.box)
        if self.direction is None:
            self.direction = (1.0,) + (0.0,) * (self.dim - 1)
        d = np.asarray(self.direction, dtype=float)
        self.direction = tuple(d / np.linalg.norm(d))
        if self.kind == "concentrating":
            inside = all(lo <= c <= hi for c, (lo, hi) in zip(self.x0, self.box))
            if not inside:
                raise CoefficientError(f"x0={self.x0} lies outside the box {self.box}")
            if self.radius <= 0:
                raise CoefficientError("bump radius must be positive")

    def profile(self, y):
        """Bump psi(y) = c (1 - |y/radius|^2)_+^2 with int psi^r = 1."""
        c = bump_constant(self.dim, self.r, self.radius)
        t = np.sum(np.asarray(y) ** 2, axis=-1) / self.radius ** 2
        return c * np.maximum(0.0, 1.0 - t) ** 2


def make_drift_field(spec, n):
    """E_n for the given sequence spec and index n >= 1."""
    if n < 1:
        raise CoefficientError(f"n must be >= 1, got {n}")
    dim, E0 = spec.dim, spec.E0
    if spec.kind == "constant":
        return E0
    if spec.kind == "oscillatory":
        beta = spec.beta

        def func(x):
            osc = np.zeros((x.shape[0], dim))
            osc[:, 0] = np.cos(2 * np.pi * n * x[:, 0])
            osc[:, 1] = np.sin(2 * np.pi * n * x[:, 0])
            return E0(x) + beta * osc

        feats = E0.features + (Feature(length=1.0 / (2 * n)),)
        return Field((dim,), func, dim, features=feats, exponent=spec.r,
                     label=f"oscillatory n={n}")
    x0 = np.asarray(spec.x0)
    d = np.asarray(spec.direction)
    amp = spec.beta * n ** (dim / spec.r)

    def func(x):
        bump = spec.profile(n * (x - x0))
        return E0(x) + amp * bump[:, None] * d[None, :]

    feats = E0.features + (Feature(length=spec.radius / (2 * n), center=tuple(x0),
                                   radius=spec.radius / n),)
    return Field((dim,), func, dim, features=feats, exponent=spec.r,
                 label=f"concentrating n={n}")


def integration_mesh(spec, divisions=None):
    if divisions is None:
        divisions = 8 if spec.dim == 3 else 16
    return build_box_mesh(spec.dim, (divisions,) * spec.dim, spec.box)


def field_quadrature(fld, mesh):
    return CellQuadrature(mesh, fld.features)


def lp_integral(fld, r, mesh):
    """int |F|^r dx by feature-aware composite quadrature."""
    q = field_quadrature(fld, mesh)
    vals = np.linalg.norm(np.asarray(fld(q.points, q.cell, mesh)).reshape(len(q), -1), axis=1) ** r
    q.check_finite(vals)
    return q.integrate(vals)


def equi_integrability_profile(spec, n_list, M_list, mesh=None):
    """theta[i, j] = int_{|E_n| > M} |E_n|^r dx for n = n_list[i], M = M_list[j]."""
    n_list, M_list = list(n_list), np.asarray(M_list, dtype=float)
    if not n_list or M_list.size == 0:
        raise ValueError("n_list and M_list must be nonempty")
    if np.any(np.diff(M_list) <= 0):
        raise ValueError("M_list must be increasing")
    mesh = mesh or integration_mesh(spec)
    theta = np.zeros((len(n_list), M_list.size))
    for i, n in enumerate(n_list):
        En = make_drift_field(spec, n)
        q = field_quadrature(En, mesh)
        mag = np.linalg.norm(En(q.points, q.cell, mesh), axis=1)
        q.check_finite(mag, "drift magnitude")
        powr = mag ** spec.r
        for j, M in enumerate(M_list):
            theta[i, j] = q.integrate(np.where(mag > M, powr, 0.0))
    return theta


def sine_dictionary(dim, size=6):
    """Scalar test functions prod_i sin(k_i pi x_i) on the unit box, low frequencies first."""
    freqs = sorted(
        (k for k in np.ndindex(*(4,) * dim) if all(ki >= 1 for ki in k)),
        key=lambda k: (sum(k), tuple(-ki for ki in k)))[:size]
    out = []
    for k in freqs:
        src = "*".join(f"sin({ki}*pi*x{i + 1})" for i, ki in enumerate(k))
        out.append(Field.from_expr(src, dim))
    return out


def vector_dictionary(dim, size=6):
    """Sine products times the unit diagonal direction."""
    diag = np.ones(dim) / math.sqrt(dim)
    out = []
    for s in sine_dictionary(dim, size):
        out.append(Field((dim,), lambda x, s=s: s(x)[:, None] * diag[None, :], dim, label=s.label))
    return out


def weak_limit_probe(spec, n_list, dictionary, mesh=None):
    """pairings[i, j] = int E_n . phi_j dx for n = n_list[i]."""
    dictionary = list(dictionary)
    if not dictionary:
        raise ValueError("dictionary must be nonempty")
    mesh = mesh or integration_mesh(spec)
    out = np.zeros((len(n_list), len(dictionary)))
    for i, n in enumerate(n_list):
        En = make_drift_field(spec, n)
        q = field_quadrature(En, mesh)
        ev = En(q.points, q.cell, mesh)
        for j, phi in enumerate(dictionary):
            out[i, j] = q.integrate(np.einsum("qd,qd->q", ev, phi(q.points)))
    return out


__all__ = [
    "CoefficientError", "CoefficientSet", "DriftSequenceSpec", "Field", "QuadratureError",
    "bump_constant", "coefficient_set", "combine", "equi_integrability_profile",
    "identity_matrix", "integrability_exponent", "integration_mesh", "lp_integral",
    "make_drift_field", "sine_dictionary", "vector_dictionary", "weak_limit_probe",
]
