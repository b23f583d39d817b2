"""Structured Kuhn (Freudenthal) simplicial meshes of axis-aligned boxes."""
from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class MeshError(ValueError):
    pass


def _permutations(dim):
    return list(itertools.permutations(range(dim)))


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming simplicial mesh of a box.

    Vertices are numbered lexicographically by grid index (first axis
    slowest). Cells are numbered by grid cell, then by the Kuhn permutation
    in ``itertools.permutations`` order.
    """

    dim: int
    box: tuple
    divisions: tuple
    vertices: np.ndarray
    cells: np.ndarray
    boundary: np.ndarray  # bool mask over vertices
    h: float

    @property
    def boundary_nodes(self):
        return set(np.flatnonzero(self.boundary).tolist())

    @property
    def nv(self):
        return len(self.vertices)

    @property
    def nc(self):
        return len(self.cells)

    @cached_property
    def tag(self):
        key = repr((self.dim, self.box, self.divisions)).encode()
        return hashlib.sha256(key).hexdigest()[:12]

    @cached_property
    def interior(self):
        return np.flatnonzero(~self.boundary)

    @cached_property
    def spacing(self):
        return np.array([(hi - lo) / n for (lo, hi), n in zip(self.box, self.divisions)])

    @cached_property
    def lower(self):
        return np.array([lo for lo, _ in self.box], dtype=float)

    @property
    def measure(self):
        return float(np.prod([hi - lo for lo, hi in self.box]))

    @cached_property
    def coords(self):
        """Cell vertex coordinates, shape (nc, dim+1, dim)."""
        return self.vertices[self.cells]

    @cached_property
    def edge_matrix(self):
        c = self.coords
        return c[:, 1:, :] - c[:, :1, :]

    @cached_property
    def volumes(self):
        det = np.linalg.det(self.edge_matrix)
        return det / math.factorial(self.dim)

    @cached_property
    def grads(self):
        """Gradients of the barycentric coordinates, shape (nc, dim+1, dim)."""
        inv = np.linalg.inv(self.edge_matrix)
        g = np.empty((self.nc, self.dim + 1, self.dim))
        g[:, 1:, :] = np.transpose(inv, (0, 2, 1))
        g[:, 0, :] = -g[:, 1:, :].sum(axis=1)
        return g

    @cached_property
    def diameters(self):
        c = self.coords
        d = 0.0
        for i, j in itertools.combinations(range(self.dim + 1), 2):
            d = np.maximum(d, np.linalg.norm(c[:, i] - c[:, j], axis=1))
        return d

    @cached_property
    def barycenters(self):
        return self.coords.mean(axis=1)

    @cached_property
    def lumped_mass(self):
        """Row sums of the P1 mass matrix over all vertices."""
        share = np.repeat(self.volumes / (self.dim + 1), self.dim + 1)
        return np.bincount(self.cells.ravel(), weights=share, minlength=self.nv)

    @cached_property
    def _perm_lookup(self):
        table = np.full(self.dim ** self.dim, -1, dtype=np.int64)
        for k, perm in enumerate(_permutations(self.dim)):
            code = sum(p * self.dim ** i for i, p in enumerate(perm))
            table[code] = k
        return table

    def locate(self, x):
        """Index of a cell containing each point of ``x`` (shape (npts, dim))."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = (x - self.lower) / self.spacing
        div = np.asarray(self.divisions)
        g = np.clip(np.floor(t).astype(np.int64), 0, div - 1)
        frac = t - g
        # Kuhn simplex containing a point: coordinates sorted by decreasing fraction
        perm = np.argsort(-frac, axis=1, kind="stable")
        code = (perm * self.dim ** np.arange(self.dim)).sum(axis=1)
        k = self._perm_lookup[code]
        gridcell = np.ravel_multi_index(tuple(g.T), tuple(div))
        return gridcell * math.factorial(self.dim) + k

    def write(self, path):
        """Dump as text: header ``dim nv nc``, vertex lines, 0-based cell lines."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{self.dim} {self.nv} {self.nc}\n")
            for v in self.vertices:
                fh.write(" ".join(f"{c:.17e}" for c in v) + "\n")
            for c in self.cells:
                fh.write(" ".join(str(int(i)) for i in c) + "\n")


def build_box_mesh(dim, divisions, box=None):
    """Kuhn triangulation of ``box`` with ``divisions`` grid cells per axis.

    Each grid cell is split into ``dim!`` simplices sharing the main diagonal.
    """
    if dim not in (2, 3):
        raise MeshError(f"dim must be 2 or 3, got {dim}")
    divisions = tuple(int(n) for n in np.broadcast_to(divisions, (dim,)))
    if any(n < 1 for n in divisions):
        raise MeshError(f"divisions must be >= 1, got {divisions}")
    if box is None:
        box = ((0.0, 1.0),) * dim
    box = tuple((float(lo), float(hi)) for lo, hi in box)
    if len(box) != dim:
        raise MeshError(f"box has {len(box)} axes, expected {dim}")
    if any(not hi > lo for lo, hi in box):
        raise MeshError(f"degenerate box {box}")

    axes = [np.linspace(lo, hi, n + 1) for (lo, hi), n in zip(box, divisions)]
    grid = np.meshgrid(*axes, indexing="ij")
    vertices = np.stack([g.ravel() for g in grid], axis=1)
    shape = tuple(n + 1 for n in divisions)

    corners = np.stack(np.meshgrid(*[np.arange(n) for n in divisions], indexing="ij"), axis=-1)
    corners = corners.reshape(-1, dim)
    cells = []
    for perm in _permutations(dim):
        path = [np.zeros(dim, dtype=np.int64)]
        for axis in perm:
            step = path[-1].copy()
            step[axis] += 1
            path.append(step)
        idx = [np.ravel_multi_index(tuple((corners + p).T), shape) for p in path]
        cells.append(np.stack(idx, axis=1))
    nperm = len(cells)
    cells = np.stack(cells, axis=1).reshape(-1, dim + 1)
    assert cells.shape[0] == corners.shape[0] * nperm

    # consistent positive orientation
    edges = vertices[cells[:, 1:]] - vertices[cells[:, :1]]
    neg = np.linalg.det(edges) < 0
    cells[neg, 0], cells[neg, 1] = cells[neg, 1].copy(), cells[neg, 0].copy()

    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    boundary = np.any(np.isclose(vertices, lo, rtol=0, atol=1e-14 * (hi - lo))
                      | np.isclose(vertices, hi, rtol=0, atol=1e-14 * (hi - lo)), axis=1)
    h = float(np.linalg.norm([(b - a) / n for (a, b), n in zip(box, divisions)]))
    return Mesh(dim, box, divisions, vertices, cells, boundary, h)


def refine(mesh):
    """Uniform refinement: doubles the divisions on every axis (nested)."""
    return build_box_mesh(mesh.dim, tuple(2 * n for n in mesh.divisions), mesh.box)


def level_mesh(dim, level, base=1, box=None):
    """Mesh with ``base * 2**level`` divisions per axis."""
    return build_box_mesh(dim, (base * 2 ** level,) * dim, box)
