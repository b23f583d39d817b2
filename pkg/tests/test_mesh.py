import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftlab.mesh import MeshError, build_box_mesh, level_mesh, refine


def facets(mesh):
    count = Counter()
    for cell in mesh.cells:
        for face in itertools.combinations(sorted(cell), mesh.dim):
            count[face] += 1
    return count


@pytest.mark.parametrize("dim,divs", [(2, (1, 1)), (2, (3, 5)), (3, (1, 1, 1)), (3, (2, 3, 2))])
def test_cell_count_and_volume_tiling(dim, divs):
    box = [(0.0, 2.0), (-1.0, 1.0), (0.5, 1.0)][:dim]
    mesh = build_box_mesh(dim, divs, box)
    assert mesh.nc == math.factorial(dim) * math.prod(divs)
    assert mesh.nv == math.prod(n + 1 for n in divs)
    assert np.all(mesh.volumes > 0)
    assert mesh.volumes.sum() == pytest.approx(math.prod(hi - lo for lo, hi in box), rel=1e-13)


@pytest.mark.parametrize("dim,divs", [(2, (4, 3)), (3, (2, 2, 3))])
def test_conforming_facets(dim, divs):
    mesh = build_box_mesh(dim, divs)
    for face, k in facets(mesh).items():
        assert k in (1, 2)
        if k == 1:
            # exterior facets lie on the box boundary
            assert all(mesh.boundary[v] for v in face)


def test_two_by_two_square_by_hand():
    mesh = build_box_mesh(2, 2)
    assert mesh.nv == 9 and mesh.nc == 8
    assert mesh.interior.tolist() == [4]
    assert mesh.h == pytest.approx(math.sqrt(0.5))
    assert np.allclose(mesh.vertices[4], [0.5, 0.5])


def test_refinement_is_nested():
    coarse = build_box_mesh(3, (1, 2, 1))
    fine = refine(coarse)
    assert fine.divisions == (2, 4, 2)
    fine_set = {tuple(np.round(v, 12)) for v in fine.vertices}
    assert all(tuple(np.round(v, 12)) in fine_set for v in coarse.vertices)
    assert fine.h == pytest.approx(coarse.h / 2)


def test_level_mesh_divisions():
    assert level_mesh(2, 3).divisions == (8, 8)
    assert level_mesh(3, 1, base=3).divisions == (6, 6, 6)


@pytest.mark.parametrize("args", [(4, 2), (2, 0), (2, (2, -1)), (2, 2, [(0, 1)]), (2, 2, [(0, 1), (1, 1)])])
def test_invalid_meshes(args):
    with pytest.raises(MeshError):
        build_box_mesh(*args)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([2, 3]), st.integers(1, 4), st.integers(0, 2 ** 31 - 1))
def test_locate_returns_containing_cell(dim, n, seed):
    mesh = build_box_mesh(dim, n)
    x = np.random.default_rng(seed).random((20, dim))
    cells = mesh.locate(x)
    G = mesh.grads[cells]
    rel = x - mesh.coords[cells, 0]
    lam = np.einsum("qkd,qd->qk", G[:, 1:, :], rel)
    bary = np.column_stack([1 - lam.sum(axis=1), lam])
    assert np.all(bary >= -1e-12)


def test_gradients_sum_to_zero_and_reproduce_linears():
    mesh = build_box_mesh(3, 2)
    assert np.allclose(mesh.grads.sum(axis=1), 0, atol=1e-12)
    lin = mesh.vertices @ np.array([1.0, -2.0, 3.0])
    g = np.einsum("ci,cid->cd", lin[mesh.cells], mesh.grads)
    assert np.allclose(g, [1.0, -2.0, 3.0])


def test_lumped_mass_sums_to_measure():
    mesh = build_box_mesh(2, (3, 4), [(0, 3), (0, 1)])
    assert mesh.lumped_mass.sum() == pytest.approx(3.0)


def test_write_format(tmp_path):
    mesh = build_box_mesh(2, 1)
    path = tmp_path / "m.txt"
    mesh.write(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "2 4 2"
    assert len(lines) == 1 + 4 + 2
    assert lines[-1].split() == [str(i) for i in mesh.cells[-1]]
