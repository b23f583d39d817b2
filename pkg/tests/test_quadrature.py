import itertools
import math

import numpy as np
import pytest

from driftlab.mesh import build_box_mesh
from driftlab.quadrature import (CellQuadrature, Feature, QuadratureError, composite_rule,
                                 feature_leaves, simplex_rule)


def monomial_integral(powers):
    """int over the reference simplex of prod x_i^a_i = prod a_i! / (d + sum a)!."""
    d = len(powers)
    return math.prod(math.factorial(a) for a in powers) / math.factorial(d + sum(powers))


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("level", [0, 1, 2])
def test_exact_for_degree_four(dim, level):
    pts, wts = composite_rule(dim, level)
    vol = 1 / math.factorial(dim)
    assert wts.sum() == pytest.approx(1.0, abs=1e-14)
    for powers in itertools.product(range(5), repeat=dim):
        if sum(powers) > 4:
            continue
        approx = vol * np.dot(wts, np.prod(pts ** np.array(powers), axis=1))
        assert approx == pytest.approx(monomial_integral(powers), rel=1e-12, abs=1e-16)


@pytest.mark.parametrize("dim", [2, 3])
def test_weights_positive_and_points_inside(dim):
    pts, wts = simplex_rule(dim)
    assert np.all(wts > 0)
    assert np.all(pts >= 0) and np.all(pts.sum(axis=1) <= 1)


def test_cell_quadrature_integrates_polynomial_over_box():
    mesh = build_box_mesh(3, 2, [(0, 1), (0, 2), (-1, 1)])
    q = CellQuadrature(mesh)
    x = q.points
    # int x1^2 x2 x3^2 over the box = (1/3)(2)(2/3)
    assert q.integrate(x[:, 0] ** 2 * x[:, 1] * x[:, 2] ** 2) == pytest.approx(4 / 9, rel=1e-12)
    assert np.allclose(q.bary.sum(axis=1), 1.0)
    assert np.all(q.bary >= -1e-12)


def test_feature_refinement_preserves_volume_and_localizes():
    mesh = build_box_mesh(2, 4)
    feat = Feature(length=0.02, center=(0.5, 0.5), radius=0.05)
    leaves, owner = feature_leaves(mesh, [feat])
    vol = np.abs(np.linalg.det(leaves[:, 1:] - leaves[:, :1])) / 2
    assert vol.sum() == pytest.approx(1.0, rel=1e-13)
    assert np.all(np.diff(owner) >= 0)
    far = mesh.locate([[0.05, 0.05]])[0]
    assert np.sum(owner == far) == 1
    q = CellQuadrature(mesh, [feat])
    assert q.cell_sum(q.weights).sum() == pytest.approx(1.0)


def test_interpolation_reproduces_linear_function():
    mesh = build_box_mesh(2, 3)
    q = CellQuadrature(mesh, [Feature(0.1)])
    lin = 2 * mesh.vertices[:, 0] - mesh.vertices[:, 1] + 0.5
    assert np.allclose(q.interpolate(lin), 2 * q.points[:, 0] - q.points[:, 1] + 0.5)


def test_check_finite_names_the_cell():
    mesh = build_box_mesh(2, 1)
    q = CellQuadrature(mesh)
    vals = np.zeros(len(q))
    vals[-1] = np.inf
    with pytest.raises(QuadratureError) as err:
        q.check_finite(vals)
    assert err.value.cell == mesh.nc - 1


def test_subdivision_limit():
    mesh = build_box_mesh(3, 2)
    with pytest.raises(QuadratureError):
        CellQuadrature(mesh, [Feature(length=1e-6)])
