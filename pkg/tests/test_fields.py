import math

import numpy as np
import pytest
from scipy import integrate

from driftlab.fields import (CoefficientError, DriftSequenceSpec, Field, bump_constant,
                             coefficient_set, equi_integrability_profile, integrability_exponent,
                             lp_integral, make_drift_field, sine_dictionary, vector_dictionary,
                             weak_limit_probe, integration_mesh)
from driftlab.mesh import build_box_mesh


def sphere_area(dim):
    return 2 * math.pi ** (dim / 2) / math.gamma(dim / 2)


@pytest.mark.parametrize("dim,r,rho", [(3, 3.0, 0.5), (2, 4.0, 0.5), (3, 4.5, 0.2), (2, 3.0, 1.0)])
def test_bump_constant_against_radial_quadrature(dim, r, rho):
    c = bump_constant(dim, r, rho)
    val, _ = integrate.quad(lambda t: (c * (1 - (t / rho) ** 2) ** 2) ** r * t ** (dim - 1), 0, rho)
    assert sphere_area(dim) * val == pytest.approx(1.0, rel=1e-10)


@pytest.mark.parametrize("n", [1, 4, 16])
def test_concentrating_sequence_has_constant_lr_norm(n):
    spec = DriftSequenceSpec("concentrating", 3, beta=2.0, x0=(0.5, 0.5, 0.5))
    En = make_drift_field(spec, n)
    assert lp_integral(En, 3.0, integration_mesh(spec)) == pytest.approx(8.0, rel=1e-5)


def test_concentrating_off_centre_bump_keeps_mass_inside_box():
    spec = DriftSequenceSpec("concentrating", 2, beta=1.0, r=4.0, x0=(0.7, 0.4), radius=0.25)
    En = make_drift_field(spec, 8)
    assert lp_integral(En, 4.0, integration_mesh(spec)) == pytest.approx(1.0, rel=1e-5)


def test_oscillatory_amplitude_and_weak_limit():
    E0 = Field.constant([1.0, 0.0], 2)
    spec = DriftSequenceSpec("oscillatory", 2, E0=E0, beta=3.0, r=4.0)
    x = np.random.default_rng(0).random((50, 2))
    for n in (1, 5):
        diff = make_drift_field(spec, n)(x) - E0(x)
        assert np.allclose(np.linalg.norm(diff, axis=1), 3.0)
    dic = vector_dictionary(2, 3)
    mesh = build_box_mesh(2, 8)
    pair = weak_limit_probe(spec, [1, 2, 4, 8, 16], dic, mesh)
    limit = weak_limit_probe(DriftSequenceSpec("constant", 2, E0=E0, r=4.0), [1], dic, mesh)[0]
    gaps = np.abs(pair - limit).max(axis=1)
    assert gaps[-1] < gaps[0] / 4


def test_concentrating_weak_probe_vanishes():
    spec = DriftSequenceSpec("concentrating", 3, beta=1.0)
    pair = weak_limit_probe(spec, [1, 4, 16], vector_dictionary(3, 2))
    mags = np.abs(pair).max(axis=1)
    assert mags[2] < mags[1] < mags[0]


def test_equi_integrability_profiles():
    osc = DriftSequenceSpec("oscillatory", 2, E0=Field.constant([1.0, 0.0], 2), beta=2.0, r=4.0)
    theta = equi_integrability_profile(osc, [1, 8], [0.5, 10.0], build_box_mesh(2, 8))
    assert np.allclose(theta[:, 1], 0.0)
    con = DriftSequenceSpec("concentrating", 3, beta=1.0)
    theta = equi_integrability_profile(con, [1, 4, 16], [2.0, 8.0])
    # the tail mass int_{|E_n|>M} |E_n|^3 tends to the full mass 1
    assert theta[-1, 0] > theta[0, 0] and theta[-1, 1] > theta[0, 1]
    assert np.all(theta <= 1.0 + 1e-6)
    with pytest.raises(ValueError):
        equi_integrability_profile(con, [1], [3.0, 2.0])


@pytest.mark.parametrize("kwargs", [dict(kind="spiral"), dict(kind="oscillatory", beta=-1.0),
                                    dict(kind="concentrating", x0=(2.0, 0.5, 0.5)),
                                    dict(kind="concentrating", radius=0.0)])
def test_invalid_drift_specs(kwargs):
    with pytest.raises(CoefficientError):
        DriftSequenceSpec(dim=3, **kwargs)


def test_n_must_be_positive():
    with pytest.raises(CoefficientError):
        make_drift_field(DriftSequenceSpec("oscillatory", 2, r=4.0), 0)


def test_integrability_exponent():
    assert integrability_exponent(3) == 3.0
    assert integrability_exponent(2, 4.0) == 4.0
    for p in (None, 2.0):
        with pytest.raises(CoefficientError):
            integrability_exponent(2, p)


def test_scalar_A_means_multiple_of_identity():
    cs = coefficient_set(2, A="2 + x1")
    A = cs.A(np.array([[0.5, 0.1]]))
    assert np.allclose(A[0], 2.5 * np.eye(2))


def test_validation_catches_bad_coefficients():
    pts = build_box_mesh(2, 4).vertices
    coefficient_set(2, A=[[2, 1], [-1, 1]], a="1", gamma=1.0).validate(pts)
    with pytest.raises(CoefficientError, match="ellipticity"):
        coefficient_set(2, A="0.5").validate(pts)
    with pytest.raises(CoefficientError, match="gamma"):
        coefficient_set(2, a="x1", gamma=0.5).validate(pts)
    with pytest.raises(CoefficientError):
        coefficient_set(2, E=["x3", "0"])


def test_per_cell_table_field():
    mesh = build_box_mesh(2, 2)
    fld = Field.from_cells(mesh, np.arange(mesh.nc, dtype=float))
    x = mesh.barycenters
    assert np.allclose(fld(x), np.arange(mesh.nc))
    with pytest.raises(CoefficientError):
        Field.from_cells(mesh, np.zeros(3))


def test_sine_dictionary_orthogonality():
    mesh = build_box_mesh(2, 16)
    from driftlab.quadrature import CellQuadrature
    q = CellQuadrature(mesh)
    d = sine_dictionary(2, 6)
    gram = np.array([[q.integrate(a(q.points) * b(q.points)) for b in d] for a in d])
    assert np.allclose(gram, 0.25 * np.eye(6), atol=1e-6)
