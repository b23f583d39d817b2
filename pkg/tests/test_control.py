import numpy as np
import pytest

from driftlab.config import ControlConfig
from driftlab.control import (ControlError, ControlProblem, eval_gradient, eval_objective,
                              finite_difference_gradient, optimize, problem_from_config, write_trace)
from driftlab.fields import Field, coefficient_set
from driftlab.mesh import build_box_mesh
from driftlab.norms import l2_norm
from driftlab.solve import solve_primal


def basis2():
    return [Field.from_expr(b, 2, shape=(2,)) for b in ([1, 0], [0, 1], ["sin(pi*x2)", "x1"])]


def problem(G="s**2", mu=1.0, p=3.0, **kw):
    mesh = build_box_mesh(2, 6)
    return ControlProblem(mesh, coefficient_set(2, f="10*x1"), G, basis2(), mu=mu, p=p, **kw)


def test_objective_at_zero_is_state_energy():
    prob = problem()
    u0 = solve_primal(prob.mesh, coefficient_set(2, f="10*x1"))
    assert eval_objective(prob, np.zeros(3)) == pytest.approx(l2_norm(u0) ** 2, rel=1e-12)


def test_zero_cost_gradient_vanishes_at_origin_and_scales_with_mu():
    prob = problem(G="0")
    assert np.allclose(eval_gradient(prob, np.zeros(3)), 0.0)
    c = np.array([0.3, -0.2, 0.5])
    g1 = eval_gradient(problem(G="0", mu=1.0), c)
    g5 = eval_gradient(problem(G="0", mu=5.0), c)
    assert np.allclose(g5, 5 * g1, rtol=1e-12)


def test_penalty_is_midpoint_convex():
    prob = problem(G="0", p=4.0)
    rng = np.random.default_rng(3)
    for _ in range(5):
        a, b = rng.uniform(-2, 2, (2, 3))
        assert eval_objective(prob, (a + b) / 2) <= 0.5 * (eval_objective(prob, a) + eval_objective(prob, b)) + 1e-14


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("G", ["s**2", "(s - x1)**2 + sin(s)"])
def test_adjoint_gradient_matches_finite_differences(seed, G):
    prob = problem(G=G, mu=0.1)
    c = np.random.default_rng(seed).uniform(-2, 2, 3)
    g = eval_gradient(prob, c)
    fd = finite_difference_gradient(prob, c, 1e-5)
    assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


def test_explicit_G_s_is_used():
    a = problem(G="s**2")
    b = problem(G="s**2", G_s="2*s")
    c = np.array([0.5, 0.1, -0.4])
    assert np.allclose(eval_gradient(a, c), eval_gradient(b, c))


def test_descent_trace(tmp_path):
    prob = problem(mu=0.01)
    res = optimize(prob, [2.0, -1.5, 1.0], steps=15, trace_path=tmp_path / "t.csv")
    J = [t[1] for t in res.trace]
    assert all(b <= a for a, b in zip(J, J[1:]))
    assert J[1] > J[2] > J[3]
    assert res.J == J[-1]
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iter,J,grad_norm,step" and len(lines) == len(res.trace) + 1


def test_one_parameter_scan_start_is_not_worsened():
    mesh = build_box_mesh(2, 6)
    prob = ControlProblem(mesh, coefficient_set(2, f="10*x1"), "s**2", basis2()[:1], mu=0.05, p=3.0,
                          lower=-3, upper=3)
    grid = np.linspace(-3, 3, 13)
    values = [eval_objective(prob, [c]) for c in grid]
    c0 = grid[int(np.argmin(values))]
    res = optimize(prob, [c0], steps=10)
    assert res.J <= min(values)


def test_huge_weight_drives_coefficients_to_zero():
    cfg = ControlConfig(mu=1e6)
    res = optimize(problem_from_config(cfg), cfg.c0, steps=cfg.steps)
    assert np.linalg.norm(res.c) <= 1e-3


def test_bounds_are_respected():
    prob = problem(mu=1e-3, lower=-0.5, upper=0.5)
    res = optimize(prob, [2.0, -2.0, 0.0], steps=10)
    assert np.all(np.abs(res.c) <= 0.5)
    with pytest.raises(ControlError):
        eval_objective(prob, [1.0, 0.0, 0.0])


@pytest.mark.parametrize("kwargs", [dict(mu=0.0), dict(p=2.0), dict(G="-s**2"),
                                    dict(lower=1.0, upper=0.0)])
def test_invalid_problems(kwargs):
    with pytest.raises(ControlError):
        problem(**kwargs)


def test_three_dimensional_exponent_range():
    mesh = build_box_mesh(3, 2)
    basis = [Field.constant([1.0, 0.0, 0.0], 3)]
    with pytest.raises(ControlError):
        ControlProblem(mesh, coefficient_set(3), "s**2", basis, p=2.5)
    ControlProblem(mesh, coefficient_set(3), "s**2", basis, p=3.0)


def test_steps_must_be_positive():
    with pytest.raises(ControlError):
        optimize(problem(), [0, 0, 0], steps=0)


def test_write_trace_error_names_path(tmp_path):
    with pytest.raises(OSError, match="missing"):
        write_trace([(0, 1.0, 1.0, 0.0)], tmp_path / "missing" / "t.csv")
