"""Acceptance criteria at their stated tolerances, one test per criterion."""
import warnings

import numpy as np
import pytest

import driftlab.experiments as ex
from driftlab.assembly import PecletWarning, assemble_adjoint, assemble_primal
from driftlab.cli import main
from driftlab.config import ControlConfig
from driftlab.control import eval_gradient, finite_difference_gradient, optimize, problem_from_config
from driftlab.verify import transpose_cases


def series(report, metric, delta=None):
    vals = report.values(metric, delta)
    return [vals[n] for n in sorted(vals) if n]


def quiet(fn, *args):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PecletWarning)
        return fn(*args)


@pytest.fixture(scope="module")
def concentrating():
    cfg = ex.default_config("homogenize", kind="concentrating")
    assert cfg.dim == 3 and cfg.n_list == [1, 2, 4, 8, 16, 32]
    return quiet(ex.run_homogenization, cfg)


@pytest.fixture(scope="module")
def oscillatory():
    return quiet(ex.run_homogenization, ex.default_config("homogenize", kind="oscillatory"))


@pytest.fixture(scope="module")
def sweep():
    cfg = ex.default_config("delta-sweep")
    assert cfg.level == 3 and cfg.delta_list == [1e-1, 1e-2, 1e-3, 1e-4, 1e-5]
    return cfg, quiet(ex.run_delta_sweep, cfg)


def test_01_mms_orders(record):
    r2 = ex.run_mms_convergence(ex.default_config("mms", dim=2))
    r3 = ex.run_mms_convergence(ex.default_config("mms", dim=3))
    h2 = sorted({r.h for r in r2.rows}, reverse=True)
    h3 = sorted({r.h for r in r3.rows}, reverse=True)
    assert h2 == [1 / 8, 1 / 16, 1 / 32, 1 / 64] and h3 == [1 / 4, 1 / 8, 1 / 16]
    l2, h1, l3 = r2.summary["L2 order"], r2.summary["H1 order"], r3.summary["L2 order"]
    ok = l2 >= 1.9 and h1 >= 0.9 and l3 >= 1.8
    assert record("criterion 1 (MMS orders)", ok,
                  f"2D L2 {l2:.3f} >= 1.9, 2D H1 {h1:.3f} >= 0.9, 3D L2 {l3:.3f} >= 1.8")


def test_02_adjoint_transpose(record):
    cases = transpose_cases()
    assert len(cases) == 12
    worst = 0.0
    for mesh, coeffs in cases:
        P, _ = quiet(assemble_primal, mesh, coeffs)
        D, _ = quiet(assemble_adjoint, mesh, coeffs)
        worst = max(worst, abs(D.matrix - P.matrix.T).max() / abs(P.matrix).max())
    assert record("criterion 2 (adjoint transpose)", worst <= 1e-13, f"max relative gap {worst:.2e} <= 1e-13")


def test_03_estimate_ratios_stable(record, concentrating):
    details, ok = [], True
    for metric in ("R", "R_t=2", "R_t=4", "R_t=6"):
        v = np.array(series(concentrating, metric))
        med = np.median(v)
        tail = v[len(v) // 2:]
        good = np.all(tail <= 1.5 * med) and np.all(tail >= med / 1.5)
        ok &= bool(good)
        details.append(f"{metric} last half/median in [{tail.min() / med:.2f}, {tail.max() / med:.2f}]")
    h1 = series(concentrating, "u_H1")
    details.append(f"u_H1 in [{min(h1):.3g}, {max(h1):.3g}]")
    assert not concentrating.failures
    assert record("criterion 3 (estimate ratios within 1.5x median)", ok, "; ".join(details))


def test_04_energy_bound(record, sweep):
    _, rep = sweep
    lhs = {(r.n, r.delta): r.value for r in rep.rows if r.metric == "energy_lhs"}
    rhs = {(r.n, r.delta): r.value for r in rep.rows if r.metric == "energy_rhs"}
    steps = [r.value for r in rep.rows if r.metric == "newton_steps"]
    assert len(lhs) == 30 and not rep.failures
    gap = max(lhs[k] - rhs[k] for k in lhs)
    ok = gap <= 1e-6 and max(steps) <= 25
    assert record("criterion 4 (energy bound, Newton steps)", ok,
                  f"max lhs - rhs {gap:.3g} <= 1e-6; max Newton steps {int(max(steps))} <= 25")


def test_05_delta_consistency(record, sweep):
    cfg, rep = sweep
    ok, finals = True, []
    for n in cfg.n_list:
        v = [rep.values("w_u_L2_diff", d)[n] for d in cfg.delta_list]
        ok &= all(b < a for a, b in zip(v, v[1:]))
        finals.append(v[-1])
    ok &= max(finals) <= 1e-4
    assert record("criterion 5 (delta -> 0)", ok,
                  f"decreasing along delta for all n; max at 1e-5: {max(finals):.3g} <= 1e-4")


@pytest.mark.parametrize("kind", ["concentrating", "oscillatory"])
def test_06_homogenization_trend(record, kind, request):
    rep = request.getfixturevalue(kind)
    bad = []
    for m in (1, 2, 4):
        s = series(rep, f"trunc_L2_diff[m={m}]")
        if not max(s[-2:]) < min(s[:2]):
            bad.append(f"m={m}")
        gap = series(rep, f"weak_gap[m={m}]")
        if not gap[-1] * 2 <= gap[0]:
            bad.append(f"weak gap m={m}")
    for q in (1, 2):
        s = series(rep, f"log_L2_diff[q={q}]")
        if not max(s[-2:]) < min(s[:2]):
            bad.append(f"q={q}")
    shrink = min(series(rep, f"weak_gap[m={m}]")[0] / series(rep, f"weak_gap[m={m}]")[-1] for m in (1, 2, 4))
    assert record(f"criterion 6 (homogenization trend, {kind})", not bad,
                  ("failing " + ", ".join(bad) + "; " if bad else "all trends strict; ")
                  + f"smallest weak-gap shrink {shrink:.3g}x >= 2x")


def test_07_equi_integrable_convergence(record, oscillatory):
    s = series(oscillatory, "u_L2_diff")
    ok = all(b < a for a, b in zip(s, s[1:])) and s[-1] <= s[0] / 4
    assert record("criterion 7 (oscillatory full-norm convergence)", ok,
                  f"||u_n - u_0|| {s[0]:.3g} -> {s[-1]:.3g}, decreasing, final <= first/4")


def test_08_l1_bound(record):
    rep = ex.run_l1_check(ex.default_config("l1-check"))
    ratios = [rep.values(f"u_L1[gamma={g}]")[None] / rep.values(f"bound[gamma={g}]")[None] for g in (1, 10)]
    assert record("criterion 8 (L1 bound)", max(ratios) <= 1.02,
                  f"||u||_L1 / (||f||_L1/gamma) = {ratios[0]:.4f} (gamma=1), {ratios[1]:.4f} (gamma=10) <= 1.02")


def test_09_control(record):
    cfg = ControlConfig()
    prob = problem_from_config(cfg)
    assert prob.size == 3
    c = np.asarray(cfg.c0, dtype=float)
    g, fd = eval_gradient(prob, c), finite_difference_gradient(prob, c, 1e-5)
    rel = np.linalg.norm(g - fd) / np.linalg.norm(fd)
    J = [t[1] for t in optimize(prob, cfg.c0, steps=cfg.steps).trace]
    mono = all(b <= a for a, b in zip(J, J[1:]))
    big = optimize(problem_from_config(cfg.replace(mu=1e6)), cfg.c0, steps=cfg.steps)
    cn = np.linalg.norm(big.c)
    ok = rel <= 1e-5 and mono and cn <= 1e-3
    assert record("criterion 9 (control gradient and descent)", ok,
                  f"FD relative error {rel:.2e} <= 1e-5; trace nonincreasing {mono}; mu=1e6 ||c|| {cn:.2e} <= 1e-3")


def test_10_determinism(record, tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", PecletWarning)
            assert main(["homogenize", "--out", str(out)]) == 0
        outs.append((out / "homogenize.csv").read_bytes())
    assert record("criterion 10 (determinism)", outs[0] == outs[1],
                  f"two default homogenize runs byte-identical ({len(outs[0])} bytes)")


def test_verify_command_passes(record, tmp_path, capsys):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PecletWarning)
        code = main(["verify", "--out", str(tmp_path)])
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith(("PASS", "FAIL"))]
    assert record("verify subcommand", code == 0, f"exit {code}, {len(lines)} properties reported")
