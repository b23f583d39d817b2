"""Property checks run by ``driftlab verify`` and the acceptance tests."""
from __future__ import annotations

import filecmp
import os
import tempfile
import warnings
from dataclasses import dataclass

import numpy as np

from .assembly import PecletWarning, assemble_adjoint, assemble_primal
from .config import ControlConfig
from .control import eval_gradient, finite_difference_gradient, optimize, problem_from_config
from .experiments import (default_config, max_principle_probe, run_delta_sweep,
                          run_homogenization, run_l1_check, run_mms_convergence, write_report)
from .fields import DriftSequenceSpec, coefficient_set, make_drift_field
from .mesh import build_box_mesh


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def strict_trend(values):
    """Both of the last two values lie strictly below both of the first two."""
    v = list(values)
    return len(v) >= 4 and max(v[-2:]) < min(v[:2])


def median_window(values, factor=1.5):
    """Values over the last half stay within ``factor`` of the sequence median."""
    v = np.asarray(values, dtype=float)
    med = float(np.median(v))
    tail = v[len(v) // 2:]
    ok = bool(med > 0 and np.all(tail <= factor * med) and np.all(tail >= med / factor))
    return ok, med, tail


def _series(report, metric, delta=None):
    vals = report.values(metric, delta)
    return [vals[n] for n in sorted(vals) if n]


# ---------------------------------------------------------------- criteria

def check_mms(jobs=1):
    r2 = run_mms_convergence(default_config("mms", dim=2), jobs)
    r3 = run_mms_convergence(default_config("mms", dim=3), jobs)
    l2, h1, l3 = r2.summary["L2 order"], r2.summary["H1 order"], r3.summary["L2 order"]
    ok = l2 >= 1.9 and h1 >= 0.9 and l3 >= 1.8 and not (r2.failures or r3.failures)
    return Check("mms_convergence", ok,
                 f"2D L2 order {l2:.3f} (>=1.9), H1 order {h1:.3f} (>=0.9); 3D L2 order {l3:.3f} (>=1.8)")


def transpose_cases():
    """Twelve (mesh, coefficients) pairs mixing dimensions, A, E and a."""
    cases = []
    m2, m3 = build_box_mesh(2, (6, 6)), build_box_mesh(3, (3, 3, 3))
    osc2 = DriftSequenceSpec("oscillatory", 2, beta=2.0, r=4.0)
    con2 = DriftSequenceSpec("concentrating", 2, beta=3.0, r=4.0)
    osc3 = DriftSequenceSpec("oscillatory", 3, beta=2.0)
    con3 = DriftSequenceSpec("concentrating", 3, beta=4.0, x0=(0.3, 0.6, 0.5))
    cases.append((m2, coefficient_set(2)))
    cases.append((m2, coefficient_set(2, E=[1, 0])))
    cases.append((m2, coefficient_set(2, A=[["2", "x1"], ["-x1", "1 + x2"]], E=["x2", "-x1"], a="1")))
    cases.append((m2, coefficient_set(2, E=make_drift_field(osc2, 1), p=4.0)))
    cases.append((m2, coefficient_set(2, E=make_drift_field(osc2, 4), a="x1*x2", p=4.0)))
    cases.append((m2, coefficient_set(2, E=make_drift_field(con2, 2), p=4.0)))
    cases.append((m2, coefficient_set(2, E=make_drift_field(con2, 8), A=[[1, 0.5], [-0.5, 1]], p=4.0)))
    cases.append((m3, coefficient_set(3, E=[1, 2, 3])))
    cases.append((m3, coefficient_set(3, A=[[2, 1, 0], [0, 2, 1], [1, 0, 2]], E=["sin(pi*x3)", 0, "x1"],
                                      a="2")))
    cases.append((m3, coefficient_set(3, E=make_drift_field(osc3, 2))))
    cases.append((m3, coefficient_set(3, E=make_drift_field(con3, 1))))
    cases.append((m3, coefficient_set(3, E=make_drift_field(con3, 4), a="1 + x3")))
    return cases


def check_transpose():
    worst = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PecletWarning)
        for mesh, coeffs in transpose_cases():
            P, _ = assemble_primal(mesh, coeffs)
            D, _ = assemble_adjoint(mesh, coeffs)
            diff = abs(D.matrix - P.matrix.T).max()
            worst = max(worst, diff / abs(P.matrix).max())
    return Check("adjoint_transpose", worst <= 1e-13,
                 f"max relative entry gap {worst:.2e} over 12 coefficient sets (<=1e-13)")


def check_estimates(report):
    msgs, ok = [], True
    t_metrics = [m for m in report.metrics() if m.startswith("R_t=")]
    for metric in ["R"] + sorted(t_metrics):
        good, med, tail = median_window(_series(report, metric))
        ok &= good
        msgs.append(f"{metric} median {med:.3g}, last half in [{tail.min():.3g}, {tail.max():.3g}]")
    h1 = _series(report, "u_H1")
    return Check("estimate_stability", ok and not report.failures,
                 "; ".join(msgs) + f"; u_H1 range [{min(h1):.3g}, {max(h1):.3g}] (unconstrained)")


def check_energy(report):
    lhs = {(r.n, r.delta): r.value for r in report.rows if r.metric == "energy_lhs"}
    rhs = {(r.n, r.delta): r.value for r in report.rows if r.metric == "energy_rhs"}
    steps = [r.value for r in report.rows if r.metric == "newton_steps"]
    gap = max(lhs[k] - rhs[k] for k in lhs) if lhs else np.inf
    ok = bool(lhs) and gap <= 1e-6 and max(steps) <= 25 and not report.failures
    return Check("energy_bound", ok,
                 f"max lhs - rhs {gap:.3g} (<=1e-6) over {len(lhs)} points; "
                 f"max Newton steps {int(max(steps)) if steps else -1} (<=25)")


def check_delta_limit(report, deltas):
    ok, worst_final = True, 0.0
    ns = sorted({r.n for r in report.rows})
    for n in ns:
        vals = [report.values("w_u_L2_diff", d).get(n, np.inf) for d in deltas]
        ok &= all(b < a for a, b in zip(vals, vals[1:]))
        worst_final = max(worst_final, vals[-1])
    ok &= worst_final <= 1e-4 and not report.failures
    return Check("delta_consistency", bool(ok),
                 f"||w - u||_L2 decreasing in delta for {len(ns)} values of n; "
                 f"largest at delta={deltas[-1]:g}: {worst_final:.3g} (<=1e-4)")


def check_trend(report, label):
    bad = []
    for m in report.metrics():
        if m.startswith(("trunc_L2_diff", "log_L2_diff")) and not strict_trend(_series(report, m)):
            bad.append(m)
    ratios = []
    for m in report.metrics():
        if m.startswith("weak_gap"):
            s = _series(report, m)
            ratios.append(s[0] / s[-1] if s[-1] > 0 else np.inf)
            if ratios[-1] < 2:
                bad.append(m)
    ok = not bad and not report.failures
    return Check(f"homogenization_trend[{label}]", ok,
                 (f"failing: {', '.join(bad)}; " if bad else "truncation and log differences trend down; ")
                 + f"weak-gap shrink factors {', '.join(f'{x:.3g}' for x in ratios)} (>=2)")


def check_equi(report):
    s = _series(report, "u_L2_diff")
    ok = all(b < a for a, b in zip(s, s[1:])) and s[-1] <= 0.25 * s[0]
    return Check("equi_integrable_convergence", ok,
                 f"||u_n - u_0||_L2 from {s[0]:.3g} to {s[-1]:.3g} (final <= first/4, decreasing)")


def check_l1(report):
    ratio = report.summary["max u_L1 / bound"]
    return Check("l1_bound", ratio <= 1.02 and not report.failures,
                 f"max ||u||_L1 / (||f||_L1 / gamma) = {ratio:.4f} (<=1.02)")


def check_control():
    cfg = ControlConfig()
    prob = problem_from_config(cfg)
    c = np.asarray(cfg.c0, dtype=float)
    g = eval_gradient(prob, c)
    fd = finite_difference_gradient(prob, c, 1e-5)
    rel = float(np.linalg.norm(g - fd) / np.linalg.norm(fd))
    res = optimize(prob, cfg.c0, steps=cfg.steps)
    Js = [t[1] for t in res.trace]
    mono = all(b <= a for a, b in zip(Js, Js[1:]))
    big = optimize(problem_from_config(cfg.replace(mu=1e6)), cfg.c0, steps=cfg.steps)
    cn = float(np.linalg.norm(big.c))
    return Check("control_gradient", rel <= 1e-5 and mono and cn <= 1e-3,
                 f"adjoint vs FD relative error {rel:.2e} (<=1e-5); trace nonincreasing: {mono}; "
                 f"mu=1e6 final ||c|| {cn:.2e} (<=1e-3)")


def check_determinism(cfg, jobs=1):
    with tempfile.TemporaryDirectory() as tmp:
        paths = [os.path.join(tmp, f"run{i}.csv") for i in range(2)]
        for p in paths:
            write_report(run_homogenization(cfg, jobs), p)
        same = filecmp.cmp(*paths, shallow=False)
    return Check("determinism", same, f"two {cfg.kind} homogenization runs byte-identical: {same}")


def check_max_principle():
    r = max_principle_probe(default_config("maxprinciple"))
    s = r.summary
    return Check("max_principle_probe", s["probe"] == "pass",
                 f"min nodal {s['min_nodal']:.3g} at Peclet {s['peclet']:.3g} (>= -1e-8 when Peclet <= 1)")


def run_all(jobs=1, emit=None):
    """Run every property; ``emit`` receives each Check as it completes."""
    checks = []

    def add(check):
        checks.append(check)
        if emit:
            emit(check)

    add(check_mms(jobs))
    add(check_transpose())
    conc_cfg = default_config("homogenize", kind="concentrating")
    conc = run_homogenization(conc_cfg, jobs)
    osc = run_homogenization(default_config("homogenize", kind="oscillatory"), jobs)
    add(check_estimates(conc))
    dcfg = default_config("delta-sweep")
    sweep = run_delta_sweep(dcfg, jobs)
    add(check_energy(sweep))
    add(check_delta_limit(sweep, [float(d) for d in dcfg.delta_list]))
    add(check_trend(conc, "concentrating"))
    add(check_trend(osc, "oscillatory"))
    add(check_equi(osc))
    add(check_l1(run_l1_check(default_config("l1-check"))))
    add(check_control())
    add(check_determinism(default_config("homogenize", kind="oscillatory"), jobs))
    add(check_max_principle())
    return checks


__all__ = ["Check", "median_window", "run_all", "strict_trend", "transpose_cases"]
