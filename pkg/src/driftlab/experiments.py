"""Experiment runners producing CSV reports.

Every runner takes an :class:`~driftlab.config.ExperimentConfig` and returns an
:class:`ExperimentReport` whose rows are ``(experiment, n, delta, h, metric,
value)``. ``h`` is the grid spacing; ``n = 0`` marks the limit problem. A
failed solve yields a ``solve_failed`` row for that grid point instead of
aborting the run.
"""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from . import __version__
from .assembly import (PecletWarning, assemble_primal, assemble_riesz, full_stiffness,
                       peclet_number, quadrature_for)
from .config import ExperimentConfig
from .expr import SYMBOLS, Expr, from_sympy
from .fields import (CoefficientError, DriftSequenceSpec, Field, coefficient_set,
                     integrability_exponent, make_drift_field, sine_dictionary)
from .mesh import level_mesh
from .norms import (boccardo_bound_report, energy_estimate, h1_seminorm, l1_norm, l2_norm,
                    log_power_compose, norm, superlevel_measure, truncate, weak_probes)
from .quadrature import CellQuadrature, QuadratureError
from .solve import (SolverError, from_interior, solve_adjoint, solve_linear,
                    solve_regularized)

log = logging.getLogger(__name__)

HEADER = "experiment,n,delta,h,metric,value"


@dataclass(frozen=True)
class Row:
    experiment: str
    n: int | None
    delta: float | None
    h: float | None
    metric: str
    value: float


@dataclass
class ExperimentReport:
    experiment: str
    rows: list
    config_hash: str
    version: str = __version__
    summary: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def values(self, metric, delta=None):
        """{n: value} for one metric (and one delta, if given)."""
        return {r.n: r.value for r in self.rows
                if r.metric == metric and (delta is None or r.delta == delta)}

    def metrics(self):
        return sorted({r.metric for r in self.rows})


def _fmt(v):
    return "" if v is None else f"{v:.17e}"


def write_report(report, path):
    """Write the CSV; rows keep the deterministic order of the report."""
    lines = [HEADER]
    for r in report.rows:
        if not math.isfinite(r.value):
            raise ValueError(f"non-finite value in row {r}")
        n = "" if r.n is None else str(r.n)
        lines.append(f"{r.experiment},{n},{_fmt(r.delta)},{_fmt(r.h)},{r.metric},{_fmt(r.value)}")
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write report {path}: {exc.strerror}") from None


def format_summary(report):
    lines = [f"experiment: {report.experiment}",
             f"config hash: {report.config_hash}",
             f"version: {report.version}",
             f"rows: {len(report.rows)}",
             f"failed grid points: {len(report.failures)}"]
    lines += [f"  failed: {msg}" for msg in report.failures]
    for key, val in report.summary.items():
        lines.append(f"{key}: {val:.6g}" if isinstance(val, float) else f"{key}: {val}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------- setup

def build_mesh(cfg, level=None):
    return level_mesh(cfg.dim, cfg.level if level is None else level, base=cfg.divisions,
                      box=[tuple(b) for b in cfg.box])


def build_coefficients(cfg, **overrides):
    spec = dict(A=cfg.A, E=cfg.E, a=cfg.a, f=cfg.f, alpha=cfg.alpha, gamma=cfg.gamma,
                p=cfg.p if cfg.dim == 2 else None)
    spec.update(overrides)
    return coefficient_set(cfg.dim, **spec)


def drift_spec(cfg, coeffs):
    return DriftSequenceSpec(
        kind=cfg.kind, dim=cfg.dim, E0=coeffs.E, beta=cfg.beta,
        x0=None if cfg.x0 is None else tuple(float(v) for v in cfg.x0),
        direction=None if cfg.direction is None else tuple(float(v) for v in cfg.direction),
        radius=cfg.radius, r=integrability_exponent(cfg.dim, cfg.p if cfg.dim == 2 else None),
        box=tuple(tuple(float(v) for v in b) for b in cfg.box))


def spacing(mesh):
    return float(np.max(mesh.spacing))


def _parallel(func, items, jobs):
    items = list(items)
    if jobs and jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(func, items))
    return [func(it) for it in items]


_NUMERICAL = (SolverError, QuadratureError, ArithmeticError, CoefficientError)


def _solve(mesh, coeffs):
    quad = quadrature_for(mesh, coeffs)
    op, load = assemble_primal(mesh, coeffs, quad=quad)
    x = solve_linear(op, load)
    return from_interior(mesh, x), quad, load


# ----------------------------------------------------------------- homogenization

def _probe_rows(u, m_list, dictionary, K):
    return {m: weak_probes(truncate(u, m), dictionary, K) for m in m_list}


def run_homogenization(cfg: ExperimentConfig, jobs=1):
    """Solve u_n for each drift E_n and compare with the limit solution u_0."""
    mesh = build_mesh(cfg)
    h = spacing(mesh)
    base = build_coefficients(cfg)
    spec = drift_spec(cfg, base)
    riesz = assemble_riesz(mesh)
    K = full_stiffness(mesh)
    dictionary = sine_dictionary(cfg.dim, cfg.dictionary_size)
    exp = "homogenization"
    t_list = [float(t) for t in cfg.t_list]

    def estimate_rows(n, u, coeffs, quad, load):
        rep = boccardo_bound_report(u, coeffs, riesz, load, t_values=t_list, quad=quad)
        out = [("R", rep["R"])]
        out += [(f"R_t={_num(t)}", rep[f"R_t={t}"]) for t in t_list]
        out += [("u_H1", norm(u, "H1"))]
        out += [(f"superlevel[m={_num(m)}]", superlevel_measure(u, m)) for m in cfg.m_list]
        return out

    u0, quad0, load0 = _solve(mesh, base)
    probes0 = _probe_rows(u0, cfg.m_list, dictionary, K)
    logs0 = {q: log_power_compose(u0, q) for q in cfg.q_list}
    rows = [Row(exp, 0, None, h, k, float(v)) for k, v in estimate_rows(0, u0, base, quad0, load0)]

    def one(n):
        try:
            fn = _forcing(cfg, base, n)
            coeffs = base.with_(E=make_drift_field(spec, n), f=fn)
            u, quad, load = _solve(mesh, coeffs)
        except _NUMERICAL as exc:
            return n, None, f"n={n}: {exc}"
        out = [("u_L2_diff", l2_norm(u.with_values(u.values - u0.values)))]
        for m in cfg.m_list:
            d = truncate(u, m).values - truncate(u0, m).values
            out.append((f"trunc_L2_diff[m={_num(m)}]", l2_norm(u.with_values(d))))
            out.append((f"trunc_H1semi_diff[m={_num(m)}]", h1_seminorm(u.with_values(d))))
        for q in cfg.q_list:
            d = log_power_compose(u, q).values - logs0[q].values
            out.append((f"log_L2_diff[q={_num(q)}]", l2_norm(u.with_values(d))))
        probes = _probe_rows(u, cfg.m_list, dictionary, K)
        for m in cfg.m_list:
            gap = np.abs(probes[m] - probes0[m])
            out.append((f"weak_gap[m={_num(m)}]", float(gap.max())))
            out += [(f"weak_probe[m={_num(m)},j={j}]", float(v)) for j, v in enumerate(probes[m])]
        out += estimate_rows(n, u, coeffs, quad, load)
        return n, out, None

    report = ExperimentReport(exp, rows, cfg.hash)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PecletWarning)
        results = _parallel(one, cfg.n_list, jobs)
    for n, out, err in results:
        if err:
            report.failures.append(err)
            report.rows.append(Row(exp, n, None, h, "solve_failed", 1.0))
        else:
            report.rows += [Row(exp, n, None, h, k, float(v)) for k, v in out]
    report.summary.update(kind=cfg.kind, dim=cfg.dim, h=h)
    return report


def _num(v):
    """Compact label for list parameters: 2.0 -> '2'."""
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def _forcing(cfg, base, n):
    """f_n: f itself, or f + amp sin(2 pi n x1) when an oscillating source is configured."""
    amp = float(cfg.f_oscillation)
    if amp == 0.0:
        return base.f
    f = base.f
    return Field((), lambda x: f(x) + amp * np.sin(2 * np.pi * n * x[:, 0]), cfg.dim,
                 features=f.features, label=f"f_n n={n}")


# ----------------------------------------------------------------- delta sweep

def run_delta_sweep(cfg: ExperimentConfig, jobs=1):
    """Regularized solutions w_{n,delta} against u_n, with the energy bound (N >= 3)."""
    mesh = build_mesh(cfg)
    h = spacing(mesh)
    base = build_coefficients(cfg)
    spec = drift_spec(cfg, base)
    riesz = assemble_riesz(mesh)
    exp = "delta_sweep"

    def one(n):
        out = []
        try:
            coeffs = base.with_(E=make_drift_field(spec, n))
            u, quad, load = _solve(mesh, coeffs)
        except _NUMERICAL as exc:
            return n, [(None, "solve_failed", 1.0)], [f"n={n}: {exc}"]
        errs = []
        for delta in cfg.delta_list:
            delta = float(delta)
            try:
                w = solve_regularized(mesh, coeffs, delta, quad=quad, initial=u)
            except _NUMERICAL as exc:
                errs.append(f"n={n}, delta={delta:g}: {exc}")
                out.append((delta, "solve_failed", 1.0))
                continue
            out.append((delta, "w_u_L2_diff", l2_norm(w.with_values(w.values - u.values))))
            out.append((delta, "newton_steps", float(w.iterations)))
            out.append((delta, "newton_residual", w.residual))
            if mesh.dim >= 3:
                lhs, rhs = energy_estimate(w, coeffs, riesz, load, delta, quad=quad)
                out.append((delta, "energy_lhs", lhs))
                out.append((delta, "energy_rhs", rhs))
        return n, out, errs

    report = ExperimentReport(exp, [], cfg.hash)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PecletWarning)
        results = _parallel(one, cfg.n_list, jobs)
    for n, out, errs in results:
        report.failures += errs
        report.rows += [Row(exp, n, d, h, k, float(v)) for d, k, v in out]
    slack = [r.value for r in report.rows if r.metric == "energy_rhs"]
    if slack:
        lhs = [r.value for r in report.rows if r.metric == "energy_lhs"]
        report.summary["max energy lhs - rhs"] = max(a - b for a, b in zip(lhs, slack))
    steps = [r.value for r in report.rows if r.metric == "newton_steps"]
    if steps:
        report.summary["max newton steps"] = int(max(steps))
    if mesh.dim == 2:
        report.summary["note"] = "N=2 uses g(s)=|s|^2 s (extension); no energy bound"
    return report


# ----------------------------------------------------------------- L1 bound

def run_l1_check(cfg: ExperimentConfig, jobs=1):
    """||u||_L1 against ||f||_L1 / gamma with a = gamma, for each gamma in gamma_list."""
    mesh = build_mesh(cfg)
    h = spacing(mesh)
    exp = "l1_check"
    report = ExperimentReport(exp, [], cfg.hash)
    worst = 0.0
    for gamma in cfg.gamma_list:
        gamma = float(gamma)
        if gamma <= 0:
            raise CoefficientError(f"gamma must be positive for the L1 bound, got {gamma}")
        coeffs = build_coefficients(cfg, a=gamma, gamma=gamma)
        tag = f"[gamma={_num(gamma)}]"
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", PecletWarning)
                u, quad, _ = _solve(mesh, coeffs)
        except _NUMERICAL as exc:
            report.failures.append(f"gamma={gamma:g}: {exc}")
            report.rows.append(Row(exp, None, None, h, "solve_failed" + tag, 1.0))
            continue
        f_l1 = quad.integrate(np.abs(coeffs.f(quad.points, quad.cell, mesh)))
        u_l1 = l1_norm(u)
        bound = f_l1 / gamma
        ratio = u_l1 / bound if bound > 0 else (0.0 if u_l1 == 0 else math.inf)
        worst = max(worst, ratio)
        report.rows += [Row(exp, None, None, h, "u_L1" + tag, u_l1),
                        Row(exp, None, None, h, "bound" + tag, bound),
                        Row(exp, None, None, h, "violation" + tag, float(u_l1 > 1.02 * bound))]
    report.summary["max u_L1 / bound"] = worst
    return report


# ----------------------------------------------------------------- manufactured solutions

def default_exact(dim):
    return "*".join(f"sin(pi*x{i + 1})" for i in range(dim))


def manufactured_source(cfg):
    """Symbolic f = -div(A grad u* + E u*) + a u* and grad u* for the configured u*."""
    dim = cfg.dim
    xs = SYMBOLS[:dim]
    u = Expr(cfg.u_exact or default_exact(dim)).to_sympy()

    def sym(spec):
        return Expr(repr(float(spec)) if isinstance(spec, (int, float)) else spec).to_sympy()

    if isinstance(cfg.A, list):
        A = sp.Matrix([[sym(v) for v in row] for row in cfg.A])
    else:
        A = sym(cfg.A) * sp.eye(dim)
    E = sp.Matrix([sym(v) for v in cfg.E])
    a = sym(cfg.a)
    grad = sp.Matrix([sp.diff(u, x) for x in xs])
    flux = A * grad + E * u
    f = -sum(sp.diff(flux[i], xs[i]) for i in range(dim)) + a * u
    return sp.simplify(f), u, list(grad)


def run_mms_convergence(cfg: ExperimentConfig, jobs=1):
    """L2 and H1 errors against a manufactured solution across cfg.levels."""
    f_sym, u_sym, grad_sym = manufactured_source(cfg)
    dim = cfg.dim
    f_num = from_sympy(f_sym, dim)
    u_num = from_sympy(u_sym, dim)
    g_num = [from_sympy(gs, dim) for gs in grad_sym]
    exp = "mms"

    def one(level):
        mesh = build_mesh(cfg, level)
        coeffs = build_coefficients(cfg, f=Field((), f_num, dim, label="manufactured f"))
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", PecletWarning)
                u, _, _ = _solve(mesh, coeffs)
        except _NUMERICAL as exc:
            return level, spacing(mesh), None, f"level={level}: {exc}"
        quad = CellQuadrature(mesh)
        err = quad.interpolate(u.values) - u_num(quad.points)
        e_l2 = math.sqrt(quad.integrate(err ** 2))
        gh = np.einsum("ci,cid->cd", u.values[mesh.cells], mesh.grads)[quad.cell]
        gex = np.column_stack([g(quad.points) for g in g_num])
        e_h1 = math.sqrt(quad.integrate(np.sum((gh - gex) ** 2, axis=1)) + e_l2 ** 2)
        return level, spacing(mesh), (e_l2, e_h1), None

    report = ExperimentReport(exp, [], cfg.hash)
    hs, errs = [], []
    for level, h, vals, err in _parallel(one, cfg.levels, jobs):
        if err:
            report.failures.append(err)
            report.rows.append(Row(exp, None, None, h, "solve_failed", 1.0))
            continue
        report.rows += [Row(exp, None, None, h, "L2_error", vals[0]),
                        Row(exp, None, None, h, "H1_error", vals[1])]
        hs.append(h)
        errs.append(vals)
    if len(hs) >= 2:
        report.summary["L2 order"] = fitted_order(hs, [e[0] for e in errs])
        report.summary["H1 order"] = fitted_order(hs, [e[1] for e in errs])
    report.summary["source f"] = str(f_sym)
    return report


def fitted_order(hs, errors):
    """Least-squares slope of log(error) against log(h); nan if any error is 0."""
    hs, errors = np.asarray(hs, dtype=float), np.asarray(errors, dtype=float)
    if np.any(errors <= 0):
        return math.nan
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


# ----------------------------------------------------------------- maximum principle

def max_principle_probe(cfg: ExperimentConfig, jobs=1):
    """Adjoint solve with f >= 0: minimum nodal value and mesh Peclet number."""
    mesh = build_mesh(cfg)
    h = spacing(mesh)
    coeffs = build_coefficients(cfg)
    quad = quadrature_for(mesh, coeffs)
    fvals = coeffs.f(quad.points, quad.cell, mesh)
    if np.any(fvals < 0):
        raise CoefficientError("the maximum-principle probe needs f >= 0")
    exp = "max_principle"
    report = ExperimentReport(exp, [], cfg.hash)
    pe = peclet_number(mesh, coeffs, quad)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", PecletWarning)
            u = solve_adjoint(mesh, coeffs, quad=quad)
    except _NUMERICAL as exc:
        report.failures.append(str(exc))
        report.rows.append(Row(exp, None, None, h, "solve_failed", 1.0))
        return report
    umin = float(u.values.min())
    passed = umin >= -1e-8 if pe <= 1 else True
    report.rows += [Row(exp, None, None, h, "min_nodal", umin),
                    Row(exp, None, None, h, "min_interior", float(u.interior_values.min())
                        if len(u.interior_values) else 0.0),
                    Row(exp, None, None, h, "peclet", pe),
                    Row(exp, None, None, h, "probe_pass", float(passed))]
    report.summary.update(peclet=pe, min_nodal=umin,
                          probe="pass" if passed else "FAIL",
                          applies="yes" if pe <= 1 else "no (Peclet > 1)")
    return report


# ----------------------------------------------------------------- single solves

def run_single(cfg: ExperimentConfig, which="primal", jobs=1):
    """One primal, adjoint or regularized solve with E = E_n for n = n_list[0]."""
    mesh = build_mesh(cfg)
    h = spacing(mesh)
    base = build_coefficients(cfg)
    n = int(cfg.n_list[0])
    coeffs = base if cfg.kind == "constant" else base.with_(E=make_drift_field(drift_spec(cfg, base), n))
    quad = quadrature_for(mesh, coeffs)
    delta = None
    if which == "primal":
        op, load = assemble_primal(mesh, coeffs, quad=quad)
        x, info = solve_linear(op, load, return_info=True)
        u = from_interior(mesh, x, residual=info["residual"], iterations=info["iterations"])
    elif which == "adjoint":
        u = solve_adjoint(mesh, coeffs, quad=quad)
    elif which == "regularized":
        delta = float(cfg.delta_list[0])
        u = solve_regularized(mesh, coeffs, delta, quad=quad)
    else:
        raise ValueError(f"unknown solve kind {which!r}")
    exp = {"primal": "solve", "adjoint": "adjoint", "regularized": "regularize"}[which]
    report = ExperimentReport(exp, [], cfg.hash)
    vals = [("L1", l1_norm(u)), ("L2", l2_norm(u)), ("Linf", norm(u, "Linf")),
            ("H1semi", h1_seminorm(u)), ("residual", float(u.residual)),
            ("iterations", float(u.iterations)), ("peclet", peclet_number(mesh, coeffs, quad))]
    report.rows += [Row(exp, n, delta, h, k, float(v)) for k, v in vals]
    report.summary.update({k: v for k, v in vals})
    report.solution = u
    return report


# ----------------------------------------------------------------- defaults

def default_config(command, dim=None, kind=None):
    """Configuration reproducing the reference run of a subcommand."""
    if command in ("homogenize", "homogenization"):
        kind = kind or "concentrating"
        d = dim or (2 if kind == "oscillatory" else 3)
        if kind == "oscillatory":
            return ExperimentConfig(experiment="homogenization", dim=d, level=7 if d == 2 else 4,
                                    E=[1] + [0] * (d - 1), kind=kind, beta=5.0, p=4.0, f=100)
        return ExperimentConfig(experiment="homogenization", dim=d, level=4 if d == 3 else 6,
                                E=[0] * d, kind=kind, beta=4.0, p=4.0, f=100)
    if command in ("delta-sweep", "delta_sweep"):
        d = dim or 3
        return ExperimentConfig(experiment="delta_sweep", dim=d, level=3 if d == 3 else 5, f=30,
                                E=[0] * d, kind=kind or "concentrating", beta=4.0)
    if command in ("l1-check", "l1_check"):
        d = dim or 2
        return ExperimentConfig(experiment="l1_check", dim=d, level=5 if d == 2 else 3,
                                E=[1, 0.5] + [0] * (d - 2), f="1 + x1", kind="constant")
    if command == "mms":
        d = dim or 2
        return ExperimentConfig(experiment="mms", dim=d, E=[1] + [0] * (d - 1), f=0,
                                kind="constant",
                                levels=[3, 4, 5, 6] if d == 2 else [2, 3, 4])
    if command in ("maxprinciple", "max_principle"):
        d = dim or 2
        return ExperimentConfig(experiment="max_principle", dim=d, level=5 if d == 2 else 3,
                                E=[20, 10] + [0] * (d - 2), f=1, kind="constant")
    if command in ("solve", "adjoint", "regularize"):
        d = dim or 3
        return ExperimentConfig(experiment=command, dim=d, level=3, f=30,
                                E=[0] * d, kind=kind or "concentrating", beta=4.0, n_list=[4],
                                delta_list=[1e-3])
    raise ValueError(f"no default configuration for {command!r}")


RUNNERS = {
    "homogenization": run_homogenization,
    "delta_sweep": run_delta_sweep,
    "l1_check": run_l1_check,
    "mms": run_mms_convergence,
    "max_principle": max_principle_probe,
}

__all__ = [
    "ExperimentReport", "HEADER", "RUNNERS", "Row", "default_config", "fitted_order",
    "format_summary", "max_principle_probe", "run_delta_sweep", "run_homogenization",
    "run_l1_check", "run_mms_convergence", "run_single", "write_report",
]
