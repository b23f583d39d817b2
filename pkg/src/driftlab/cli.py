"""Command-line front end.

    driftlab <command> [--config FILE] [--out DIR] [--jobs N] [--levels K]
                       [--kind KIND] [--dim D] [-v]

Commands: solve, adjoint, regularize, homogenize, delta-sweep, l1-check, mms,
maxprinciple, control, verify. Outputs go to ``--out``, else ``$DRIFTLAB_OUT``,
else the config's ``output`` key, else ``./driftlab_out``.

Exit status: 0 success, 1 usage or I/O error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from .assembly import AssemblyError
from .config import ConfigError, ControlConfig, ExperimentConfig, from_text, parse_value, to_text
from .control import ControlError, optimize, problem_from_config, write_trace
from .experiments import RUNNERS, default_config, format_summary, run_single, write_report
from .expr import ExpressionError
from .fields import CoefficientError
from .mesh import MeshError
from .quadrature import QuadratureError
from .solve import SolverError

log = logging.getLogger("driftlab")

COMMANDS = ("solve", "adjoint", "regularize", "homogenize", "delta-sweep", "l1-check", "mms",
            "maxprinciple", "control", "verify")
EXPERIMENT_OF = {"homogenize": "homogenization", "delta-sweep": "delta_sweep",
                 "l1-check": "l1_check", "mms": "mms", "maxprinciple": "max_principle"}
SINGLE = {"solve": "primal", "adjoint": "adjoint", "regularize": "regularized"}
DEFAULT_OUT = "driftlab_out"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="driftlab", description="Drift elliptic problem experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="sectioned key/value config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker threads for grid points")
    p.add_argument("--levels", type=int, help="number of refinement levels (mms)")
    p.add_argument("--kind", choices=("constant", "oscillatory", "concentrating"),
                   help="drift sequence kind")
    p.add_argument("--dim", type=int, choices=(2, 3), help="space dimension")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    config: object
    out_dir: str
    verbosity: int


def _peek(text):
    """Raw dim and kind from config text (before defaults are chosen)."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    out = {}
    for sec, key in (("mesh", "dim"), ("drift", "kind")):
        if parser.has_option(sec, key):
            out[key] = parse_value(parser.get(sec, key))
    return out


def resolve(args):
    """Build the RunManifest: defaults, then the config file, then flags."""
    text = None
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise FileNotFoundError(f"cannot read config {args.config}: {exc.strerror}") from None
    if args.command == "control":
        cfg = ControlConfig(dim=args.dim or 2)
        if text is not None:
            cfg = from_text(text, ControlConfig, base=cfg)
    elif args.command == "verify":
        cfg = None
        if text is not None:
            raise UsageError("verify runs the fixed reference configurations; --config is not used")
    else:
        peek = _peek(text) if text is not None else {}
        dim = args.dim or peek.get("dim")
        kind = args.kind or peek.get("kind")
        cfg = default_config(args.command, dim=dim, kind=kind)
        if text is not None:
            cfg = from_text(text, ExperimentConfig, base=cfg)
        if args.kind:
            cfg = cfg.replace(kind=args.kind)
    if args.levels is not None:
        if args.command != "mms":
            raise UsageError("--levels applies to the mms command only")
        if args.levels < 2:
            raise UsageError("--levels needs at least 2 levels to fit an order")
        start = int(cfg.levels[0])
        cfg = cfg.replace(levels=list(range(start, start + args.levels)))
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    out = args.out or os.environ.get("DRIFTLAB_OUT") or (cfg.output if cfg is not None else "") \
        or DEFAULT_OUT
    return RunManifest(args.command, args.config, cfg, out, args.verbose)


def _write(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from None


def _name(command):
    return command.replace("-", "_")


def run(manifest, jobs=1):
    """Execute a resolved manifest; returns the exit status."""
    cmd, cfg, out = manifest.command, manifest.config, manifest.out_dir
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from None
    if cmd == "verify":
        return _verify(out, jobs)
    if cmd == "control":
        return _control(cfg, out)
    if cmd in SINGLE:
        report = run_single(cfg, SINGLE[cmd], jobs)
        u = report.solution
        cols = [f"x{i + 1}" for i in range(u.mesh.dim)] + ["u"]
        lines = [",".join(cols)]
        lines += [",".join(f"{v:.17e}" for v in row)
                  for row in np.column_stack([u.mesh.vertices, u.values])]
        _write(os.path.join(out, f"{_name(cmd)}_solution.csv"), "\n".join(lines) + "\n")
    else:
        report = RUNNERS[EXPERIMENT_OF[cmd]](cfg, jobs)
    write_report(report, os.path.join(out, f"{_name(cmd)}.csv"))
    _write(os.path.join(out, f"{_name(cmd)}.cfg"), to_text(cfg))
    summary = format_summary(report)
    _write(os.path.join(out, f"{_name(cmd)}_summary.txt"), summary)
    sys.stdout.write(summary)
    return 2 if report.failures else 0


def _control(cfg, out):
    prob = problem_from_config(cfg)
    res = optimize(prob, cfg.c0, steps=cfg.steps)
    write_trace(res.trace, os.path.join(out, "control_trace.csv"))
    _write(os.path.join(out, "control.cfg"), to_text(cfg))
    lines = ["experiment: control", f"config hash: {cfg.hash}",
             f"iterations: {len(res.trace) - 1}", f"J: {res.J:.10g}",
             "c: [" + ", ".join(f"{v:.6g}" for v in res.c) + "]",
             f"||c||: {np.linalg.norm(res.c):.6g}", f"status: {res.message}",
             f"objective evaluations: {prob.evaluations}"]
    summary = "\n".join(lines) + "\n"
    _write(os.path.join(out, "control_summary.txt"), summary)
    sys.stdout.write(summary)
    return 0


def _verify(out, jobs):
    from .verify import run_all

    lines = []

    def emit(check):
        lines.append(check.line())
        print(check.line(), flush=True)

    checks = run_all(jobs=jobs, emit=emit)
    passed = sum(c.passed for c in checks)
    tail = f"{passed}/{len(checks)} properties pass"
    print(tail)
    _write(os.path.join(out, "verify_summary.txt"), "\n".join(lines + [tail]) + "\n")
    return 0 if passed == len(checks) else 2


USAGE_ERRORS = (UsageError, ConfigError, OSError, CoefficientError, ExpressionError,
                AssemblyError, ControlError, MeshError)
NUMERICAL_ERRORS = (SolverError, QuadratureError, ArithmeticError)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"driftlab: usage error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        manifest = resolve(args)
        return run(manifest, jobs=args.jobs)
    except NUMERICAL_ERRORS as exc:
        print(f"driftlab: numerical failure: {exc}", file=sys.stderr)
        return 2
    except USAGE_ERRORS as exc:
        print(f"driftlab: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
