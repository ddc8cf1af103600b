"""Command-line entry point: ``romift {demo,train,solve,sweep,info}``.

Configuration files use INI syntax::

    [problem]
    name = advec2d            ; advec2d | nozzle1d
    mesh_n = 34
    degree = 3

    [train]
    mu = linspace(-pi/10, pi/10, 3) | 0.55 | 80
    n_state = 3               ; optional POD truncation
    n_map = 1                 ; optional mapping-basis size

    [test]
    mu = linspace(-pi/10, pi/10, 101) | 0.55 | 80

    [solver]                  ; optional ROM-IFT overrides
    eps1 = 1e-15
    eps2 = 1e-10
    lam = 0                   ; number, or "adaptive"
    max_iter = 50

    [output]
    dir = advec-n3            ; relative to $ROMIFT_OUTPUT_ROOT (default: cwd)

Parameter specs separate components with ``|``; each component is a number,
a comma-separated list or ``linspace(lo, hi, n)``, and the parameter set is
their Cartesian product (first component varies slowest). Numbers may use
``pi`` and + - * / arithmetic.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import itertools
import json
import logging
import math
import operator
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__, io
from .demos import DEMOS, run_demo
from .hdm import HdmSolveError, MappingError
from .ift import RankDeficientError
from .metrics import sweep as run_sweep
from .reduction import RomSolveError

log = logging.getLogger("romift")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3
OUTPUT_ENV = "ROMIFT_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


# Parameter specs ==============================================================
_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.USub: operator.neg, ast.UAdd: operator.pos}


def _number(text: str) -> float:
    def ev(node):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ConfigError(f"unsupported expression {text!r}")
    try:
        return ev(ast.parse(text.strip(), mode="eval").body)
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse number {text!r}") from exc


_LINSPACE = re.compile(r"^linspace\((.*)\)$")


def parse_component(text: str) -> list:
    text = text.strip()
    m = _LINSPACE.match(text)
    if m:
        args = m.group(1).split(",")
        if len(args) != 3:
            raise ConfigError(f"linspace needs (lo, hi, n): {text!r}")
        lo, hi, n = (_number(a) for a in args)
        if n < 1 or n != int(n):
            raise ConfigError(f"linspace count must be a positive integer: {text!r}")
        n = int(n)
        return [0.5 * (lo + hi)] if n == 1 else list(lo + np.arange(n) / (n - 1) * (hi - lo))
    return [_number(t) for t in text.split(",") if t.strip()]


def parse_parameters(spec: str) -> np.ndarray:
    comps = [parse_component(c) for c in spec.split("|")]
    if any(len(c) == 0 for c in comps):
        raise ConfigError(f"empty parameter component in {spec!r}")
    return np.array(list(itertools.product(*comps)), dtype=float)


# Config =======================================================================
def load_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    if not cp.has_option("problem", "name"):
        raise ConfigError("missing [problem] name")
    return cp


def config_dict(cp: configparser.ConfigParser) -> dict:
    return {s: dict(cp.items(s)) for s in cp.sections()}


def _opt_int(cp, section, key):
    if not cp.has_option(section, key):
        return None
    try:
        return cp.getint(section, key)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} must be an integer") from exc


def _opt_float(cp, section, key):
    if not cp.has_option(section, key):
        return None
    return _number(cp.get(section, key))


def build_case(cp):
    from .cases import PROBLEMS, make_case
    name = cp.get("problem", "name")
    if name not in PROBLEMS:
        raise ConfigError(f"unknown problem {name!r}; choose from {', '.join(PROBLEMS)}")
    degree = _opt_int(cp, "problem", "degree")
    if degree is not None and degree < 0:
        raise ConfigError("degree must be non-negative")
    case = make_case(name, mesh_n=_opt_int(cp, "problem", "mesh_n"), degree=degree,
                     av_scale=_opt_float(cp, "problem", "av_scale"))
    if cp.has_section("solver"):
        for key in ("eps1", "eps2"):
            v = _opt_float(cp, "solver", key)
            if v is not None:
                if not v > 0:
                    raise ConfigError(f"[solver] {key} must be positive")
                case.ift_kw[key] = v
        if cp.has_option("solver", "lam"):
            raw = cp.get("solver", "lam").strip()
            case.ift_kw["lam"] = None if raw == "adaptive" else _number(raw)
        it = _opt_int(cp, "solver", "max_iter")
        if it is not None:
            case.ift_kw["max_iter"] = it
    return case


def section_parameters(cp, section: str, case) -> np.ndarray:
    if not cp.has_option(section, "mu"):
        raise ConfigError(f"missing [{section}] mu")
    P = parse_parameters(cp.get(section, "mu"))
    if P.shape[1] != len(case.disc.law.param_bounds):
        raise ConfigError(f"[{section}] mu has {P.shape[1]} components, "
                          f"{case.name} expects {len(case.disc.law.param_bounds)}")
    try:
        for mu in P:
            case.disc.law.check_parameter(mu)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return P


def output_dir(cp) -> Path:
    root = Path(os.environ.get(OUTPUT_ENV, "."))
    sub = cp.get("output", "dir", fallback=f"runs/{cp.get('problem', 'name')}")
    return root / sub


def _mu_tag(mu) -> str:
    return "mu_" + "_".join(f"{v:.6g}" for v in np.atleast_1d(mu))


# Commands =====================================================================
def cmd_demo(args) -> int:
    res = run_demo(args.name)
    out = Path(os.environ.get(OUTPUT_ENV, ".")) / (args.out or f"demo/{args.name}")
    paths = res.write(out)
    (out / "summary.json").write_text(json.dumps(res.summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(res.summary, sort_keys=True))
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_train(args) -> int:
    from .cases import save_models, train
    cp = load_config(args.config)
    case = build_case(cp)
    P = section_parameters(cp, "train", case)
    models = train(case, P, n_state=_opt_int(cp, "train", "n_state"),
                   n_map=_opt_int(cp, "train", "n_map"))
    out = output_dir(cp) / "model"
    save_models(out, models, config_dict(cp))
    print(f"trained {models.basis.k}-mode aligned basis and {models.fixed.k}-mode fixed basis; "
          f"{models.mapping_space.n} mapping coordinates -> {out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    from .cases import load_models, solve_fixed, solve_rom_ift
    cp = load_config(args.config)
    case = build_case(cp)
    mu = parse_parameters(args.mu)
    if mu.shape != (1, len(case.disc.law.param_bounds)):
        raise ConfigError("--mu must name a single parameter")
    mu = mu[0]
    try:
        case.disc.law.check_parameter(mu)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = output_dir(cp) / f"solve_{args.mode}_{_mu_tag(mu)}"
    out.mkdir(parents=True, exist_ok=True)
    summary = {"mode": args.mode, "mu": mu.tolist(), "status": "failed"}
    try:
        if args.mode == "hdm":
            U = case.hdm(case.identity, mu)
            summary.update(status="converged",
                           residual_norm=float(np.linalg.norm(case.disc.residual(U, case.identity, mu))))
        else:
            models = load_models(output_dir(cp) / "model", case)
            if args.mode == "rom-fixed":
                r = solve_fixed(case, models, mu)
                U = models.fixed.expand(r.w)
                io.write_matrix(out / "coords.bin", r.w)
                summary.update(status=r.status, residual_norm=r.residual_norm,
                               iterations=r.iterations)
            else:
                obj, sol = solve_rom_ift(case, models, mu)
                U = models.basis.expand(sol.w)
                io.write_matrix(out / "coords.bin", sol.w)
                io.write_matrix(out / "mapping_coords.bin", sol.c)
                io.write_matrix(out / "mapping.bin", obj.xhat(sol.c))
                rows = []
                for i, J in enumerate(sol.history):
                    a = sol.alphas[i - 1] if 0 < i <= len(sol.alphas) else ""
                    lam = sol.lambdas[i - 1] if 0 < i <= len(sol.lambdas) else ""
                    rows.append((i, J, a, "" if lam is None else lam))
                io.write_csv(out / "history.csv", ["iteration", "objective", "alpha", "lambda"], rows)
                summary.update(status=sol.status, residual_norm=sol.residual_norm,
                               objective=sol.objective, initial_objective=sol.initial_objective,
                               iterations=sol.iterations, grad_w=sol.grad_w, grad_c=sol.grad_c)
        io.write_matrix(out / "state.bin", U)
    finally:
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .cases import evaluate, load_models
    cp = load_config(args.config)
    case = build_case(cp)
    P = section_parameters(cp, "test", case)
    models = load_models(output_dir(cp) / "model", case)
    report = run_sweep(P, lambda mu: evaluate(case, models, mu))
    path = output_dir(cp) / "sweep.csv"
    report.to_csv(path)
    print(f"E_rom = {report.E_rom:.6e}  E_ift = {report.E_ift:.6e}  failed = {report.n_failed} -> {path}")
    return EXIT_OK


def cmd_info(args) -> int:
    from .cases import describe, load_models
    info = {"version": __version__}
    if args.config:
        cp = load_config(args.config)
        case = build_case(cp)
        d = case.disc
        info.update(problem=case.name, elements=d.mesh.n_elements, degree=d.degree, N=d.N,
                    mapping_dofs=d.n_mapping, parameters=list(d.law.param_names),
                    parameter_bounds=[list(b) for b in d.law.param_bounds],
                    output=str(output_dir(cp)))
        model_dir = output_dir(cp) / "model"
        if (model_dir / "manifest.json").exists():
            info["model"] = describe(load_models(model_dir, case))
            info["config_hash"] = io.read_manifest(model_dir / "manifest.json")["config_hash"]
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="romift", description="Reduced-order models with implicit "
                                "feature tracking.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    d = sub.add_parser("demo", help="write CSV data of a 1D demo")
    d.add_argument("name", choices=DEMOS)
    d.add_argument("--out", help="output directory below the output root")
    d.set_defaults(func=cmd_demo)
    t = sub.add_parser("train", help="offline training of the fixed ROM and ROM-IFT")
    t.add_argument("config")
    t.set_defaults(func=cmd_train)
    s = sub.add_parser("solve", help="solve at one parameter")
    s.add_argument("config")
    s.add_argument("--mu", required=True, help='parameter, components separated by "|"')
    s.add_argument("--mode", choices=("hdm", "rom-fixed", "rom-ift"), default="rom-ift")
    s.set_defaults(func=cmd_solve)
    w = sub.add_parser("sweep", help="error sweep of both ROMs over the [test] set")
    w.add_argument("config")
    w.set_defaults(func=cmd_sweep)
    i = sub.add_parser("info", help="problem size and trained-model summary")
    i.add_argument("config", nargs="?")
    i.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HdmSolveError, RomSolveError, MappingError, RankDeficientError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, io.FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
