"""Batch driver: config ingestion, pipeline orchestration, file emission.

Configs are YAML documents (comments allowed) with sections

    problem: euler | tricomi | verify
    gas:      {gamma}
    boundary: {x1, x2, samples?, phi, rho, u, v, p}   # euler / verify
    grid:     {delta, nt, nr}                          # euler
    solver:   {tol, max_iter, retries}                 # euler
    tricomi:  {case, x1, x2, delta, nt, nr, u0?, u1?}  # tricomi
    verify:   {solution, max_residual?}                # verify
    output:   {dir}

Each boundary function is either {"poly": [c0, c1, ...]} or
{"table": {"x": [...], "f": [...]}} with uniformly spaced x.  Unknown
keys anywhere are rejected.  Exit codes: 0 success, 1 config error,
2 boundary validation failure, 3 solver failure, 4 verification failure.

Emitted files:
    euler   -> solution.csv, diagnostics.json, boundary_report.json
    tricomi -> tricomi_solution.csv, diagnostics.json
    verify  -> residuals.json

Outputs carry no timestamps and use full round-trip float precision, so
identical configs give byte-identical files.  SONIC_THREADS caps the
per-family worker pool used inside a sweep.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import yaml

from . import boundary as bnd
from . import hodograph as hod
from . import inverse as inv
from . import tricomi as tri
from . import verify as ver
from .errors import (ConfigError, DomainError, DomainExit, NoContraction,
                     NonPositiveState, SingularDenominator, SonicflowError,
                     ValidationError)
from .kernels import Fn1D

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_VERIFY = 4


# ----------------------------------------------------------------------
# Configuration


@dataclass
class RunConfig:
    problem: str
    gamma: float = 1.4
    # euler boundary
    x1: float = 0.0
    x2: float = 0.0
    samples: int = 257
    functions: dict = dc_field(default_factory=dict)  # name -> Fn1D
    # euler grid / solver
    delta: float = 0.1
    nt: int = 64
    nr: int = 65
    tol: float = 1e-10
    max_iter: int = 50
    retries: int = 6
    # tricomi
    tri_case: str = "exact1"
    tri_x1: float = 0.0
    tri_x2: float = 1.0
    tri_delta: float = 0.4
    tri_nt: int = 64
    tri_nr: int = 129
    tri_u0: Fn1D | None = None
    tri_u1: Fn1D | None = None
    # verify
    solution_path: str = ""
    max_residual: float | None = None
    # output
    out_dir: str = "out"


def _check_keys(section, allowed, where):
    if not isinstance(section, dict):
        raise ConfigError(f"section '{where}' must be a mapping")
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in '{where}'")


def _num(section, key, where, default=None, lo=None, hi=None, strict_lo=False,
         integer=False):
    if key not in section:
        if default is None:
            raise ConfigError(f"missing '{where}.{key}'")
        return default
    val = section[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"'{where}.{key}' must be a number, got {val!r}")
    val = float(val)
    if lo is not None and (val <= lo if strict_lo else val < lo):
        op = ">" if strict_lo else ">="
        raise ConfigError(f"'{where}.{key}' must be {op} {lo} (got {val})")
    if hi is not None and val > hi:
        raise ConfigError(f"'{where}.{key}' must be <= {hi} (got {val})")
    return int(val) if integer else val


def _function_from_spec(spec, x1, x2, where):
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError(f"'{where}' must be {{poly: [...]}} or "
                          f"{{table: {{x: [...], f: [...]}}}}")
    kind, body = next(iter(spec.items()))
    try:
        if kind == "poly":
            return Fn1D.from_poly([float(c) for c in body], x1, x2)
        if kind == "table":
            _check_keys(body, {"x", "f"}, where)
            return Fn1D.from_table(np.asarray(body["x"], dtype=float),
                                   np.asarray(body["f"], dtype=float))
    except (TypeError, ValueError, SonicflowError) as exc:
        raise ConfigError(f"bad function spec at '{where}': {exc}") from exc
    raise ConfigError(f"'{where}': unknown function kind '{kind}'")


def parse_config(doc) -> RunConfig:
    """Validate a parsed YAML document into a RunConfig."""
    _check_keys(doc, {"problem", "gas", "boundary", "grid", "solver",
                      "tricomi", "verify", "output"}, "<root>")
    problem = doc.get("problem")
    if problem not in ("euler", "tricomi", "verify"):
        raise ConfigError(f"problem must be euler, tricomi or verify, got {problem!r}")
    cfg = RunConfig(problem=problem)

    gas = doc.get("gas", {})
    _check_keys(gas, {"gamma"}, "gas")
    cfg.gamma = _num(gas, "gamma", "gas", default=1.4, lo=1.0, strict_lo=True)

    out = doc.get("output", {})
    _check_keys(out, {"dir"}, "output")
    cfg.out_dir = str(out.get("dir", "out"))

    if problem in ("euler", "verify") and "boundary" in doc:
        b = doc["boundary"]
        _check_keys(b, {"x1", "x2", "samples", "phi", "rho", "u", "v", "p"},
                    "boundary")
        cfg.x1 = _num(b, "x1", "boundary")
        cfg.x2 = _num(b, "x2", "boundary")
        if not cfg.x2 > cfg.x1:
            raise ConfigError("'boundary.x2' must exceed 'boundary.x1'")
        cfg.samples = _num(b, "samples", "boundary", default=257, lo=5, integer=True)
        for name in ("phi", "rho", "u", "v", "p"):
            if name not in b:
                raise ConfigError(f"missing 'boundary.{name}'")
            cfg.functions[name] = _function_from_spec(b[name], cfg.x1, cfg.x2,
                                                      f"boundary.{name}")
    elif problem == "euler":
        raise ConfigError("euler run needs a 'boundary' section")

    g = doc.get("grid", {})
    _check_keys(g, {"delta", "nt", "nr"}, "grid")
    cfg.delta = _num(g, "delta", "grid", default=0.1, lo=0.0, strict_lo=True, hi=0.99)
    cfg.nt = _num(g, "nt", "grid", default=64, lo=4, integer=True)
    cfg.nr = _num(g, "nr", "grid", default=65, lo=8, integer=True)

    s = doc.get("solver", {})
    _check_keys(s, {"tol", "max_iter", "retries"}, "solver")
    cfg.tol = _num(s, "tol", "solver", default=1e-10, lo=0.0, strict_lo=True)
    cfg.max_iter = _num(s, "max_iter", "solver", default=50, lo=1, integer=True)
    cfg.retries = _num(s, "retries", "solver", default=6, lo=0, integer=True)

    t = doc.get("tricomi", {})
    _check_keys(t, {"case", "x1", "x2", "delta", "nt", "nr", "u0", "u1"}, "tricomi")
    cfg.tri_case = str(t.get("case", "exact1"))
    if cfg.tri_case not in ("exact1", "exact2", "zero", "custom"):
        raise ConfigError(f"tricomi.case must be exact1, exact2, zero or custom, "
                          f"got {cfg.tri_case!r}")
    cfg.tri_x1 = _num(t, "x1", "tricomi", default=0.0)
    cfg.tri_x2 = _num(t, "x2", "tricomi", default=1.0)
    if not cfg.tri_x2 > cfg.tri_x1:
        raise ConfigError("'tricomi.x2' must exceed 'tricomi.x1'")
    cfg.tri_delta = _num(t, "delta", "tricomi", default=0.4, lo=0.0, strict_lo=True)
    cfg.tri_nt = _num(t, "nt", "tricomi", default=64, lo=4, integer=True)
    cfg.tri_nr = _num(t, "nr", "tricomi", default=129, lo=8, integer=True)
    if cfg.tri_case == "custom":
        for name in ("u0", "u1"):
            if name not in t:
                raise ConfigError(f"custom tricomi case needs 'tricomi.{name}'")
        cfg.tri_u0 = _function_from_spec(t["u0"], cfg.tri_x1, cfg.tri_x2, "tricomi.u0")
        cfg.tri_u1 = _function_from_spec(t["u1"], cfg.tri_x1, cfg.tri_x2, "tricomi.u1")

    v = doc.get("verify", {})
    _check_keys(v, {"solution", "max_residual"}, "verify")
    cfg.solution_path = str(v.get("solution", ""))
    if "max_residual" in v:
        cfg.max_residual = _num(v, "max_residual", "verify", lo=0.0, strict_lo=True)
    if problem == "verify":
        if not cfg.solution_path:
            raise ConfigError("verify run needs 'verify.solution'")
        if "boundary" not in doc:
            raise ConfigError("verify run needs the 'boundary' section "
                              "the solution was produced from")
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a YAML mapping")
    return parse_config(doc)


def dump_config(cfg_doc, path):
    """Round-trippable dump of a config document (used by tests and docs)."""
    with open(path, "w") as fh:
        yaml.safe_dump(cfg_doc, fh, sort_keys=True)


# ----------------------------------------------------------------------
# Pipeline stages


def _write_json(path, obj):
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _build_hodograph(cfg: RunConfig):
    gc = bnd.GasConstants(cfg.gamma)
    data = bnd.SonicBoundaryData(
        x1=cfg.x1, x2=cfg.x2, phi=cfg.functions["phi"], rho=cfg.functions["rho"],
        u=cfg.functions["u"], v=cfg.functions["v"], p=cfg.functions["p"],
        n_samples=cfg.samples)
    report = bnd.validate_boundary(data, gc)
    db = bnd.derive_boundary(data, gc)
    hb = bnd.to_hodograph(db)
    return gc, data, report, db, hb


def run_euler(cfg: RunConfig, out: Path) -> int:
    try:
        gc, _data, report, _db, hb = _build_hodograph(cfg)
    except ValidationError as exc:
        rep = getattr(exc, "report", None)
        if rep is not None:
            _write_json(out / "boundary_report.json", rep.as_dict())
        print(f"boundary validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    _write_json(out / "boundary_report.json", report.as_dict())

    try:
        grid = hod.HodographGrid.build(hb, gc, cfg.delta, cfg.nt, cfg.nr)
        fields, it_report = hod.solve_fixed_point(
            hb, grid, gc, tol=cfg.tol, max_iter=cfg.max_iter, retries=cfg.retries)
        phys = inv.recover_physical(fields, hb, gc)
    except (DomainExit, NoContraction, SingularDenominator, NonPositiveState,
            DomainError) as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    phys.to_csv(out / "solution.csv")

    residuals = {}
    for rep in (ver.residual_hodograph_system(fields, hb, gc),
                ver.residual_characteristic_form(phys, gc),
                ver.residual_decomposition_Xi(phys, gc),
                ver.residual_euler(phys, gc)):
        residuals[rep.name] = rep.as_dict()

    pos = phys.t > 0.0
    bern = np.abs(0.5 * (phys.u ** 2 + phys.v ** 2)
                  + phys.c ** 2 / (cfg.gamma - 1.0) - phys.B)
    diag = {
        "problem": "euler",
        "gamma": cfg.gamma,
        "boundary": {"r1": hb.r1, "r2": hb.r2, "eps0": hb.eps0},
        "iterations": it_report.as_dict(),
        "converged": it_report.converged,
        "grid": {"delta": it_report.delta, "nt": cfg.nt, "nr": cfg.nr},
        "residuals": residuals,
        "state_checks": {
            "jacobian_max_t_positive": float(np.max(phys.jac[pos])),
            "jacobian_all_negative": bool(np.all(phys.jac[pos] < 0.0)),
            "bracket_sign_constant": bool(np.all(phys.bracket < 0.0)),
            "supersonic_all": bool(np.all(
                (phys.u ** 2 + phys.v ** 2 - phys.c ** 2)[pos] > 0.0)),
            "bernoulli_max_error": float(np.max(bern)),
        },
    }
    _write_json(out / "diagnostics.json", diag)
    print(f"euler run converged={it_report.converged} "
          f"delta={it_report.delta} sweeps={it_report.sweeps}")
    return EXIT_OK


def run_tricomi(cfg: RunConfig, out: Path) -> int:
    try:
        case = tri.make_case(cfg.tri_case, cfg.tri_x1, cfg.tri_x2, cfg.tri_delta,
                             cfg.tri_nt, cfg.tri_nr, u0=cfg.tri_u0, u1=cfg.tri_u1)
        max_iter = cfg.max_iter if cfg.max_iter != 50 else 100
        field, report = tri.solve_tricomi(case.prob, tol=cfg.tol, max_iter=max_iter)
        sol = tri.recover_u(field, case.prob)
    except (NoContraction, DomainError) as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    with open(out / "tricomi_solution.csv", "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "t", "y", "R", "S", "W", "u"])
        m, n = sol.x.shape
        for j in range(m):
            for k in range(n):
                writer.writerow([repr(float(val)) for val in
                                 (sol.x[j, k], sol.t[j], sol.y[j],
                                  field.R[j, k], field.S[j, k],
                                  field.W[j, k], sol.u[j, k])])

    diag = {
        "problem": "tricomi",
        "case": case.name,
        "iterations": report.as_dict(),
        "converged": report.converged,
        "fixed_point_residual": ver.residual_tricomi_integral(field, case.prob).as_dict(),
    }
    if case.exact is not None:
        errs = tri.max_node_errors(field, case)
        u_err = float(np.max(np.abs(sol.u - case.exact["u"](sol.x, sol.y[:, None]))))
        diag["max_node_errors"] = errs
        diag["max_error"] = max(errs.values())
        diag["u_max_error"] = u_err
    _write_json(out / "diagnostics.json", diag)
    print(f"tricomi case {case.name} converged={report.converged} "
          f"sweeps={report.sweeps}")
    return EXIT_OK


def run_verify(cfg: RunConfig, out: Path) -> int:
    try:
        gc, _data, _report, _db, hb = _build_hodograph(cfg)
    except ValidationError as exc:
        print(f"boundary validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        phys = inv.PhysicalSolution.from_csv(cfg.solution_path, hb, gc)
    except (OSError, DomainError, ValueError) as exc:
        print(f"cannot load solution: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    # rebuild the error fields on their rectangle so the transport-system
    # residual can be evaluated alongside the physical identities
    grid = hod.HodographGrid(
        delta=float(phys.t[-1]), nt=phys.t.size - 1, nr=phys.r.size,
        rbar1=lambda t, _lo=float(phys.r[0]): _lo,
        rbar2=lambda t, _hi=float(phys.r[-1]): _hi,
        auto_shrink=False)
    fields = hod.FieldTriple(grid, phys.U, phys.V, phys.W)

    residuals = {}
    for rep in (ver.residual_hodograph_system(fields, hb, gc),
                ver.residual_characteristic_form(phys, gc),
                ver.residual_decomposition_Xi(phys, gc),
                ver.residual_euler(phys, gc)):
        residuals[rep.name] = rep.as_dict()
    _write_json(out / "residuals.json", residuals)

    if cfg.max_residual is not None:
        worst = max(e["max_abs"] for rep in residuals.values()
                    for e in rep["entries"].values())
        if worst > cfg.max_residual:
            print(f"verification failed: residual {worst:.3e} exceeds "
                  f"{cfg.max_residual:.3e}", file=sys.stderr)
            return EXIT_VERIFY
    print("verification residuals written")
    return EXIT_OK


def run(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.problem == "euler":
        return run_euler(cfg, out)
    if cfg.problem == "tricomi":
        return run_tricomi(cfg, out)
    return run_verify(cfg, out)


# ----------------------------------------------------------------------
# Entry point


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="sonicflow",
        description="Sonic-supersonic Euler solver and its linear model problem")
    ap.add_argument("--config", help="YAML run configuration")
    ap.add_argument("--out-dir", help="output directory (overrides config)")
    ap.add_argument("--tol", type=float, help="solver tolerance override")
    ap.add_argument("--max-iter", type=int, help="sweep budget override")
    ap.add_argument("--grid", help="Nt,Nr override")
    ap.add_argument("--delta", type=float, help="initial extent override")
    ap.add_argument("--case", help="built-in tricomi case (exact1, exact2, zero)")
    args = ap.parse_args(argv)

    try:
        if args.config:
            cfg = load_config(args.config)
        elif args.case:
            cfg = parse_config({"problem": "tricomi", "tricomi": {"case": args.case}})
        else:
            raise ConfigError("provide --config or --case")
        if args.case and cfg.problem == "tricomi":
            if args.case not in ("exact1", "exact2", "zero"):
                raise ConfigError(f"unknown built-in case {args.case!r}")
            cfg.tri_case = args.case
        if args.out_dir:
            cfg.out_dir = args.out_dir
        if args.tol is not None:
            if args.tol <= 0:
                raise ConfigError("--tol must be positive")
            cfg.tol = args.tol
        if args.max_iter is not None:
            if args.max_iter < 1:
                raise ConfigError("--max-iter must be >= 1")
            cfg.max_iter = args.max_iter
        if args.delta is not None:
            if not 0 < args.delta < 1:
                raise ConfigError("--delta must lie in (0, 1)")
            if cfg.problem == "tricomi":
                cfg.tri_delta = args.delta
            else:
                cfg.delta = args.delta
        if args.grid:
            try:
                nt_s, nr_s = args.grid.split(",")
                nt, nr = int(nt_s), int(nr_s)
            except ValueError as exc:
                raise ConfigError("--grid expects 'Nt,Nr'") from exc
            if cfg.problem == "tricomi":
                cfg.tri_nt, cfg.tri_nr = nt, nr
            else:
                cfg.nt, cfg.nr = nt, nr
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        return run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SonicflowError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
