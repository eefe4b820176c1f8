"""Command line entry point: ``torsion-lab <experiment> --config path.json``.

Exit status is 0 when every in-config assertion passes, 1 on the first failed
assertion and 2 on configuration errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import closed_form as cf
from .errors import TorsionLabError
from .fem import (boundary_oscillation, energies, solve_dirichlet, solve_neumann_mean_zero, solve_robin,
                  write_solution)
from .geometry import (MAX_LEVEL, Annulus, Box, Disk, PerturbedDisk, Polygon, RegularPolygon, build_mesh,
                       mesh_measures, write_mesh)
from .report import SweepReport
from .shape_calculus import (PerturbationPath, annulus_compare, box_osc_sweep, fd_second_variation,
                             polygon_sweep, rectangle_osc_sweep, serrin_gap_report)

log = logging.getLogger("torsion_lab")


class ConfigError(TorsionLabError):
    pass


class AssertionFailure(TorsionLabError):
    pass


# ---------------------------------------------------------------------------
# config handling

DOMAINS = {
    "RegularPolygon": (RegularPolygon, {"N", "area"}),
    "Polygon": (Polygon, {"vertices"}),
    "Disk": (Disk, {"R"}),
    "Annulus": (Annulus, {"r_in", "r_out"}),
    "Box": (Box, {"half_widths"}),
    "PerturbedDisk": (PerturbedDisk, {"R", "k", "t"}),
}

EXPERIMENTS = {
    "closed-form": {"name": None, "params": {}},
    "solve": {"domain": {"type": "RegularPolygon", "N": 4}, "problem": "mean_zero", "beta": 0.0, "s": 0.0,
              "level": 5},
    "polygon-sweep": {"N_min": 3, "N_max": 12, "levels": None, "h_target": 0.03, "n_levels": 3,
                      "rel_tol": 1e-3, "min_order": 1.8},
    "stability": {"R": 1.0, "k": [1, 2], "s": 0.0, "t0": 0.02, "level": 5, "rel_tol": 0.05,
                  "zero_tol": 1e-2},
    "annulus-compare": {"b_list": [1.5, 2.0, 3.0], "h_target": 0.05, "rel_tol": 0.01},
    "box-osc": {"n": 3, "eps_list": [0.2, 0.1, 0.05], "aspects": [1, 2, 5, 20], "exponent_tol": 0.05},
    "robin-identity": {"domain": {"type": "RegularPolygon", "N": 4}, "betas": [0.5, 1.0, 2.0], "level": 4,
                       "tol": 1e-10},
    "serrin-gap": {"n": 3, "eps_list": [0.2, 0.1, 0.05]},
}


def load_config(experiment: str, path=None, overrides=None) -> dict:
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {sorted(EXPERIMENTS)}")
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    named = raw.pop("experiment", experiment)
    if named != experiment:
        raise ConfigError(f"config is for experiment {named!r}, not {experiment!r}")
    defaults = EXPERIMENTS[experiment]
    unknown = set(raw) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys for {experiment}: {sorted(unknown)}")
    cfg = {**defaults, **raw, **(overrides or {})}
    return cfg


def make_domain(d) -> object:
    if not isinstance(d, dict) or "type" not in d:
        raise ConfigError("domain must be an object with a 'type' key")
    kind = d["type"]
    if kind not in DOMAINS:
        raise ConfigError(f"unknown domain type {kind!r}")
    cls, keys = DOMAINS[kind]
    extra = set(d) - keys - {"type"}
    if extra:
        raise ConfigError(f"unknown keys for {kind}: {sorted(extra)}")
    args = {k: v for k, v in d.items() if k != "type"}
    if kind == "Polygon":
        args["vertices"] = tuple(tuple(p) for p in args.get("vertices", ()))
    if kind == "Box":
        args["half_widths"] = tuple(args.get("half_widths", ()))
    try:
        return cls(**args)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {kind}: {exc}") from None


def _positive(name, v):
    if not isinstance(v, (int, float)) or not v > 0:
        raise ConfigError(f"{name} must be a positive number, got {v!r}")


def _level(name, v, max_level):
    if not isinstance(v, int) or v < 0 or v > max_level:
        raise ConfigError(f"{name} must be an integer in [0, {max_level}], got {v!r}")


# ---------------------------------------------------------------------------
# closed-form printer

PI = math.pi


def _p(params, key, default=None):
    if key in params:
        return params[key]
    if default is None:
        raise ConfigError(f"missing parameter {key!r}")
    return default


FORMULAS = {
    "E_PN": ("E = area^2 (3 + tan^2(pi/N)) / (24 N tan(pi/N))",
             lambda p: [("E", cf.regular_polygon_energy(int(_p(p, "N")), float(_p(p, "area", PI))).E)]),
    "T_PN": ("T = -E/2, E = area^2 (3 + tan^2(pi/N)) / (24 N tan(pi/N))",
             lambda p: [("T", cf.regular_polygon_energy(int(_p(p, "N")), float(_p(p, "area", PI))).T)]),
    "h": ("h(b) = 2b^3 - b^2 - 2b^2 log b - 2b + 1", lambda p: [("h", cf.h_annulus(float(_p(p, "b"))))]),
    "annulus_gap": ("gap = (pi/4) h(b), int_disk = (pi/8)(b^2-1)^2",
                    lambda p: [(k, getattr(cf.annulus_disk_gap(float(_p(p, "b"))), k))
                               for k in ("integral_disk", "integral_annulus", "gap")]),
    "ball_T": ("T = -(1/2) int f u on B_R, u(R) = 0",
               lambda p: [("T", cf.ball_torsion(int(_p(p, "n", 2)), float(_p(p, "R", 1.0)),
                                                cf.RadialProfile.power(float(_p(p, "s", 0.0)))).T)]),
    "station_gap": ("b[(n-1)b^n + n b^(n-1) + 1]/(b^n + n b + n - 1) + 1/b^(n-1)",
                    lambda p: [("gap", cf.annulus_stationarity_gap(int(_p(p, "n", 2)), float(_p(p, "b"))))]),
    "mode": ("|zeta|^2 F R (fbar/n - F/(l + beta R)), F = f(R) - (n-1-beta R) fbar/n",
             lambda p: [("d2", cf.mode_second_variation(int(_p(p, "n", 2)), float(_p(p, "R", 1.0)),
                                                        float(_p(p, "beta", 0.0)),
                                                        cf.RadialProfile.power(float(_p(p, "s", 0.0))),
                                                        int(_p(p, "l"))))]),
    "stability": ("(n-1-beta R) fbar/n <= f(R) <= fbar",
                  lambda p: [("stable", cf.stability_condition(int(_p(p, "n", 2)), float(_p(p, "R", 1.0)),
                                                               float(_p(p, "beta", 0.0)),
                                                               cf.RadialProfile.power(float(_p(p, "s", 0.0)))))]),
    "box_E": ("u = -(sigma_n/(2 sigma_(n-1))) sum x_i^2/a_i + d",
            lambda p: [(k, getattr(cf.box_solution(_p(p, "a")), k)) for k in ("kappa", "c", "E")]),
    "box_osc": ("osc = sigma_1 sigma_n/(2 sigma_(n-1)), osc_bdy = kappa (sigma_1 - a_1)",
                lambda p: [(k, getattr(cf.box_oscillations(_p(p, "a")), k)) for k in ("osc_closure", "osc_boundary")]),
    "tangential_E": ("E = (rho/16) int_boundary |x - x0|^2 ds",
                     lambda p: [("E", cf.tangential_polygon_energy(_p(p, "vertices")).E)]),
    "kappa1": ("kappa_1 = -1/(2T)", lambda p: [("kappa1", cf.kappa1_from_T(float(_p(p, "T"))))]),
}


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_params(tokens) -> dict:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ConfigError(f"expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = _parse_value(v)
    return out


def fmt12(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return f"{v:.12g}"


def print_closed_form(name: str, params: dict, stream=None) -> list:
    stream = stream or sys.stdout
    if name not in FORMULAS:
        raise ConfigError(f"unknown closed form {name!r}; choose from {sorted(FORMULAS)}")
    formula, fn = FORMULAS[name]
    values = fn(params)
    for label, v in values:
        print(f"{label} = {fmt12(v)}  [{formula}]", file=stream)
    return values


# ---------------------------------------------------------------------------
# experiments; each returns (report, list of failure messages)


def run_closed_form(cfg, opts):
    name = cfg["name"]
    if name is None:
        raise ConfigError("closed-form needs a formula name")
    values = print_closed_form(name, cfg["params"])
    rep = SweepReport("closed-form", ["quantity", "value"], key="quantity", provenance={"formula": name})
    for label, v in values:
        rep.add(quantity=label, value=v)
    return rep, []


def run_solve(cfg, opts):
    spec = make_domain(cfg["domain"])
    _level("level", cfg["level"], opts.max_level)
    s = cfg["s"]
    if not isinstance(s, (int, float)) or s < 0:
        raise ConfigError("s must be a non-negative number")
    f = cf.RadialProfile.power(float(s))
    mesh = build_mesh(spec, cfg["level"], opts.max_level)
    problem = cfg["problem"]
    if problem == "mean_zero":
        sol = solve_neumann_mean_zero(mesh, f, float(cfg["beta"]), opts.solver, opts.tol)
    elif problem == "robin":
        _positive("beta", cfg["beta"])
        sol = solve_robin(mesh, f, float(cfg["beta"]), opts.solver, opts.tol)
    elif problem == "dirichlet":
        sol = solve_dirichlet(mesh, f, opts.solver, opts.tol)
    else:
        raise ConfigError(f"unknown problem {problem!r}")
    mm = mesh_measures(mesh)
    en = energies(sol)
    rep = SweepReport("solve", ["level", "nv", "h_max", "area", "perimeter", "T", "E", "dirichlet_energy",
                                "lambda", "c", "boundary_mean", "boundary_osc", "residual"],
                      key="level", provenance={"problem": problem, "solver": sol.solver, "tol": opts.tol})
    rep.add(**{"level": cfg["level"], "nv": mesh.nv, "h_max": mm.h_max, "area": mm.area,
               "perimeter": mm.perimeter, "T": en["T"], "E": en["E"], "dirichlet_energy": en["dirichlet_energy"],
               "lambda": sol.lam, "c": sol.c, "boundary_mean": sol.boundary_mean,
               "boundary_osc": boundary_oscillation(sol), "residual": sol.residual})
    if opts.out is not None:
        write_mesh(mesh, opts.out / "mesh.txt")
        write_solution(sol, opts.out / "solution.txt", "mesh.txt")
    return rep, []


def run_polygon_sweep(cfg, opts):
    n0, n1 = cfg["N_min"], cfg["N_max"]
    if not (isinstance(n0, int) and isinstance(n1, int) and 3 <= n0 <= n1 <= 64):
        raise ConfigError("need integers 3 <= N_min <= N_max <= 64")
    if cfg["levels"] is not None:
        for L in cfg["levels"]:
            _level("levels", L, opts.max_level)
    _positive("h_target", cfg["h_target"])
    rep = polygon_sweep(range(n0, n1 + 1), cfg["levels"], cfg["h_target"], cfg["n_levels"], opts.solver,
                        opts.max_level)
    fails = []
    rows = rep.rows
    for prev, row in zip(rows, rows[1:]):
        if not row["T_closed"] > prev["T_closed"]:
            fails.append(f"T_closed not strictly increasing at {row}")
    for row in rows:
        if not row["T_closed"] < -math.pi / 16:
            fails.append(f"T_closed not below the disk value: {row}")
        if not row["rel_err"] <= cfg["rel_tol"]:
            fails.append(f"rel_err above {cfg['rel_tol']}: {row}")
        if not row["order"] >= cfg["min_order"]:
            fails.append(f"convergence order below {cfg['min_order']}: {row}")
    return rep, fails


def run_stability(cfg, opts):
    ks = cfg["k"] if isinstance(cfg["k"], list) else [cfg["k"]]
    _positive("R", cfg["R"])
    _positive("t0", cfg["t0"])
    _level("level", cfg["level"], opts.max_level)
    if cfg["t0"] >= cfg["R"] / 2:
        raise ConfigError("t0 must stay below R/2")
    rep = SweepReport("stability", ["k", "estimate", "oracle", "rel_gap", "coarse", "fine", "converged"],
                      key="k", provenance={"R": cfg["R"], "s": cfg["s"], "t0": cfg["t0"], "level": cfg["level"]})
    fails = []
    for k in ks:
        t0 = cfg["t0"]
        path = PerturbationPath(cfg["R"], int(k), float(cfg["s"]), (-t0, -t0 / 2, 0.0, t0 / 2, t0))
        r = fd_second_variation(path, cfg["level"], solver=opts.solver)
        row = dict(k=int(k), estimate=r.estimate, oracle=r.oracle, rel_gap=r.rel_gap, coarse=r.coarse,
                   fine=r.fine, converged=r.converged)
        rep.add(**row)
        if abs(r.oracle) > 0.05:
            if np.sign(r.estimate) != np.sign(r.oracle):
                fails.append(f"sign mismatch: {row}")
            elif r.rel_gap > cfg["rel_tol"]:
                fails.append(f"relative gap above {cfg['rel_tol']}: {row}")
        elif abs(r.estimate - r.oracle) > cfg["zero_tol"]:
            fails.append(f"estimate not within {cfg['zero_tol']} of the oracle: {row}")
    return rep, fails


def run_annulus_compare(cfg, opts):
    bl = cfg["b_list"]
    if not isinstance(bl, list) or not bl or any(not isinstance(b, (int, float)) or not b > 1 for b in bl):
        raise ConfigError("b_list must be a non-empty list of numbers > 1")
    rep = annulus_compare(bl, cfg["h_target"], opts.solver, opts.max_level)
    fails = [f"rel_err above {cfg['rel_tol']}: {r}" for r in rep.rows if not r["rel_err"] <= cfg["rel_tol"]]
    fails += [f"closed-form gap not positive: {r}" for r in rep.rows if not r["gap_closed"] > 0]
    gaps = rep.column("gap_closed")
    fails += [f"gap not increasing in b at row {i}" for i in range(1, len(gaps)) if not gaps[i] > gaps[i - 1]]
    return rep, fails


def run_box_osc(cfg, opts):
    n = cfg["n"]
    if not isinstance(n, int) or n < 2:
        raise ConfigError("n must be an integer >= 2")
    if n == 2:
        rep = rectangle_osc_sweep(cfg["aspects"])
        return rep, [f"osc bound fails: {r}" for r in rep.rows if not r["bound_holds"]]
    rep = box_osc_sweep(n, cfg["eps_list"])
    fails = []
    for r in rep.rows[:1]:
        for col in ("exponent_closure", "exponent_boundary"):
            if not abs(r[col] - (n - 2)) <= cfg["exponent_tol"]:
                fails.append(f"{col} {r[col]} not within {cfg['exponent_tol']} of {n - 2}")
    return rep, fails


def run_robin_identity(cfg, opts):
    spec = make_domain(cfg["domain"])
    _level("level", cfg["level"], opts.max_level)
    mesh = build_mesh(spec, cfg["level"], opts.max_level)
    mm = mesh_measures(mesh)
    rep = SweepReport("robin-identity", ["beta", "T_beta", "J_beta", "correction", "residual"], key="beta",
                      provenance={"level": cfg["level"], "tol": cfg["tol"], "domain": cfg["domain"]})
    fails = []
    for beta in cfg["betas"]:
        _positive("beta", beta)
        T = solve_neumann_mean_zero(mesh, None, float(beta), opts.solver, opts.tol).T
        J = solve_robin(mesh, None, float(beta), opts.solver, opts.tol).T
        corr = mm.area**2 / (2 * beta * mm.perimeter)
        row = dict(beta=float(beta), T_beta=T, J_beta=J, correction=corr, residual=T - J - corr)
        rep.add(**row)
        if not abs(row["residual"]) <= cfg["tol"]:
            fails.append(f"identity residual above {cfg['tol']}: {row}")
    return rep, fails


def run_serrin_gap(cfg, opts):
    n = cfg["n"]
    if not isinstance(n, int) or n < 2:
        raise ConfigError("n must be an integer >= 2")
    rep = serrin_gap_report(n, cfg["eps_list"])
    osc, dist = rep.column("osc_boundary"), rep.column("distortion")
    fails = []
    # rows are sorted by eps ascending: oscillation grows, distortion shrinks
    fails += [f"osc not monotone at row {i}" for i in range(1, len(osc)) if not osc[i] > osc[i - 1]]
    fails += [f"distortion not monotone at row {i}" for i in range(1, len(dist)) if not dist[i] < dist[i - 1]]
    return rep, fails


RUNNERS = {
    "closed-form": run_closed_form,
    "solve": run_solve,
    "polygon-sweep": run_polygon_sweep,
    "stability": run_stability,
    "annulus-compare": run_annulus_compare,
    "box-osc": run_box_osc,
    "robin-identity": run_robin_identity,
    "serrin-gap": run_serrin_gap,
}


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="torsion-lab", description=__doc__.splitlines()[0])
    p.add_argument("experiment", choices=sorted(EXPERIMENTS))
    p.add_argument("params", nargs="*", help="closed-form only: formula name followed by key=value pairs")
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--tol", type=float, default=1e-12, help="Krylov residual tolerance")
    p.add_argument("--max-level", type=int, default=MAX_LEVEL)
    p.add_argument("--solver", choices=("krylov", "direct"), default="direct")
    return p


def _manifest(experiment, cfg, opts, wall):
    return {
        "experiment": experiment,
        "inputs": cfg,
        "options": {"tol": opts.tol, "max_level": opts.max_level, "solver": opts.solver},
        "versions": {"torsion_lab": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "threads": os.environ.get("TORSION_LAB_THREADS", "0"),
        "wall_time_s": wall,
    }


def run(experiment: str, config=None, out=None, quiet=False, tol=1e-12, max_level=MAX_LEVEL,
        solver="direct", params=()) -> int:
    opts = argparse.Namespace(out=Path(out) if out is not None else None, tol=tol, max_level=max_level,
                              solver=solver)
    t0 = time.perf_counter()
    try:
        overrides = None
        if experiment == "closed-form" and params:
            overrides = {"name": params[0], "params": parse_params(params[1:])}
        elif params:
            raise ConfigError("positional parameters are only accepted by closed-form")
        cfg = load_config(experiment, config, overrides)
        if opts.out is not None:
            opts.out.mkdir(parents=True, exist_ok=True)
        rep, fails = RUNNERS[experiment](cfg, opts)
    except (ConfigError, TorsionLabError, ValueError, TypeError, KeyError) as exc:
        print(f"torsion-lab: configuration error: {exc}", file=sys.stderr)
        return 2
    wall = time.perf_counter() - t0
    log.info("%s finished in %.2f s", experiment, wall)
    rep.provenance.setdefault("max_level", max_level)
    if opts.out is not None:
        stem = experiment.replace("-", "_")
        rep.to_csv(opts.out / f"{stem}.csv")
        rep.to_json(opts.out / f"{stem}.json")
        with open(opts.out / "manifest.json", "w") as fh:
            json.dump(_manifest(experiment, cfg, opts, wall), fh, indent=2, default=str)
            fh.write("\n")
    if not quiet and experiment != "closed-form":
        sys.stdout.write(rep.to_csv())
    if fails:
        print(f"torsion-lab: assertion failed: {fails[0]}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    return run(args.experiment, args.config, args.out, args.quiet, args.tol, args.max_level, args.solver,
               args.params)


if __name__ == "__main__":
    sys.exit(main())
