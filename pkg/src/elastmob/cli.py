"""Command-line entry point: run a named scenario or a JSON config, write a report.

Usage::

    python -m elastmob solve two-disc-elastance --d 0.05 --out results
    python -m elastmob solve my_config.json --grid=-3,-2,3,2,120,80
    python -m elastmob list --json

Exit codes: 0 success, 2 invalid input, 3 solver failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import problems as pb
from .geometry import Disc, Ellipse, FourierStar, Panel, Periodic, RoundedBar, discretize
from .linsolve import SolverConfig, SolverFailure
from .operators import NeutralityError

CONFIG_SCHEMA = "elastmob.config/1"
EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 2, 3

SCENARIOS = {
    "two-disc-elastance": {
        "description": "two unit discs at gap d; capacitance solve then elastance round trip",
        "parameters": {"d": 0.5},
        "reference": "charge log-strength q1 = -0.239487 / -0.743917 / -2.348079 at d = 0.5 / 0.05 / 0.005",
    },
    "two-disc-mobility": {
        "description": "two unit discs at gap d; resistance solve then mobility round trip",
        "parameters": {"d": 0.5},
        "reference": "F1 = (27.180434, -6.575686), T = (-1.496082, 1.494675) at d = 0.5",
    },
    "splash-elastance": {
        "description": "five Fourier-star conductors; capacitance then elastance round trip",
        "parameters": {},
        "reference": "boundary potential errors <= 2.4e-5, about 30 GMRES iterations",
    },
    "splash-mobility": {
        "description": "five Fourier-star particles; resistance then mobility round trip",
        "parameters": {},
        "reference": "boundary velocity errors <= 2.5e-5, about 71 GMRES iterations",
    },
    "nanocomposite": {
        "description": "rounded-bar plates with an m x 10 ellipse lattice of aspect A; effective capacitance",
        "parameters": {"m": 0, "A": 1.0},
        "reference": "C~ = 2.2949 (m=0), 2.3033 (m=1, A=1), 2.3047 (m=4, A=1)",
    },
    "custom": {
        "description": "user geometry and problem data from a config file",
        "parameters": {},
        "reference": "none",
    },
}


class ConfigError(ValueError):
    """Invalid configuration; ``line`` points into the config text when known."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


# ---------------------------------------------------------------------------
# configuration


def _line_of(text, key):
    if text is None:
        return None
    for i, line in enumerate(text.splitlines(), 1):
        if f'"{key}"' in line:
            return i
    return None


def load_config(source, overrides=None):
    """Resolve a scenario name or a JSON config path into a config dict."""
    text = None
    if source in SCENARIOS:
        if source == "custom":
            raise ConfigError("the custom scenario needs a config file")
        cfg = {"schema": CONFIG_SCHEMA, "scenario": source,
               "parameters": dict(SCENARIOS[source]["parameters"])}
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigError(f"unknown scenario or missing config file: {source!r}")
        text = path.read_text()
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config: {exc.msg}", exc.lineno) from None
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object", 1)
        if cfg.get("schema") != CONFIG_SCHEMA:
            raise ConfigError(f"config schema must be {CONFIG_SCHEMA!r}", _line_of(text, "schema"))
        if cfg.get("scenario") not in SCENARIOS:
            raise ConfigError(f"unknown scenario {cfg.get('scenario')!r}", _line_of(text, "scenario"))
        cfg.setdefault("parameters", {})
        for k, v in SCENARIOS[cfg["scenario"]]["parameters"].items():
            cfg["parameters"].setdefault(k, v)
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k in ("d", "m", "A"):
            if k not in SCENARIOS[cfg["scenario"]]["parameters"]:
                raise ConfigError(f"--{k} does not apply to scenario {cfg['scenario']!r}")
            cfg["parameters"][k] = v
        elif k == "tol":
            cfg.setdefault("solver", {})["tol"] = v
        elif k == "grid":
            cfg.setdefault("output", {})["grid"] = v
    _validate(cfg, text)
    return cfg


def _validate(cfg, text):
    par = cfg["parameters"]
    if "d" in par and not (isinstance(par["d"], (int, float)) and par["d"] > 0):
        raise ConfigError("gap d must be a positive number", _line_of(text, "d"))
    if "m" in par and not (isinstance(par["m"], int) and par["m"] >= 0):
        raise ConfigError("row count m must be a non-negative integer", _line_of(text, "m"))
    if "A" in par and not (isinstance(par["A"], (int, float)) and par["A"] > 0):
        raise ConfigError("aspect ratio A must be positive", _line_of(text, "A"))
    solver = cfg.get("solver", {})
    try:
        SolverConfig(**{k: solver[k] for k in ("tol", "max_iter", "restart") if k in solver})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver: {exc}", _line_of(text, "solver")) from None
    if solver.get("method", "gmres") not in ("gmres", "dense"):
        raise ConfigError("solver method must be 'gmres' or 'dense'", _line_of(text, "method"))
    grid = cfg.get("output", {}).get("grid")
    if grid is not None:
        _parse_grid(grid)
    if cfg["scenario"] == "custom":
        geo = cfg.get("geometry")
        if not isinstance(geo, list) or not geo:
            raise ConfigError("custom scenario needs a non-empty geometry list",
                              _line_of(text, "geometry"))
        prob = cfg.get("problem")
        if not isinstance(prob, dict) or prob.get("kind") not in (
                "elastance", "capacitance", "mobility", "resistance"):
            raise ConfigError("problem.kind must be elastance, capacitance, mobility or resistance",
                              _line_of(text, "problem"))
        need = {"elastance": ["q"], "capacitance": ["phi"], "mobility": ["F", "T"],
                "resistance": ["v", "omega"]}[prob["kind"]]
        for key in need:
            arr = prob.get(key)
            if arr is None or len(arr) != len(geo):
                raise ConfigError(f"problem.{key} needs one entry per body ({len(geo)})",
                                  _line_of(text, key) or _line_of(text, "problem"))


def _parse_grid(spec):
    if isinstance(spec, str):
        parts = spec.split(",")
    elif isinstance(spec, dict):
        parts = list(spec.get("bbox", [])) + [spec.get("nx"), spec.get("ny")]
    else:
        parts = list(spec)
    try:
        x0, y0, x1, y1 = (float(p) for p in parts[:4])
        nx, ny = int(parts[4]), int(parts[5])
    except (TypeError, ValueError, IndexError):
        raise ConfigError("grid must be x0,y0,x1,y1,nx,ny") from None
    if len(parts) != 6 or nx < 2 or ny < 2 or x1 <= x0 or y1 <= y0:
        raise ConfigError("grid must be x0,y0,x1,y1,nx,ny with x1 > x0, y1 > y0, nx, ny >= 2")
    return (x0, y0, x1, y1), nx, ny


def config_checksum(cfg):
    """SHA-256 of the canonical JSON form of a resolved config."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _curve(spec):
    kind = spec.get("kind")
    p = spec.get("parameters", {})
    if kind == "disc":
        return Disc(tuple(p.get("center", (0.0, 0.0))), float(p.get("radius", 1.0)))
    if kind == "ellipse":
        return Ellipse(tuple(p.get("center", (0.0, 0.0))), tuple(p.get("semi_axes", (1.0, 1.0))),
                       float(p.get("rotation", 0.0)))
    if kind == "star":
        return FourierStar(tuple(p.get("center", (0.0, 0.0))), float(p.get("beta", 0.0)),
                           tuple(p.get("coefficients", ())))
    if kind == "bar":
        return RoundedBar(float(p.get("shift", 0.0)))
    raise ConfigError(f"unknown curve kind {kind!r}")


def _scheme(spec):
    s = spec.get("scheme", {"type": "panel"})
    if s.get("type", "panel") == "panel":
        return Panel(int(s.get("counts", 16)), int(s.get("order", 16)))
    if s["type"] == "periodic":
        return Periodic(int(s.get("counts", 256)), float(s.get("offset", 0.0)))
    raise ConfigError(f"unknown scheme type {s['type']!r}")


# ---------------------------------------------------------------------------
# running


def run(cfg):
    """Solve the configured scenario; returns ``(lines, report)`` for the report file."""
    par = cfg["parameters"]
    solver = cfg.get("solver", {})
    config = SolverConfig(**{k: solver[k] for k in ("tol", "max_iter", "restart") if k in solver})
    method = solver.get("method", "gmres")
    scen = cfg["scenario"]
    out = {}
    if scen.startswith("two-disc") or scen.startswith("splash"):
        if scen.startswith("two-disc"):
            data = pb.load_data("two_disc")
            disc = pb.two_disc_discretization(float(par["d"]))
        else:
            data = pb.load_data("splash")
            disc = pb.splash_discretization()
        if scen.endswith("elastance"):
            rt = pb.roundtrip_elastance(disc, data["potentials"], config, method)
            out["q"] = rt.first.outputs["q"]
            out["log_strength"] = rt.first.outputs["log_strength"]
            out["phi"] = rt.second.outputs["phi"]
        else:
            rt = pb.roundtrip_mobility(disc, data["velocities"], data["angular_velocities"],
                                       config, method)
            out["F"] = rt.first.outputs["F"]
            out["T"] = rt.first.outputs["T"]
            out["v"] = rt.second.outputs["v"]
            out["omega"] = rt.second.outputs["omega"]
        out["errors"] = rt.errors
        out["u_inf"] = rt.first.u_inf
        out["iterations_first"] = rt.first.stats.iterations
        out["residual_first"] = rt.first.stats.residual
        report = rt.second
    elif scen == "nanocomposite":
        C, report = pb.effective_capacitance(int(par["m"]), float(par["A"]), config, method)
        out["C_eff"] = C
        out["phi"] = report.outputs["phi"]
        out["u_inf"] = report.u_inf
    else:
        disc = discretize([_curve(g) for g in cfg["geometry"]], [_scheme(g) for g in cfg["geometry"]])
        prob = cfg["problem"]
        kind = prob["kind"]
        if kind == "elastance":
            report = pb.solve_elastance(disc, prob["q"], float(prob.get("u_inf", 0.0)), config, method)
            out["phi"] = report.outputs["phi"]
        elif kind == "capacitance":
            report = pb.solve_capacitance(disc, prob["phi"], config, method)
            out["q"] = report.outputs["q"]
        elif kind == "mobility":
            report = pb.solve_mobility(disc, prob["F"], prob["T"], prob.get("u_inf", (0.0, 0.0)),
                                       config, method)
            out["v"] = report.outputs["v"]
            out["omega"] = report.outputs["omega"]
        else:
            report = pb.solve_resistance(disc, prob["v"], prob["omega"], config, method)
            out["F"] = report.outputs["F"]
            out["T"] = report.outputs["T"]
        out["u_inf"] = report.u_inf
        out["mu_max"] = float(np.abs(report.density).max()) if report.density.size else 0.0
    out["iterations"] = report.stats.iterations
    out["residual"] = report.stats.residual
    out["wall_time"] = report.stats.wall_time
    out["n_nodes"] = report.disc.n_nodes
    out["n_bodies"] = report.disc.n_bodies
    return out, report


def _fmt(v):
    a = np.asarray(v)
    if a.ndim == 0:
        x = a.item()
        return repr(float(x)) if isinstance(x, float) else str(x)
    return ", ".join(_fmt(x) for x in a.ravel())


def format_report(cfg, out):
    lines = ["# elastmob report",
             f"version = {__version__}",
             f"config_checksum = {config_checksum(cfg)}",
             f"scenario = {cfg['scenario']}"]
    lines += [f"parameter.{k} = {_fmt(v)}" for k, v in sorted(cfg["parameters"].items())]
    lines += [f"{k} = {_fmt(v)}" for k, v in out.items()]
    return "\n".join(lines) + "\n"


def write_grid(report, spec, path):
    bbox, nx, ny = _parse_grid(spec)
    X, Y, U, inside = pb.evaluate_field_grid(report, bbox, nx, ny, mask_inside=True)
    U = np.asarray(U).reshape(X.size, -1)
    if U.shape[1] == 2:
        U = np.hstack([U, np.hypot(U[:, :1], U[:, 1:])])
        head = "x,y,u1,u2,speed,masked"
    else:
        head = "x,y,u,masked"
    table = np.column_stack([X.ravel(), Y.ravel(), U, (inside.ravel() >= 0).astype(int)])
    fmt = ["%.17g"] * (table.shape[1] - 1) + ["%d"]
    np.savetxt(path, table, delimiter=",", header=head, comments="", fmt=fmt)


def set_threads(n):
    """Cap numba and BLAS worker counts."""
    import numba
    from threadpoolctl import threadpool_limits

    # prefer OpenMP / workqueue over an outdated TBB
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    threadpool_limits(n)


def cmd_solve(args):
    try:
        cfg = load_config(args.source, {"d": args.d, "m": args.m, "A": args.A,
                                        "tol": args.tol, "grid": args.grid})
        out_dir = Path(args.out or cfg.get("output", {}).get("dir", "."))
        out_dir.mkdir(parents=True, exist_ok=True)
        if not os.access(out_dir, os.W_OK):
            raise ConfigError(f"output directory {out_dir} is not writable")
    except ConfigError as exc:
        where = f"{args.source}:{exc.line}: " if exc.line else ""
        print(f"error: {where}{exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.threads:
        set_threads(args.threads)
    name = cfg["scenario"]
    try:
        out, report = run(cfg)
    except SolverFailure as exc:
        hist = out_dir / f"{name}.residuals.txt"
        np.savetxt(hist, np.asarray(exc.stats.history))
        print(f"solver failure: {exc}; residual history in {hist}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, NeutralityError, pb.OverlapError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    text = format_report(cfg, out)
    (out_dir / f"{name}.report.txt").write_text(text)
    grid = cfg.get("output", {}).get("grid")
    if grid is not None:
        write_grid(report, grid, out_dir / f"{name}.grid.csv")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_list(args):
    if args.json:
        print(json.dumps(SCENARIOS, indent=2))
    else:
        for name, info in SCENARIOS.items():
            print(f"{name}: {info['description']}")
            print(f"    reference: {info['reference']}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="elastmob", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"elastmob {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="run a named scenario or a JSON config file")
    s.add_argument("source", help="scenario name (see 'list') or path to a config file")
    s.add_argument("--d", type=float, help="gap between the two discs")
    s.add_argument("--m", type=int, help="number of inclusion rows")
    s.add_argument("--A", type=float, help="inclusion aspect ratio (horizontal / vertical)")
    s.add_argument("--tol", type=float, help="GMRES relative tolerance")
    s.add_argument("--threads", type=int, help="cap on worker threads")
    s.add_argument("--out", help="output directory (default: current)")
    s.add_argument("--grid", help="field grid x0,y0,x1,y1,nx,ny (use --grid=... when x0 is negative)")
    s.set_defaults(func=cmd_solve)
    ls = sub.add_parser("list", help="list built-in scenarios")
    ls.add_argument("--json", action="store_true", help="machine-readable output")
    ls.set_defaults(func=cmd_list)
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    return args.func(args)
