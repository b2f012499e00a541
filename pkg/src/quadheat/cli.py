"""Command-line front end.

Every subcommand writes CSV data plus a JSON manifest echoing the resolved
configuration.  Settings come from built-in defaults, then an optional INI
file (``--config``), then flags.  Exit codes: 0 success, 1 computational
failure, 2 configuration error.

INI schema (all keys optional)::

    [grid]      x_min, x_max, n
    [phi]       family (gauss-quad | gauss | constant), c, P
    [time]      h, t_end, blowup_threshold
    [solver]    x0, step, resolution, tol
    [bifurcate] c_range (a:b), ds, seed_branch (comma list)
    [frontier]  direction (gaussian | eigenmix), width, lo, hi, A, horizon, equilibrium
    [heteroclinic] eps, k
    [blowup]    base (zero | equilibrium), eps, beta, x0
"""

from __future__ import annotations

import argparse
import configparser
import copy
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

DEFAULTS = {
    "grid": {"x_min": -30.0, "x_max": 30.0, "n": 3001},
    "phi": {"family": "gauss-quad", "c": 0.0, "P": 1.0},
    "time": {"h": 1e-3, "t_end": 10.0, "blowup_threshold": 1e6},
    "solver": {"x0": 12.0, "step": 1e-3, "resolution": 2e-2, "tol": 1e-3},
    "bifurcate": {"c_range": "-0.5:0.8", "ds": 5e-3, "seed_branch": "upper,symmetric,fork+"},
    "frontier": {"direction": "gaussian", "width": 10.0, "lo": -3.0, "hi": -1.5, "A": 0.1, "horizon": 40.0,
                 "equilibrium": 0},
    "heteroclinic": {"eps": 0.5, "k": 3},
    "blowup": {"base": "zero", "eps": 1.0, "beta": 0.0, "x0": 0.0},
    "evolve": {"u0": "0", "equilibrium": -1, "A": 0.0, "width": 10.0},
    "run": {"threads": 1},
}

FAMILIES = ("gauss-quad", "gauss", "constant")
BRANCHES = ("upper", "symmetric", "fork+", "fork-")


class ConfigError(ValueError):
    pass


def _coerce(section, key, value):
    ref = DEFAULTS[section][key]
    try:
        if isinstance(ref, bool):
            return str(value).lower() in ("1", "true", "yes")
        if isinstance(ref, int):
            return int(value)
        if isinstance(ref, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: cannot parse {value!r}")
    return str(value)


def load_ini(path) -> dict:
    """Read an INI file into a partial config; unknown sections or keys are errors."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if not Path(path).is_file():
        raise ConfigError(f"config: no such file {path}")
    cp.read(path)
    out = {}
    for sec in cp.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"config: unknown section [{sec}]")
        for key, val in cp.items(sec):
            if key not in DEFAULTS[sec]:
                raise ConfigError(f"config: unknown field {sec}.{key}")
            out.setdefault(sec, {})[key] = _coerce(sec, key, val)
    return out


def parse_range(text: str) -> tuple[float, float]:
    parts = str(text).split(":")
    if len(parts) != 2:
        raise ConfigError(f"bifurcate.c_range: expected a:b, got {text!r}")
    try:
        a, b = float(parts[0]), float(parts[1])
    except ValueError:
        raise ConfigError(f"bifurcate.c_range: expected numbers, got {text!r}")
    return a, b


def validate(config: dict) -> list[str]:
    """Violations as ``"<field> <precondition> (got <value>)"``; empty means acceptable."""
    v = []
    g, t, p, s = config["grid"], config["time"], config["phi"], config["solver"]

    def bad(name, rule, value):
        v.append(f"{name} {rule} (got {value!r})")

    if not isinstance(g["n"], int) or g["n"] < 3:
        bad("grid.n", "≥ 3", g["n"])
    if not (math.isfinite(g["x_min"]) and math.isfinite(g["x_max"]) and g["x_min"] < g["x_max"]):
        bad("grid.x_min", "< grid.x_max", g["x_min"])
    if not t["h"] > 0:
        bad("time.h", "> 0", t["h"])
    if not t["t_end"] > 0:
        bad("time.t_end", "> 0", t["t_end"])
    if not t["blowup_threshold"] > 0:
        bad("time.blowup_threshold", "> 0", t["blowup_threshold"])
    if p["family"] not in FAMILIES:
        bad("phi.family", f"in {FAMILIES}", p["family"])
    for key in ("c", "P"):
        if not math.isfinite(p[key]):
            bad(f"phi.{key}", "finite", p[key])
    if not s["x0"] > 0:
        bad("solver.x0", "> 0", s["x0"])
    if not s["step"] > 0:
        bad("solver.step", "> 0", s["step"])
    if not s["resolution"] > 0:
        bad("solver.resolution", "> 0", s["resolution"])
    if not s["tol"] > 0:
        bad("solver.tol", "> 0", s["tol"])
    b = config["bifurcate"]
    try:
        lo, hi = parse_range(b["c_range"])
        if not lo < hi:
            bad("bifurcate.c_range", "a < b", b["c_range"])
    except ConfigError as exc:
        v.append(str(exc))
    if not b["ds"] > 0:
        bad("bifurcate.ds", "> 0", b["ds"])
    for name in str(b["seed_branch"]).split(","):
        if name.strip() not in BRANCHES:
            bad("bifurcate.seed_branch", f"in {BRANCHES}", name)
    f = config["frontier"]
    if f["direction"] not in ("gaussian", "eigenmix"):
        bad("frontier.direction", "in ('gaussian', 'eigenmix')", f["direction"])
    if not f["width"] > 0:
        bad("frontier.width", "> 0", f["width"])
    if not f["lo"] != f["hi"]:
        bad("frontier.lo", "!= frontier.hi", f["lo"])
    if not f["horizon"] > 0:
        bad("frontier.horizon", "> 0", f["horizon"])
    e = config["heteroclinic"]
    if not 0 < e["eps"] < 1:
        bad("heteroclinic.eps", "in (0, 1)", e["eps"])
    if not e["k"] >= 1:
        bad("heteroclinic.k", "≥ 1", e["k"])
    bl = config["blowup"]
    if bl["base"] not in ("zero", "equilibrium"):
        bad("blowup.base", "in ('zero', 'equilibrium')", bl["base"])
    if not bl["eps"] >= 0:
        bad("blowup.eps", "≥ 0", bl["eps"])
    if not bl["beta"] >= 0:
        bad("blowup.beta", "≥ 0", bl["beta"])
    if not config["run"]["threads"] >= 1:
        bad("run.threads", "≥ 1", config["run"]["threads"])
    return v


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for sec, vals in extra.items():
        out.setdefault(sec, {}).update(vals)
    return out


# --------------------------------------------------------------------------
# argument parsing

# flag dest -> (section, key)
FLAG_MAP = {
    "x_min": ("grid", "x_min"), "x_max": ("grid", "x_max"), "n": ("grid", "n"),
    "phi": ("phi", "family"), "c": ("phi", "c"), "P": ("phi", "P"),
    "h": ("time", "h"), "t_end": ("time", "t_end"), "blowup_threshold": ("time", "blowup_threshold"),
    "x0_match": ("solver", "x0"), "step": ("solver", "step"), "resolution": ("solver", "resolution"),
    "tol": ("solver", "tol"),
    "c_range": ("bifurcate", "c_range"), "ds": ("bifurcate", "ds"), "seed_branch": ("bifurcate", "seed_branch"),
    "direction": ("frontier", "direction"), "width": ("frontier", "width"), "lo": ("frontier", "lo"),
    "hi": ("frontier", "hi"), "amplitude": ("frontier", "A"), "horizon": ("frontier", "horizon"),
    "equilibrium": ("frontier", "equilibrium"),
    "eps": ("heteroclinic", "eps"), "k": ("heteroclinic", "k"),
    "base": ("blowup", "base"), "fence_eps": ("blowup", "eps"), "beta": ("blowup", "beta"),
    "shift": ("blowup", "x0"),
    "u0": ("evolve", "u0"), "start_eq": ("evolve", "equilibrium"), "perturb": ("evolve", "A"),
    "threads": ("run", "threads"),
}


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--out", help="primary output CSV path")
    common.add_argument("--x-min", dest="x_min", type=float, default=S)
    common.add_argument("--x-max", dest="x_max", type=float, default=S)
    common.add_argument("--n", type=int, default=S, help="grid sample count")
    common.add_argument("--phi", default=S, help="forcing family: gauss-quad, gauss or constant")
    common.add_argument("--c", type=float, default=S, help="forcing parameter c")
    common.add_argument("--P", type=float, default=S, help="constant forcing value")
    common.add_argument("--h", type=float, default=S, help="time step")
    common.add_argument("--t-end", dest="t_end", type=float, default=S)
    common.add_argument("--blowup-threshold", dest="blowup_threshold", type=float, default=S)
    common.add_argument("--x0", dest="x0_match", type=float, default=S, help="matching plane for tails")
    common.add_argument("--step", type=float, default=S, help="RK4 step for phase-plane shooting")
    common.add_argument("--resolution", type=float, default=S, help="Z-curve plane resolution")
    common.add_argument("--tol", type=float, default=S, help="convergence / bisection tolerance")
    common.add_argument("--threads", type=int, default=S)

    p = argparse.ArgumentParser(prog="quadheat", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("evolve", parents=[common], help="IMEX run from given initial data")
    e.add_argument("--u0", default=S, help="constant value or CSV file (x,value)")
    e.add_argument("--start-eq", dest="start_eq", type=int, default=S,
                   help="start from equilibrium with this index instead of --u0")
    e.add_argument("--perturb", type=float, default=S, help="gaussian perturbation amplitude for --start-eq")

    sub.add_parser("equilibria", parents=[common], help="find all equilibria")

    b = sub.add_parser("bifurcate", parents=[common], help="continue branches in c")
    b.add_argument("--c-range", dest="c_range", default=S, help="a:b with a < b")
    b.add_argument("--ds", type=float, default=S)
    b.add_argument("--seed-branch", dest="seed_branch", default=S,
                   help="comma list of upper, symmetric, fork+, fork-")

    sub.add_parser("spectrum", parents=[common], help="eigenvalues at each equilibrium")

    h = sub.add_parser("heteroclinic", parents=[common], help="funnel-interior run between two equilibria")
    h.add_argument("--eps", type=float, default=S)
    h.add_argument("--k", type=int, default=S, help="eigenvalue curves along the orbit")

    f = sub.add_parser("frontier", parents=[common], help="bisect a basin boundary")
    f.add_argument("--direction", default=S, help="gaussian (bisect amplitude) or eigenmix (bisect angle)")
    f.add_argument("--width", type=float, default=S)
    f.add_argument("--lo", type=float, default=S)
    f.add_argument("--hi", type=float, default=S)
    f.add_argument("--amplitude", type=float, default=S, help="fixed amplitude for eigenmix")
    f.add_argument("--horizon", type=float, default=S)
    f.add_argument("--equilibrium", type=int, default=S, help="index of the base equilibrium")

    u = sub.add_parser("blowup", parents=[common], help="Fujita fence experiment")
    u.add_argument("--base", default=S, help="zero or equilibrium")
    u.add_argument("--fence-eps", dest="fence_eps", type=float, default=S, help="depth of constant -eps data")
    u.add_argument("--beta", type=float, default=S, help="shifted-gaussian depth (overrides --fence-eps)")
    u.add_argument("--shift", type=float, default=S, help="delta / gaussian centre")
    return p


def resolve(args) -> dict:
    cfg = default_config()
    if getattr(args, "config", None):
        cfg = merge(cfg, load_ini(args.config))
    for dest, (sec, key) in FLAG_MAP.items():
        if hasattr(args, dest):
            cfg[sec][key] = getattr(args, dest)
    return cfg


# --------------------------------------------------------------------------
# commands


class Failure(RuntimeError):
    pass


def _objects(cfg):
    from .grid import Grid, PotentialProfile

    g = cfg["grid"]
    grid = Grid(g["x_min"], g["x_max"], g["n"])
    p = cfg["phi"]
    fam = p["family"]
    if fam == "gauss-quad":
        phi = PotentialProfile.gaussian_quadratic(p["c"])
    elif fam == "gauss":
        phi = PotentialProfile.gaussian(p["c"])
    else:
        phi = PotentialProfile.constant(p["P"])
    return grid, phi


def _equilibria(cfg, grid, phi, require=1):
    from .equilibrium import find_equilibria

    s = cfg["solver"]
    sols = find_equilibria(phi, s["x0"], grid, resolution=s["resolution"], step=s["step"])
    if len(sols) < require:
        raise Failure(f"necessary/matching conditions not met; {len(sols)} equilibria"
                      + (f" ({sols.reason})" if sols.reason else ""))
    return sols


def _stem(out: Path) -> Path:
    return out.with_suffix("")


def cmd_evolve(cfg, out, files):
    from .dynamics import Gaussian
    from .grid import GridFunction
    from .imex import Reaction, evolve

    grid, phi = _objects(cfg)
    t = cfg["time"]
    ev = cfg["evolve"]
    ff = (0.0, 0.0)
    if ev["equilibrium"] >= 0:
        sols = _equilibria(cfg, grid, phi)
        if ev["equilibrium"] >= len(sols):
            raise Failure(f"equilibrium index {ev['equilibrium']} out of range ({len(sols)} found)")
        sol = sols[ev["equilibrium"]]
        u0 = sol.profile + ev["A"] * Gaussian(cfg["frontier"]["width"]).vector(sol.profile)
        ff = sol.far_field
    else:
        try:
            u0 = GridFunction(grid, np.full(grid.n, float(ev["u0"])))
        except ValueError:
            u0 = GridFunction.from_csv(ev["u0"])
            if u0.grid != grid:
                raise ConfigError("evolve.u0: CSV grid differs from the configured grid")
    traj = evolve(u0, t["h"], t["t_end"], Reaction.quadratic(phi, grid), t["blowup_threshold"], far_field=ff)
    traj.save(out, _stem(out).as_posix() + ".trajectory.json")
    files += [out.as_posix(), _stem(out).as_posix() + ".trajectory.json"]
    return {"blowup": traj.metadata()["blowup"], "snapshots": len(traj)}


def cmd_equilibria(cfg, out, files):
    from .spectrum import count_positive

    grid, phi = _objects(cfg)
    sols = _equilibria(cfg, grid, phi)
    rows = ["index,f0,fp0,residual,n_unstable"]
    summary = []
    for i, s in enumerate(sols):
        s.n_unstable = int(count_positive(s.profile))
        path = f"{_stem(out).as_posix()}_{i}.csv"
        s.profile.to_csv(path)
        files.append(path)
        rows.append(f"{i},{s.f0!r},{s.fp0!r},{s.residual!r},{s.n_unstable}")
        summary.append(s.summary())
    out.write_text("\n".join(rows) + "\n")
    files.insert(0, out.as_posix())
    return {"equilibria": summary}


def cmd_bifurcate(cfg, out, files):
    from .bifurcation import bifurcation_diagram, export_diagram

    if cfg["phi"]["family"] != "gauss-quad":
        raise ConfigError("phi.family: bifurcate supports gauss-quad only")
    grid, _ = _objects(cfg)
    b = cfg["bifurcate"]
    names = tuple(n.strip() for n in b["seed_branch"].split(","))
    branches = bifurcation_diagram(parse_range(b["c_range"]), b["ds"], names, grid)
    ev_path = _stem(out).as_posix() + "_events.csv"
    export_diagram(branches, out, ev_path)
    files += [out.as_posix(), ev_path]
    events = sorted({(e.kind, round(e.c, 4)) for br in branches for e in br.events})
    return {"branches": len(branches), "points": sum(len(br.points) for br in branches),
            "events": [{"kind": k, "c": c} for k, c in events]}


def cmd_spectrum(cfg, out, files):
    from .spectrum import SchrodingerOp, eigs_above_edge

    grid, phi = _objects(cfg)
    sols = _equilibria(cfg, grid, phi)
    rows = ["equilibrium,index,eigenvalue"]
    res = []
    for i, s in enumerate(sols):
        rep = eigs_above_edge(SchrodingerOp.linearization(s.profile))
        path = f"{_stem(out).as_posix()}_{i}.csv"
        rep.to_csv(path)
        files.append(path)
        for j, lam in enumerate(rep.eigenvalues, start=1):
            rows.append(f"{i},{j},{lam!r}")
        res.append({"f0": s.f0, "n_positive": rep.n_positive, "edge_ambiguous": rep.edge_ambiguous,
                    "truncation_shift": None if math.isnan(rep.truncation_shift) else rep.truncation_shift})
    out.write_text("\n".join(rows) + "\n")
    files.insert(0, out.as_posix())
    return {"spectra": res}


def cmd_heteroclinic(cfg, out, files):
    from .dynamics import classify_fate, construct_heteroclinic, verify_variational
    from .spectrum import spectrum_along_orbit

    grid, phi = _objects(cfg)
    sols = _equilibria(cfg, grid, phi, require=2)
    lo, hi = sols[0], sols[-1]
    t = cfg["time"]
    traj = construct_heteroclinic(lo, hi, phi, cfg["heteroclinic"]["eps"], t["h"], t["t_end"])
    fate = classify_fate(traj, [lo, hi], cfg["solver"]["tol"])
    var = verify_variational(traj, phi)
    orb = spectrum_along_orbit(traj, cfg["heteroclinic"]["k"], max(1, len(traj) // 200), cfg["run"]["threads"])
    traj.save(out, _stem(out).as_posix() + ".trajectory.json")
    sp = _stem(out).as_posix() + "_spectrum.csv"
    orb.to_csv(sp)
    files += [out.as_posix(), _stem(out).as_posix() + ".trajectory.json", sp]
    return {"fate": json.loads(fate.to_json()), "monotone": var.monotone, "max_decrease": var.max_decrease,
            "energy_vs_action_gap": var.energy_vs_action_gap, "action_drop": var.action_drop,
            "min_gap": orb.min_gap}


def cmd_frontier(cfg, out, files):
    from .dynamics import Gaussian, frontier_search

    grid, phi = _objects(cfg)
    sols = _equilibria(cfg, grid, phi)
    f = cfg["frontier"]
    if not 0 <= f["equilibrium"] < len(sols):
        raise Failure(f"equilibrium index {f['equilibrium']} out of range ({len(sols)} found)")
    base = sols[f["equilibrium"]]
    vary = "theta" if f["direction"] == "eigenmix" else "A"
    res = frontier_search(base, Gaussian(f["width"]), f["lo"], f["hi"], cfg["solver"]["tol"], phi, f["horizon"],
                          equilibria=list(sols), h=cfg["time"]["h"], vary=vary, A=f["A"])
    rows = ["value,verdict,to,t_star"]
    for val, rep in res.log:
        rows.append(f"{val!r},{rep.verdict},{'' if rep.to is None else rep.to},{'' if rep.t_star is None else repr(rep.t_star)}")
    out.write_text("\n".join(rows) + "\n")
    files.append(out.as_posix())
    return {"frontier": float(res), "bracket": list(res.bracket), "undecided": res.undecided, "vary": vary}


def cmd_blowup(cfg, out, files):
    from .dynamics import fujita_experiment, shifted_gaussian
    from .grid import GridFunction

    grid, phi = _objects(cfg)
    b = cfg["blowup"]
    if b["base"] == "zero":
        f = grid.zeros()
    else:
        f = _equilibria(cfg, grid, phi)[-1].profile
        if np.any(f.values < 0):
            raise Failure("base equilibrium is not nonnegative")
    if b["beta"] > 0:
        h0 = shifted_gaussian(grid, b["beta"], b["x0"])
    else:
        h0 = GridFunction(grid, np.full(grid.n, -b["eps"]))
    d = fujita_experiment(f, h0, b["x0"], cfg["time"]["t_end"], cfg["time"]["h"],
                          blowup_threshold=cfg["time"]["blowup_threshold"])
    d.to_csv(out)
    files.append(out.as_posix())
    return {"violation_time": d.violation_time, "t_star": d.t_star, "t_star_limit": d.t_star_limit,
            "consistent": d.consistent}


COMMANDS = {"evolve": cmd_evolve, "equilibria": cmd_equilibria, "bifurcate": cmd_bifurcate,
            "spectrum": cmd_spectrum, "heteroclinic": cmd_heteroclinic, "frontier": cmd_frontier,
            "blowup": cmd_blowup}


def write_manifest(path: Path, command: str, cfg: dict, files, result, status: str) -> None:
    manifest = {"command": command, "version": __version__, "status": status, "config": cfg,
                "outputs": list(files), "result": result}
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def _attach_range(argv):
    # "-0.5:0.8" is not a plain negative number, so argparse would read it as a flag
    argv = list(sys.argv[1:] if argv is None else argv)
    out = []
    i = 0
    while i < len(argv):
        if argv[i] == "--c-range" and i + 1 < len(argv):
            out.append(f"--c-range={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(_attach_range(argv))
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        cfg = resolve(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    problems = validate(cfg)
    if problems:
        for msg in problems:
            print(f"config error: {msg}", file=sys.stderr)
        return 2
    threads = str(cfg["run"]["threads"])
    os.environ.setdefault("OMP_NUM_THREADS", threads)
    out = Path(args.out or f"{args.command}.csv")
    manifest = _stem(out).with_name(_stem(out).name + ".manifest.json")
    files = []
    try:
        result = COMMANDS[args.command](cfg, out, files)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (Failure, RuntimeError, ValueError) as exc:
        print(str(exc), file=sys.stderr)
        write_manifest(manifest, args.command, cfg, files, {"error": str(exc)}, "failed")
        return 1
    write_manifest(manifest, args.command, cfg, files, result, "ok")
    print(json.dumps(result, default=_jsonable))
    return 0


if __name__ == "__main__":
    sys.exit(main())
