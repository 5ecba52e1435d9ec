"""Command line interface: fastslow <command> --config run.json --out dir.

Every command writes <command>.csv and <command>.manifest.json into the output
directory. A manifest can be passed back as --config to reproduce a run.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys as _sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import ldp, montecarlo, standardpairs, statistics, transfer
from .errors import ConfigError, FastSlowError
from .system import PRESETS, TrajectoryState, build_system, preset, simulate

COMMANDS = ("simulate", "spectrum", "average", "variance", "rate-table", "path-rate", "domain",
            "pairs", "mgf", "llt", "ldp-probe", "dolgopyat-scan", "uni")

_NUM = (int, float)
_LIST = (list,)

# command -> {param: (accepted types, default)}
PARAMS = {
    "simulate": {"n_steps": (int, 1000), "x0": (_NUM, 0.1234), "dither": (bool, True)},
    "spectrum": {"thetas": (_LIST, None), "n_theta": (int, 16), "sigmas": (_LIST, [0.0, 0.1, 0.2])},
    "average": {"dt": (_NUM, 1e-3)},
    "variance": {"dt": (_NUM, 1e-3)},
    "rate-table": {"thetas": (_LIST, None), "b_grid": (_LIST, None), "b_min": (_NUM, -0.2),
                   "b_max": (_NUM, 0.2), "b_step": (_NUM, 0.05)},
    "path-rate": {"breakpoints": (_LIST, [0.0, 1.0]), "values": (_LIST, [0.0, 0.05]),
                  "quad_dt": (_NUM, 1e-2), "modes": (_LIST, ["frozen", "moving"]),
                  "quadratic": (bool, True)},
    "domain": {"p_max": (int, None)},
    "pairs": {"n_steps": (int, 5), "a": (_NUM, 0.3), "delta": (_NUM, None),
              "potential": (str, None), "potential_scale": ((*_NUM, list), 1.0),
              "C": (_NUM, 10.0), "D0": (_NUM, 10.0), "D1": (_NUM, 100.0)},
    "mgf": {"sigmas": (_LIST, [-0.1, 0.0, 0.1]), "n_paths": (int, 10_000)},
    "llt": {"t": (_NUM, 1.0), "shift": (_NUM, 0.0), "bins": (int, 64), "n_paths": (int, 10_000)},
    "ldp-probe": {"C": (_NUM, 1.0), "beta": (_NUM, 0.4), "eps_list": (_LIST, [1e-2, 3e-3, 1e-3]),
                  "n_paths": (int, 10_000)},
    "dolgopyat-scan": {"varsigmas": (_LIST, [5.0, 10.0, 20.0, 50.0]), "n": (int, None),
                       "n_seeds": (int, 16)},
    "uni": {"thetas": (_LIST, None), "n": (int, 10), "grid": (int, 2048)},
}

TOP_LEVEL = {
    "system": (dict, {"preset": "doubling-cos"}),
    "eps": (_NUM, 1e-3),
    "theta0": (_NUM, 0.5),
    "T": (_NUM, 1.0),
    "discretization": (dict, {"kind": "fourier", "size": 128}),
    "seed": (int, 0),
    "threads": (int, 1),
    "params": (dict, {}),
    "out": (str, None),
}
SYSTEM_KEYS = {"preset", "f", "omega", "A", "name"}


def _typed(value, types, where):
    types = types if isinstance(types, tuple) else (types,)
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(f"{where}: expected {'/'.join(t.__name__ for t in types)}, got a boolean")
    if not isinstance(value, types):
        raise ConfigError(f"{where}: expected {'/'.join(t.__name__ for t in types)}, "
                          f"got {type(value).__name__}")
    return value


def validate_config(raw, command):
    """Fill defaults and reject unknown keys or wrongly typed values."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(raw) - set(TOP_LEVEL)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    cfg = {}
    for key, (types, default) in TOP_LEVEL.items():
        present = key in raw and raw[key] is not None
        cfg[key] = _typed(raw[key], types, key) if present else default
    bad = set(cfg["system"]) - SYSTEM_KEYS
    if bad:
        raise ConfigError(f"unknown system keys: {sorted(bad)}")
    if "preset" in cfg["system"] and ({"f", "omega"} & set(cfg["system"])):
        raise ConfigError("give either a preset or expressions f and omega, not both")
    bad = set(cfg["discretization"]) - {"kind", "size"}
    if bad:
        raise ConfigError(f"unknown discretization keys: {sorted(bad)}")
    if not (0 <= cfg["seed"] < 2 ** 64):
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg["threads"] < 1:
        raise ConfigError("threads must be at least 1")
    if cfg["eps"] < 0 or cfg["T"] < 0:
        raise ConfigError("eps and T must be nonnegative")
    spec = PARAMS[command]
    unknown = set(cfg["params"]) - set(spec)
    if unknown:
        raise ConfigError(f"unknown parameters for {command}: {sorted(unknown)}")
    params = {}
    for key, (types, default) in spec.items():
        if key in cfg["params"] and cfg["params"][key] is not None:
            params[key] = _typed(cfg["params"][key], types, f"params.{key}")
        else:
            params[key] = default
    cfg["params"] = params
    return cfg


def make_system(cfg):
    s = cfg["system"]
    if "f" in s or "omega" in s:
        if not ("f" in s and "omega" in s):
            raise ConfigError("a custom system needs both f and omega")
        return build_system(s["f"], s["omega"], s.get("A", ()), cfg["eps"], s.get("name", "custom"))
    return preset(s.get("preset", "doubling-cos"), cfg["eps"], s.get("A", ()))


def _disc(cfg):
    d = cfg["discretization"]
    return transfer.Discretization(d.get("kind", "fourier"), d.get("size", 128))


def _thetas(p, cfg, key="thetas"):
    if p.get(key) is not None:
        return [float(t) for t in p[key]]
    if "n_theta" in p:
        return list(np.arange(p["n_theta"]) / p["n_theta"])
    return [float(cfg["theta0"])]


# ---------------------------------------------------------------- commands

def cmd_simulate(sys, cfg, p):
    traj = simulate(sys, TrajectoryState(p["x0"], [cfg["theta0"]] + [0.0] * (sys.d - 1)),
                    p["n_steps"], cfg["seed"], montecarlo.DITHER if p["dither"] else 0.0)
    head = ["k", "x", "theta"] + [f"z{i}" for i in range(1, sys.d)]
    rows = [[k, traj.x[k], *traj.z[k]] for k in range(len(traj))]
    return head, rows, {}


def cmd_spectrum(sys, cfg, p):
    disc = _disc(cfg)
    rows = []
    for th in _thetas(p, cfg):
        gap = transfer.zero_eigendata(sys, th, disc).gap
        for s in p["sigmas"]:
            sig = [float(s)] * sys.d if not isinstance(s, list) else [float(v) for v in s]
            rows.append([th, sig[0] if sys.d == 1 else json.dumps(sig),
                         transfer.chi_hat(sys, th, sig, disc), gap])
    return ["theta", "sigma", "chi_hat", "gap"], rows, {}


def cmd_average(sys, cfg, p):
    path = statistics.solve_averaged(sys, cfg["theta0"], cfg["T"], p["dt"], _disc(cfg))
    head = ["t", "theta_bar"] + [f"zeta_bar{i}" for i in range(1, sys.d)]
    rows = [[t, th, *z] for t, th, z in zip(path.t_grid, path.theta_bar, path.zeta_bar)]
    return head, rows, {"error_estimate": path.error_estimate}


def cmd_variance(sys, cfg, p):
    prof = statistics.variance_profile(sys, cfg["theta0"], cfg["T"], p["dt"], _disc(cfg))
    return ["t", "var_t"], [[t, v] for t, v in zip(prof.t_grid, prof.var_t)], {"var_T": prof.var_t[-1]}


def cmd_rate_table(sys, cfg, p):
    if sys.d != 1:
        raise ConfigError("rate-table on the command line supports a single observable")
    if p["b_grid"] is not None:
        b = np.array(p["b_grid"], dtype=float)
    else:
        n = int(round((p["b_max"] - p["b_min"]) / p["b_step"]))
        b = p["b_min"] + p["b_step"] * np.arange(n + 1)
    tab = ldp.rate_table(sys, _thetas(p, cfg), b, _disc(cfg), cfg["threads"])
    rows = [[th, bb, tab.Z_values[i, j], tab.sigma_star[i, j], bool(tab.converged[i, j])]
            for i, th in enumerate(tab.theta_grid) for j, bb in enumerate(tab.b_grid)]
    return ["theta", "b", "Z", "sigma_star", "converged"], rows, {}


def cmd_path_rate(sys, cfg, p):
    gamma = ldp.PathSpec(tuple(p["breakpoints"]), tuple(p["values"]))
    disc = _disc(cfg)
    rows = [[m, ldp.path_rate(sys, gamma, cfg["theta0"], p["quad_dt"], m, disc)] for m in p["modes"]]
    if p["quadratic"]:
        rows.append(["quadratic", ldp.rate_quadratic(sys, gamma, cfg["theta0"], p["quad_dt"], disc)])
    return ["functional", "value"], rows, {}


def cmd_domain(sys, cfg, p):
    p_max = p["p_max"]
    if p_max is None:
        # period 8, or less when the degree would give too many periodic points
        p_max = max(1, min(8, int(math.log(4096) / math.log(sys.degree) + 1e-9)))
    dom = ldp.domain_estimate(sys, cfg["theta0"], p_max)
    head = ["period", "x_min"] + [f"average{i}" for i in range(sys.d)]
    rows = [[o.period, float(np.min(o.points)), *o.average] for o in dom.orbits]
    summary = {"skipped": dom.skipped, "vertices": dom.vertices.tolist()}
    return head, rows, summary


def cmd_pairs(sys, cfg, p):
    scale = p["potential_scale"]
    scale = complex(*scale) if isinstance(scale, list) else complex(scale)
    phi = standardpairs.PairPotential(p["potential"], scale) if p["potential"] else standardpairs.ZERO_POTENTIAL
    bounds = standardpairs.default_bounds(sys, [phi], p["C"], p["delta"], p["D0"], p["D1"])
    fam = standardpairs.StandardFamily.single(p["a"], bounds.delta, cfg["theta0"], bounds, sys.eps)
    rows = []
    for k in range(p["n_steps"] + 1):
        if k:
            fam = standardpairs.pushforward_decompose(fam, phi, sys)
        total = complex(np.sum(fam.nu))
        rows.append([k, len(fam), total.real, total.imag, float(np.sum(np.abs(fam.nu)))])
    return ["step", "pairs", "sum_nu_re", "sum_nu_im", "sum_abs_nu"], rows, {"delta": bounds.delta}


def cmd_mgf(sys, cfg, p):
    rows = []
    for s in p["sigmas"]:
        r = montecarlo.mgf_probe(sys, cfg["theta0"], s, cfg["T"], p["n_paths"], cfg["seed"], cfg["threads"])
        rows.append([s, r.empirical, r.predicted, r.ess, r.low_ess])
    return ["sigma", "empirical", "predicted", "ess", "low_ess"], rows, {}


def cmd_llt(sys, cfg, p):
    r = montecarlo.llt_check(sys, cfg["theta0"], p["t"], p["shift"], p["bins"], p["n_paths"],
                             cfg["seed"], cfg["threads"])
    rows = [[a, b, d, q] for a, b, d, q in zip(r.edges[:-1], r.edges[1:], r.density, r.predicted)]
    summary = {"ks": r.ks, "variance_ratio": r.variance_ratio, "variance_target": r.variance_target,
               "mean": r.mean, "stderr": r.stderr, "window_count": r.window_count,
               "window_expected": r.window_expected, "insufficient": r.insufficient}
    return ["bin_left", "bin_right", "density", "predicted"], rows, summary


def cmd_ldp_probe(sys, cfg, p):
    out = montecarlo.moderate_probe(sys, cfg["theta0"], p["C"], p["beta"], p["eps_list"], cfg["T"],
                                    p["n_paths"], cfg["seed"], cfg["threads"])
    rows = [[r.eps, r.hits, r.n_paths, r.p_hat, r.ci[0], r.ci[1], r.scaled, r.upper_only, r.target]
            for r in out]
    return ["eps", "hits", "n_paths", "p_hat", "ci_low", "ci_high", "scaled", "upper_only", "target"], rows, {}


def cmd_dolgopyat_scan(sys, cfg, p):
    rows = []
    for v in p["varsigmas"]:
        rho = transfer.spectral_radius_complex(sys, cfg["theta0"], v, p["n"], _disc(cfg),
                                               p["n_seeds"], cfg["seed"] & 0xFFFFFFFF)
        rows.append([v, rho])
    return ["varsigma", "spectral_radius"], rows, {}


def cmd_uni(sys, cfg, p):
    rows = [[th, transfer.uni_estimate(sys, th, p["n"], p["grid"])] for th in _thetas(p, cfg)]
    return ["theta", "uni"], rows, {}


HANDLERS = {name: globals()["cmd_" + name.replace("-", "_")] for name in COMMANDS}


# ------------------------------------------------------------------ output

def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _versions():
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"fastslow": own, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    return v


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    # a run manifest carries the effective configuration under "config"
    if isinstance(raw, dict) and "manifest_version" in raw:
        raw = raw.get("config", {})
    return raw


def run(command, raw_config, out_dir=None, seed=None, threads=None):
    """Execute one command; returns (csv path, manifest path)."""
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}")
    raw = dict(raw_config)
    if seed is not None:
        raw["seed"] = seed
    if threads is not None:
        raw["threads"] = threads
    cfg = validate_config(raw, command)
    out = Path(out_dir or cfg["out"] or ".")
    out.mkdir(parents=True, exist_ok=True)
    sys = make_system(cfg)
    start = time.perf_counter()
    header, rows, summary = HANDLERS[command](sys, cfg, cfg["params"])
    wall = time.perf_counter() - start
    csv_path = out / f"{command}.csv"
    write_csv(csv_path, header, rows)
    manifest = {"manifest_version": 1, "command": command, "config": _jsonable(cfg),
                "seed": cfg["seed"], "versions": _versions(), "wall_time_s": wall,
                "csv": csv_path.name, "summary": _jsonable(summary)}
    man_path = out / f"{command}.manifest.json"
    man_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, man_path


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from exc
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("threads must be at least 1")
    return v


def build_parser():
    ap = argparse.ArgumentParser(prog="fastslow", description="Fast-slow expanding map toolkit.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON run configuration or a previous run manifest")
    ap.add_argument("--out", help="output directory (default: config 'out' or the working directory)")
    ap.add_argument("--seed", type=_u64)
    ap.add_argument("--threads", type=_positive)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config) if args.config else {}
        csv_path, _ = run(args.command, raw, args.out, args.seed, args.threads)
    except FastSlowError as exc:
        print(f"fastslow {args.command}: {exc}", file=_sys.stderr)
        return exc.exit_code
    except MemoryError:
        print(f"fastslow {args.command}: out of memory", file=_sys.stderr)
        return 4
    print(csv_path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
