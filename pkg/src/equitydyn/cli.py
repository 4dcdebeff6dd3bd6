"""Command-line front end.

    equitydyn <command> [--config FILE.toml] [flags] [--out DIR]

Commands: simulate, phase, ensemble, tails, force, control.  Settings
resolve as built-in defaults < config file < command-line flags; the config
file may hold top-level keys and/or a table named after the command.  Every
command writes ``manifest.json`` with the resolved settings into its output
directory.  ``EQUITYDYN_OUT`` sets the default output directory.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

DEFAULTS = {
    "simulate": {"x1": 1.0, "x2": 1.0, "x4": 1.0, "beta1": 1.0, "beta2": 1.0, "horizon": 5.0,
                 "dt": 0.01, "k": 0.0},
    "phase": {"c1": "0.5,-0.5,0,1,2,5", "v0": 1.0, "v_min": -6.0, "v_max": 4.0, "points": 2001},
    "ensemble": {"c1": -0.5, "runs": 1000, "seed": 0, "horizon": 50.0, "dt": 0.01,
                 "beta1": 1.0, "beta2": 1.0, "p_detour": 0.5, "p_explode": 0.0,
                 "time_scale": "curve", "min_samples": 50, "bins": 20, "threads": 1},
    "tails": {"from": None, "side": "left", "fit_fraction": 0.1, "method": "ols"},
    "force": {"c1": -0.5, "u0": 1.0, "v0": 1.0, "u_end": 3.0, "k": 0.01, "beta1": 1.0,
              "beta2": 1.0, "points": 2001},
    "control": {"beta1": 1.0, "beta2": 1.0, "U": 1.0, "L": -1.0, "c_vol": 1.0, "c_trend": 1.0,
                "k_min": -0.1, "k_max": 0.1, "budget": 41, "seed": 0, "horizon": 5.0,
                "dt": 0.01, "threads": 1},
}

# flag name -> config key
_FLAGS = {
    "--c1": "c1", "--v0": "v0", "--beta1": "beta1", "--beta2": "beta2", "--runs": "runs",
    "--seed": "seed", "--horizon": "horizon", "--dt": "dt", "--k": "k", "--U": "U", "--L": "L",
    "--c-vol": "c_vol", "--c-trend": "c_trend", "--threads": "threads",
    "--x1": "x1", "--x2": "x2", "--x4": "x4", "--u0": "u0", "--u-end": "u_end",
    "--p-detour": "p_detour", "--p-explode": "p_explode", "--time-scale": "time_scale",
    "--min-samples": "min_samples", "--bins": "bins", "--from": "from", "--side": "side",
    "--fit-fraction": "fit_fraction", "--method": "method", "--k-min": "k_min",
    "--k-max": "k_max", "--budget": "budget", "--points": "points", "--v-min": "v_min",
    "--v-max": "v_max",
}


class ConfigError(ValueError):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="equitydyn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for cmd, defaults in DEFAULTS.items():
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", default=None, help="TOML configuration file")
        sp.add_argument("--out", default=None, help="output directory")
        for flag, key in _FLAGS.items():
            if key in defaults:
                sp.add_argument(flag, dest=key, default=None)
    return p


def _coerce(key, value, default):
    if value is None:
        return None
    if key == "c1" and isinstance(value, str):
        return value
    if isinstance(default, bool):
        return str(value).lower() in ("1", "true", "yes")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def resolve(command: str, config_path, overrides: dict) -> dict:
    cfg = dict(DEFAULTS[command])
    if config_path is not None:
        try:
            with open(config_path, "rb") as fh:
                doc = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        flat = {k: v for k, v in doc.items() if not isinstance(v, dict)}
        flat.update(doc.get(command, {}))
        for k, v in flat.items():
            k = k.replace("-", "_")
            if k in ("out", "command"):
                continue
            if k not in cfg:
                raise ConfigError(f"unknown setting {k!r} for {command}")
            cfg[k] = v
    for k, v in overrides.items():
        if v is not None:
            cfg[k] = v
    try:
        for k in cfg:
            cfg[k] = _coerce(k, cfg[k], DEFAULTS[command][k])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value: {exc}") from exc
    return cfg


def _c1_list(value) -> list:
    if isinstance(value, (int, float)):
        return [float(value)]
    if isinstance(value, (list, tuple)):
        return [float(x) for x in value]
    return [float(x) for x in str(value).split(",") if x.strip()]


def _tag(c1: float) -> str:
    return ("%g" % c1).replace("-", "m").replace(".", "p")


# ---------------------------------------------------------------------------


def cmd_simulate(cfg, out: Path) -> list:
    from .core import ModelParams, integrate, matched_initial_state
    from .forcing import ControlInput

    params = ModelParams(beta1=cfg["beta1"], beta2=cfg["beta2"])
    st = matched_initial_state(cfg["x1"], cfg["x2"], cfg["x4"], params)
    n = int(math.floor(cfg["horizon"] / cfg["dt"] + 1e-9))
    times = np.arange(n + 1) * cfg["dt"]
    z = ControlInput.inverse_u(cfg["k"]) if cfg["k"] else None
    tr = integrate(st, z, params, float(times[-1]), t_eval=times)
    tr.to_csv(out / "trajectory.csv")
    (out / "trajectory.json").write_text(tr.to_json() + "\n", encoding="utf-8")
    return ["trajectory.csv", "trajectory.json"]


def cmd_phase(cfg, out: Path) -> list:
    from .phase import phase_curve, trace_cycle, never_detour, always_detour, write_curve_csv, \
        write_features_json

    files = []
    vs = np.linspace(cfg["v_min"], cfg["v_max"], cfg["points"])
    for c1 in _c1_list(cfg["c1"]):
        curve = phase_curve(c1, cfg["v0"])
        tag = _tag(c1)
        write_curve_csv(out / f"curve_C1_{tag}.csv", curve, vs)
        write_features_json(out / f"features_C1_{tag}.json", curve)
        files += [f"curve_C1_{tag}.csv", f"features_C1_{tag}.json"]
        if c1 < 0:
            for name, pol in (("direct", never_detour), ("detour", always_detour)):
                tr = trace_cycle(curve, pol)
                fn = f"cycle_C1_{tag}_{name}_{tr.word}.csv"
                tr.to_csv(out / fn)
                files.append(fn)
    return files


def cmd_ensemble(cfg, out: Path) -> list:
    from .core import ModelParams
    from .montecarlo import EnsembleConfig, run_ensemble

    ec = EnsembleConfig(
        n_runs=cfg["runs"], C1=float(_c1_list(cfg["c1"])[0]),
        params=ModelParams(beta1=cfg["beta1"], beta2=cfg["beta2"]),
        horizon=cfg["horizon"], sample_dt=cfg["dt"], seed=cfg["seed"],
        p_detour=cfg["p_detour"], p_explode=cfg["p_explode"], time_scale=cfg["time_scale"],
        min_samples=cfg["min_samples"], keep_series=True, threads=cfg["threads"])
    res = run_ensemble(ec)
    res.write(out, bins=cfg["bins"])
    s = res.summary()
    print(f"runs {s['n_runs']} completed {s['completed']} max|rho| {s['abs_rho_max']:.4f} "
          f"p99 {s['abs_rho_p99']:.4f} (reference bound {s['reference_bound']})")
    return ["histogram.csv", "correlations.csv", "runs.csv", "summary.json", "series/"]


def cmd_tails(cfg, out: Path) -> list:
    from .tailfit import fit_ensemble_tails, load_series, write_tail_outputs

    if not cfg["from"]:
        raise ConfigError("tails needs --from <ensemble directory>")
    series = load_series(cfg["from"])
    rows = fit_ensemble_tails(series, cfg["side"], cfg["fit_fraction"], cfg["method"])
    doc = write_tail_outputs(out, rows)
    for var, d in doc.items():
        print(f"{var}: mean {d['mean']:.3f} std {d['std']:.3f} skew {d['skewness']:.3f} "
              f"max|lambda| {d['max_abs_lambda']:.3f}")
    return ["tail_fits.csv", "tail_stats.json"] + [f"normal_plot_{v}.csv" for v in doc]


def cmd_force(cfg, out: Path) -> list:
    from .core import ModelParams
    from .forcing import ControlInput, integrate_forced_phase, verify_master4
    from .io import write_json

    params = ModelParams(beta1=cfg["beta1"], beta2=cfg["beta2"])
    c1 = float(_c1_list(cfg["c1"])[0])
    u0, v0 = cfg["u0"], cfg["v0"]
    if u0 == 0 or v0 == 0:
        raise ValueError("u0 and v0 must be nonzero")
    w0 = (c1 + v0 * (v0 + 2.0)) / (2.0 * u0 * v0)
    path = integrate_forced_phase(u0, v0, w0, cfg["k"], params, cfg["u_end"], n_samples=cfg["points"])
    rep = verify_master4(path, ControlInput.inverse_u(cfg["k"]), params)
    path.to_csv(out / "phase_path.csv")
    rep.to_csv(out / "residual.csv")
    write_json(out / "force_summary.json", {"status": path.status, "max_abs_residual": rep.max_abs,
                                            "w0": w0, "C1": c1})
    return ["phase_path.csv", "residual.csv", "force_summary.json"]


def cmd_control(cfg, out: Path) -> list:
    from .control import ControlProblem, default_initial_state, search_strategies
    from .core import ModelParams

    params = ModelParams(beta1=cfg["beta1"], beta2=cfg["beta2"], c1=cfg["c_vol"],
                         c2=cfg["c_trend"], U=cfg["U"], L=cfg["L"])
    prob = ControlProblem(params=params, k_range=(cfg["k_min"], cfg["k_max"]),
                          horizon=cfg["horizon"], sample_dt=cfg["dt"], threads=cfg["threads"])
    res = search_strategies(prob, default_initial_state(params), cfg["budget"], cfg["seed"])
    res.write(out)
    if res.empty:
        print("feasible set is empty")
    else:
        b = res.best
        print(f"best k {b.strategy_param:.6g} objective {b.objective}")
    return ["strategies.csv", "control_summary.json"]


COMMANDS = {"simulate": cmd_simulate, "phase": cmd_phase, "ensemble": cmd_ensemble,
            "tails": cmd_tails, "force": cmd_force, "control": cmd_control}


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    command = args.command
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "out")}
    try:
        cfg = resolve(command, args.config, overrides)
        out = Path(args.out or os.environ.get("EQUITYDYN_OUT", "out"))
        if command == "tails" and args.out is None and cfg["from"]:
            out = Path(cfg["from"])
        out.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[command](cfg, out)
        from .io import write_json
        write_json(out / "manifest.json" if command != "tails" else out / "manifest_tails.json",
                   {"command": command, "version": __version__, "config": cfg, "files": files})
    except ConfigError as exc:
        print(f"equitydyn {command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # module errors propagate as a nonzero exit
        print(f"equitydyn {command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
