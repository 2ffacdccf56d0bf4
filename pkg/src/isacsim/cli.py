"""Command-line front end: ``isacsim {sense,allocate,montecarlo}``.

Exit codes: 0 success, 1 configuration error, 2 estimation failure,
3 infeasible QoS.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from isacsim.allocator import AllocationResult, InfeasibleError, SinrProfile, raca_baselines, sweep_eta
from isacsim.errors import ConfigError
from isacsim.estimator import DivergenceError, EstimatorConfig, InitGrid, SingularSystemError, run_sensing
from isacsim.harness import (
    ScenarioConfig,
    TrialResult,
    aggregate,
    config_echo,
    export_results,
    jsonable,
    make_scenario,
    run_trials,
    sinr_profile,
    trial_rng,
    with_overrides,
    write_allocation,
    write_sweep,
)
from isacsim.geometry import canonical_position
from isacsim.waveform import default_waveform, synthesize_echo

log = logging.getLogger("isacsim")

EXIT_OK, EXIT_CONFIG, EXIT_ESTIMATION, EXIT_INFEASIBLE = 0, 1, 2, 3

# config sections and the keys each one owns
SECTIONS = {
    "geometry": ("n_total", "n_coherent", "n_symbols", "carrier_freq", "bandwidth", "n_tx", "n_rx",
                 "ref_distance", "loss_exponent"),
    "waveform": ("noise_rad", "echo_gain"),
    "estimator": ("max_iterations", "step_tolerance", "max_halvings", "idr_ridge", "projected",
                  "init_points", "init_starts"),
    "allocator": ("noise_com", "beam_gain_rad", "beam_gain_com", "p_max", "c_min", "i_min",
                  "eta_min", "eta_max", "eta_step"),
    "harness": ("n_buildings", "radius", "v_min", "v_max", "shadowing_var_db", "seed", "trials",
                "ue_x", "ue_y", "ue_angle_deg", "ue_velocity"),
}

_SCENARIO_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


def _parse_value(key: str, raw: str, kind: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"invalid value for '{key}': {raw!r}") from None


def _kind(key: str) -> str:
    if key in ("max_iterations", "max_halvings", "init_points", "init_starts", "trials"):
        return "int"
    if key == "projected":
        return "bool"
    return "int" if _SCENARIO_TYPES.get(key) == "int" else "float"


def read_config(path: str | None) -> dict:
    """Flat ``key -> value`` mapping from an INI file; unknown sections/keys are errors."""
    if path is None:
        return {}
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    out = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section '[{section}]'")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown config key '{key}' in section '[{section}]'")
            out[key] = _parse_value(key, raw, _kind(key))
    return out


def _pair(text: str, name: str) -> tuple[float, float]:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"{name} expects X,Y, got {text!r}") from None
    return x, y


def _eta_range(text: str) -> tuple[float, float, float]:
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise ConfigError(f"--eta-range expects MIN:MAX:STEP, got {text!r}") from None
    return lo, hi, step


def build_configs(args) -> tuple[ScenarioConfig, EstimatorConfig, int]:
    values = read_config(args.config)
    trials = values.pop("trials", 100)
    est_keys = {k: values.pop(k) for k in list(values) if k in SECTIONS["estimator"]}
    if args.seed is not None:
        values["seed"] = args.seed
    if args.ue is not None:
        values["ue_x"], values["ue_y"] = _pair(args.ue, "--ue")
    if args.velocity is not None:
        values["ue_velocity"] = args.velocity
    if getattr(args, "eta_range", None) is not None:
        values["eta_min"], values["eta_max"], values["eta_step"] = _eta_range(args.eta_range)
    if getattr(args, "trials", None) is not None:
        trials = args.trials
    if trials < 1:
        raise ConfigError("trials must be >= 1")

    cfg = with_overrides(ScenarioConfig(), **values)
    init = InitGrid(radius=cfg.radius, min_distance=cfg.ref_distance,
                    points=est_keys.pop("init_points", InitGrid.points),
                    starts=est_keys.pop("init_starts", InitGrid.starts))
    est = EstimatorConfig(init=init, **est_keys)
    return cfg, est, trials


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


def cmd_sense(args) -> int:
    cfg, est, _ = build_configs(args)
    out = _out_dir(args.out)
    grid, array = cfg.grid(), cfg.array()
    waveform = default_waveform(grid, array)
    scenario = make_scenario(cfg, 0)
    y = synthesize_echo(scenario.ue, scenario.pathset, grid, array, waveform, cfg.noise_rad,
                        trial_rng(cfg.seed, 0, 1), cfg.echo_gain)
    log.info("sensing: UE at (%.3f, %.3f) m, v=%.3f m/s", scenario.ue.x, scenario.ue.y, scenario.ue.velocity)
    try:
        trace = run_sensing(y, est, grid, array, waveform)
    except (DivergenceError, SingularSystemError) as exc:
        print(f"error: estimation stage failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION

    truth = canonical_position(scenario.ue.position, array.bs, array.axis)
    res = TrialResult(0, scenario.ue, trace.state, trace.aoa,
                      float(np.linalg.norm(trace.state.position - truth)),
                      abs(trace.aoa - scenario.pathset.departure_angle),
                      trace.iterations, float(trace.residuals[-1]), True)
    export_results(aggregate([res]), [res], out, cfg, est)
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "x", "y", "v", "residual", "step"])
        for i, r in enumerate(trace.records):
            w.writerow([i, repr(r.state.x), repr(r.state.y), repr(r.state.velocity), repr(r.residual), repr(r.step)])
    print(f"estimate x={trace.state.x:.6f} y={trace.state.y:.6f} v={trace.state.velocity:.6f} "
          f"aoa_deg={math.degrees(trace.aoa):.6f} pos_err_m={res.pos_err:.6g} iterations={trace.iterations}")
    return EXIT_OK


def read_profile(path: str) -> SinrProfile:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read profile {path}: {exc}") from exc
    try:
        com = [float(r["sinr_com"]) for r in rows]
        rad = [float(r["sinr_rad"]) for r in rows]
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"profile {path} needs numeric sinr_com and sinr_rad columns") from exc
    if not rows:
        raise ConfigError(f"profile {path} is empty")
    return SinrProfile(np.array(com), np.array(rad))


def cmd_allocate(args) -> int:
    cfg, est, _ = build_configs(args)
    out = _out_dir(args.out)
    qos = cfg.qos()
    if args.profile:
        profile = read_profile(args.profile)
    else:
        if not cfg.noise_rad > 0:
            raise ConfigError("noise_rad must be positive to compute SINRs")
        scenario = make_scenario(cfg, 0)
        profile = sinr_profile(scenario.pathset, scenario.beta, cfg)
    try:
        sweep = sweep_eta(profile, qos)
    except InfeasibleError as exc:
        write_sweep(out / "sweep.csv", exc.curve)
        print(f"error: allocation infeasible: {exc.service} needs {exc.floor:g}, "
              f"max achievable {exc.max_achievable:.6g}", file=sys.stderr)
        return EXIT_INFEASIBLE
    write_sweep(out / "sweep.csv", sweep)
    write_allocation(out / "allocation.csv", sweep.best)
    base = raca_baselines(profile, sweep.best_eta, qos, trial_rng(cfg.seed, 0, 2))
    totals = {"jspa": sweep.best.total_w}
    totals.update({k: (v.total_w if isinstance(v, AllocationResult) else math.inf) for k, v in base.items()})
    summary = {"seed": cfg.seed, "config": config_echo(cfg), "best_eta": sweep.best_eta,
               "total_power_w": totals, "achieved_rate": sweep.best.power.achieved_rate,
               "achieved_mi": sweep.best.power.achieved_mi, "profile": args.profile or "sampled"}
    with open(out / "summary.json", "w") as fh:
        json.dump(jsonable(summary), fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"best_eta={sweep.best_eta:g} total_power_w={sweep.best.total_w:.6g}")
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    cfg, est, trials = build_configs(args)
    if not cfg.noise_rad > 0:
        raise ConfigError("noise_rad must be positive for Monte Carlo runs")
    out = _out_dir(args.out)
    log.info("running %d trials on %d worker(s)", trials, args.jobs)
    results = run_trials(cfg, trials, est, jobs=args.jobs)
    metrics = aggregate(results)
    summary = export_results(metrics, results, out, cfg, est)
    agg = summary.get("aggregate", {})
    print(f"trials={trials} median_pos_err_m={agg.get('pos_err_median_m')} best_eta={summary.get('best_eta')}")
    for line in summary["failures"]:
        log.info("%s", line)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isacsim", description="OFDM radar sensing and subcarrier power allocation simulator.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="progress on stderr (-vv for debug)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI file overriding defaults")
        sp.add_argument("--out", default="out", help="output directory (default: ./out)")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--ue", help="fixed UE position X,Y in meters")
        sp.add_argument("--velocity", type=float, help="fixed UE velocity in m/s")
        sp.add_argument("--eta-range", help="eta grid MIN:MAX:STEP")

    s = sub.add_parser("sense", help="single sensing run")
    common(s)
    s.set_defaults(func=cmd_sense)

    a = sub.add_parser("allocate", help="eta sweep and baselines on one SINR profile")
    common(a)
    a.add_argument("--profile", help="CSV with sinr_com,sinr_rad columns (default: sampled scenario)")
    a.set_defaults(func=cmd_allocate)

    m = sub.add_parser("montecarlo", help="full pipeline over many trials")
    common(m)
    m.add_argument("--trials", type=int, help="number of trials (default 100)")
    m.add_argument("--jobs", type=int, default=1, help="worker processes")
    m.set_defaults(func=cmd_montecarlo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
