"""Randomized scenarios, end-to-end sense/allocate trials, Monte Carlo aggregation and file export."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path as FsPath

import numpy as np

from isacsim.allocator import (
    AllocationResult,
    InfeasibleError,
    QosConstraints,
    SinrProfile,
    SweepResult,
    raca_baselines,
    sweep_eta,
)
from isacsim.errors import ConfigError
from isacsim.estimator import DivergenceError, EstimatorConfig, InitGrid, SingularSystemError, run_sensing
from isacsim.geometry import (
    SPEED_OF_LIGHT,
    ArrayConfig,
    CommChannelParams,
    Path,
    PathSet,
    SubcarrierGrid,
    UEState,
    aoa_of,
    canonical_position,
    comm_channel,
    direct_path_geometry,
    doppler_shift,
    sinr_com,
    sinr_rad,
)
from isacsim.waveform import default_waveform, synthesize_echo

log = logging.getLogger(__name__)

METHODS = ("jspa", "raca1", "raca2", "raca3")

# stream ids for per-trial seed derivation
_SCENARIO, _NOISE, _BASELINE = 0, 1, 2


@dataclass(frozen=True)
class ScenarioConfig:
    n_total: int = 128
    n_coherent: int = 10
    n_symbols: int = 10
    carrier_freq: float = 60e9
    bandwidth: float = 100e6
    n_tx: int = 8
    n_rx: int = 8
    n_buildings: int = 2
    radius: float = 50.0
    v_min: float = 0.0
    v_max: float = 20.0
    ref_distance: float = 1.0
    loss_exponent: float = 2.9
    shadowing_var_db: float = 5.7
    noise_rad: float = 1e-14
    noise_com: float = 1e-14
    echo_gain: float = 1.0
    beam_gain_rad: float = 1.0
    beam_gain_com: float = 1e6
    p_max: float = 50.0
    c_min: float = 200.0
    i_min: float = 600.0
    eta_min: float = 0.1
    eta_max: float = 3.0
    eta_step: float = 0.1
    seed: int = 0
    # optional overrides; nan means "sample"
    ue_x: float = math.nan
    ue_y: float = math.nan
    ue_angle_deg: float = math.nan
    ue_velocity: float = math.nan

    def __post_init__(self):
        for name in ("n_total", "n_coherent", "n_symbols", "n_tx", "n_rx"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_coherent > self.n_total:
            raise ConfigError("n_coherent must not exceed n_total")
        if self.n_buildings < 0:
            raise ConfigError("n_buildings must be >= 0")
        if not self.noise_rad >= 0:
            raise ConfigError("noise_rad must be >= 0")
        for name in ("carrier_freq", "bandwidth", "ref_distance", "loss_exponent", "noise_com", "echo_gain", "beam_gain_rad", "beam_gain_com", "p_max"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.radius > self.ref_distance:
            raise ConfigError(f"radius {self.radius} must exceed the reference distance {self.ref_distance}")
        if not 0 <= self.v_min <= self.v_max:
            raise ConfigError("velocity range must satisfy 0 <= v_min <= v_max")
        if self.shadowing_var_db < 0:
            raise ConfigError("shadowing_var_db must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if math.isnan(self.ue_x) != math.isnan(self.ue_y):
            raise ConfigError("ue_x and ue_y must be given together")
        self.qos()

    @property
    def sample_period(self) -> float:
        return 1.0 / self.bandwidth

    def grid(self) -> SubcarrierGrid:
        return SubcarrierGrid(self.n_total, self.n_coherent, self.n_symbols, self.sample_period)

    def array(self) -> ArrayConfig:
        return ArrayConfig(self.n_tx, self.n_rx, self.carrier_freq)

    def qos(self) -> QosConstraints:
        try:
            return QosConstraints(self.c_min, self.i_min, self.p_max, (self.eta_min, self.eta_max, self.eta_step))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class Scenario:
    trial: int
    ue: UEState
    buildings: np.ndarray
    omegas: np.ndarray
    pathset: PathSet
    comm: CommChannelParams

    @property
    def beta(self) -> float:
        return self.comm.large_scale_fading


@dataclass
class TrialResult:
    trial: int
    true_state: UEState
    est_state: UEState | None = None
    est_aoa: float = math.nan
    pos_err: float = math.nan
    aoa_err: float = math.nan
    iterations: int = 0
    residual: float = math.nan
    sensing_ok: bool = False
    failure: str = ""
    best_eta: float = math.nan
    totals: dict[str, float] = field(default_factory=lambda: {m: math.nan for m in METHODS})
    sweep: SweepResult | None = None
    allocation: AllocationResult | None = None

    def feasible(self, method: str) -> bool:
        return math.isfinite(self.totals[method])


@dataclass
class AggregateMetrics:
    trials: int
    errors: np.ndarray
    cdf_grid: np.ndarray
    cdf: np.ndarray
    aoa_mean_deg: float
    aoa_std_deg: float
    aoa_err_mean_deg: float
    mean_power: dict[str, float]
    jspa_wins: dict[str, float]
    n_sensing_failed: int
    n_infeasible: int
    n_compared: int


def trial_rng(seed: int, trial: int, stream: int) -> np.random.Generator:
    """Independent generator per (master seed, trial, purpose)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial, stream)))


def _uniform_disc(rng, radius, min_dist, angle=None) -> np.ndarray:
    while True:
        r = radius * math.sqrt(rng.random())
        psi = rng.uniform(-math.pi, math.pi) if angle is None else angle
        if r >= min_dist:
            return np.array([r * math.cos(psi), r * math.sin(psi)])


def sample_scenario(cfg: ScenarioConfig, rng: np.random.Generator, trial: int = 0) -> Scenario:
    """Draw UE, buildings, fading phases and shadowing for one trial."""
    array = cfg.array()
    bs = array.bs
    if not math.isnan(cfg.ue_x):
        q = np.array([cfg.ue_x, cfg.ue_y], dtype=float)
        if np.linalg.norm(q - bs) < cfg.ref_distance:
            raise ConfigError("fixed UE position is closer to the BS than the reference distance")
    else:
        angle = None if math.isnan(cfg.ue_angle_deg) else math.radians(cfg.ue_angle_deg)
        q = bs + _uniform_disc(rng, cfg.radius, cfg.ref_distance, angle)
    v = rng.uniform(cfg.v_min, cfg.v_max) if math.isnan(cfg.ue_velocity) else cfg.ue_velocity
    ue = UEState(float(q[0]), float(q[1]), float(v))

    tau0, phi = direct_path_geometry(bs, q, array.axis)
    d_bu = np.linalg.norm(q - bs)
    omegas = rng.uniform(-math.pi, math.pi, cfg.n_buildings + 1)
    paths = [Path(np.exp(1j * omegas[0]) / (tau0 * SPEED_OF_LIGHT) ** 2, tau0, phi)]
    buildings = []
    for k in range(cfg.n_buildings):
        while True:
            qk = bs + _uniform_disc(rng, cfg.radius, cfg.ref_distance)
            length = d_bu + np.linalg.norm(q - qk) + np.linalg.norm(qk - bs)
            tau = length / SPEED_OF_LIGHT
            if tau - tau0 >= cfg.sample_period:
                break
        buildings.append(qk)
        paths.append(Path(np.exp(1j * omegas[k + 1]) / length**2, tau, aoa_of(bs, qk, array.axis)))

    pathset = PathSet(phi, doppler_shift(v, cfg.carrier_freq), paths)
    shadow = rng.normal(0.0, math.sqrt(cfg.shadowing_var_db))
    comm = comm_channel(d_bu, shadow, cfg.loss_exponent, cfg.ref_distance, cfg.carrier_freq)
    return Scenario(trial, ue, np.array(buildings).reshape(-1, 2), omegas, pathset, comm)


def make_scenario(cfg: ScenarioConfig, trial: int) -> Scenario:
    return sample_scenario(cfg, trial_rng(cfg.seed, trial, _SCENARIO), trial)


def sinr_profile(pathset: PathSet, beta: float, cfg: ScenarioConfig) -> SinrProfile:
    """Per-unit-power SINRs on every subcarrier for the given geometry."""
    grid, array = cfg.grid(), cfg.array()
    ns = range(1, cfg.n_total + 1)
    rad = [sinr_rad(array, grid, pathset, n, cfg.beam_gain_rad, cfg.noise_rad) for n in ns]
    com = [sinr_com(array, grid, beta, pathset, n, cfg.beam_gain_com, cfg.beam_gain_rad, cfg.noise_com)
           for n in ns]
    return SinrProfile(np.array(com), np.array(rad))


def estimated_pathset(scenario: Scenario, est: UEState, cfg: ScenarioConfig) -> tuple[PathSet, float]:
    """Path set and large-scale gain seen by the allocator.

    Delay and angle of the direct path come from the estimate; fading, Doppler,
    indirect paths and the shadowing draw stay at their true values.
    """
    array = cfg.array()
    tau, phi = direct_path_geometry(array.bs, est.position, array.axis)
    true = scenario.pathset
    paths = [Path(true.direct.fading, tau, phi), *true.indirect]
    dist = max(np.linalg.norm(est.position - array.bs), cfg.ref_distance)
    comm = comm_channel(dist, scenario.comm.shadowing_db, cfg.loss_exponent, cfg.ref_distance, cfg.carrier_freq)
    return PathSet(phi, true.doppler, paths), comm.large_scale_fading


def run_trial(scenario: Scenario, est_cfg: EstimatorConfig, qos: QosConstraints,
              cfg: ScenarioConfig) -> TrialResult:
    """Sense the UE, then sweep the allocator and baselines on the estimated geometry.

    Estimation failures and infeasible allocations are recorded, never raised.
    """
    grid, array = cfg.grid(), cfg.array()
    waveform = default_waveform(grid, array)
    res = TrialResult(scenario.trial, scenario.ue)

    y = synthesize_echo(scenario.ue, scenario.pathset, grid, array, waveform, cfg.noise_rad,
                        trial_rng(cfg.seed, scenario.trial, _NOISE), cfg.echo_gain)
    try:
        trace = run_sensing(y, est_cfg, grid, array, waveform)
    except (DivergenceError, SingularSystemError, FloatingPointError) as exc:
        res.failure = f"sensing: {exc}"
        return res

    truth = canonical_position(scenario.ue.position, array.bs, array.axis)
    res.est_state = trace.state
    res.pos_err = float(np.linalg.norm(trace.state.position - truth))
    res.est_aoa = trace.aoa
    res.aoa_err = abs(trace.aoa - scenario.pathset.departure_angle)
    res.iterations = trace.iterations
    res.residual = float(trace.residuals[-1])
    res.sensing_ok = True

    if not cfg.noise_rad > 0:
        res.failure = "allocation: SINRs need a positive sensing noise power"
        return res
    pathset, beta = estimated_pathset(scenario, trace.state, cfg)
    profile = sinr_profile(pathset, beta, cfg)
    try:
        sweep = sweep_eta(profile, qos)
    except InfeasibleError as exc:
        res.failure = f"allocation: {exc}"
        return res
    res.sweep, res.allocation, res.best_eta = sweep, sweep.best, sweep.best_eta
    res.totals["jspa"] = sweep.best.total_w
    base = raca_baselines(profile, sweep.best_eta, qos, trial_rng(cfg.seed, scenario.trial, _BASELINE))
    for name, out in base.items():
        res.totals[name] = out.total_w if isinstance(out, AllocationResult) else math.inf
    return res


def _trial_job(args) -> TrialResult:
    cfg, est_cfg, trial = args
    return run_trial(make_scenario(cfg, trial), est_cfg, cfg.qos(), cfg)


def run_trials(cfg: ScenarioConfig, trials: int, est_cfg: EstimatorConfig | None = None,
               jobs: int = 1) -> list[TrialResult]:
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    est_cfg = est_cfg or EstimatorConfig(init=InitGrid(radius=cfg.radius, min_distance=cfg.ref_distance))
    work = [(cfg, est_cfg, t) for t in range(trials)]
    if jobs <= 1:
        return [_trial_job(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_trial_job, work))


def aggregate(results: list[TrialResult]) -> AggregateMetrics:
    ok = [r for r in results if r.sensing_ok]
    errors = np.array([r.pos_err for r in ok])
    grid, cdf = error_cdf(errors) if errors.size else (np.array([]), np.array([]))
    aoa = np.degrees([r.est_aoa for r in ok]) if ok else np.array([])
    aoa_err = np.degrees([r.aoa_err for r in ok]) if ok else np.array([])

    compared = [r for r in results if all(r.feasible(m) for m in METHODS)]
    mean_power = {m: (float(np.mean([r.totals[m] for r in compared])) if compared else math.nan)
                  for m in METHODS}
    allocated = [r for r in results if r.feasible("jspa")]
    wins = {m: (float(np.mean([r.totals["jspa"] <= r.totals[m] for r in allocated])) if allocated else math.nan)
            for m in METHODS[1:]}
    return AggregateMetrics(
        trials=len(results),
        errors=errors,
        cdf_grid=grid,
        cdf=cdf,
        aoa_mean_deg=float(np.mean(aoa)) if aoa.size else math.nan,
        aoa_std_deg=float(np.std(aoa, ddof=1)) if aoa.size > 1 else 0.0 if aoa.size else math.nan,
        aoa_err_mean_deg=float(np.mean(aoa_err)) if aoa_err.size else math.nan,
        mean_power=mean_power,
        jspa_wins=wins,
        n_sensing_failed=len(results) - len(ok),
        n_infeasible=len(ok) - len(allocated),
        n_compared=len(compared),
    )


def run_montecarlo(cfg: ScenarioConfig, trials: int, est_cfg: EstimatorConfig | None = None,
                   jobs: int = 1) -> tuple[AggregateMetrics, list[TrialResult]]:
    results = run_trials(cfg, trials, est_cfg, jobs)
    return aggregate(results), results


# ---------------------------------------------------------------------------
# CDF and export

DEFAULT_CDF_GRID = np.round(np.arange(0, 201) * 0.01, 10)


def error_cdf(samples, grid=None) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF ``P(err <= x)`` on ``grid`` (default 0..2 m in 1 cm steps).

    The default grid is extended by the largest sample when needed so the last
    value is always 1.
    """
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    if s.size == 0:
        raise ValueError("error_cdf needs at least one sample")
    if np.any(np.isnan(s)):
        raise ValueError("error_cdf samples must not be NaN")
    if grid is None:
        grid = DEFAULT_CDF_GRID
        if s[-1] > grid[-1]:
            grid = np.append(grid, s[-1])
    grid = np.asarray(grid, dtype=float)
    return grid, np.searchsorted(s, grid, side="right") / s.size


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


TRIAL_COLUMNS = [
    "trial", "seed", "true_x", "true_y", "true_v", "est_x", "est_y", "est_v", "pos_err_m", "aoa_err_deg",
    "iterations", "residual", "best_eta",
    *(f"total_power_{m}" for m in METHODS),
    "sensing_ok", *(f"feasible_{m}" for m in METHODS),
]


def trial_rows(results: list[TrialResult], seed: int) -> list[list[str]]:
    rows = []
    for r in results:
        est = r.est_state
        row = [r.trial, seed, r.true_state.x, r.true_state.y, r.true_state.velocity,
               est.x if est else math.nan, est.y if est else math.nan, est.velocity if est else math.nan,
               r.pos_err, math.degrees(r.aoa_err), r.iterations, r.residual, r.best_eta,
               *(r.totals[m] for m in METHODS), r.sensing_ok, *(r.feasible(m) for m in METHODS)]
        rows.append([_fmt(v) for v in row])
    return rows


def _write_csv(path: FsPath, header, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_sweep(path, sweep: SweepResult | list | None) -> None:
    """One row per eta grid point; infeasible points carry NaN powers."""
    header = ["eta", "n_com", "n_rad", "power_com_w", "power_rad_w", "power_total_w"]
    curve = sweep.curve if isinstance(sweep, SweepResult) else (sweep or [])
    rows = [[_fmt(p.eta), p.n_com, p.n_rad, _fmt(p.power_com_w), _fmt(p.power_rad_w), _fmt(p.power_total_w)]
            for p in curve]
    _write_csv(FsPath(path), header, rows)


def write_allocation(path, alloc: AllocationResult | None) -> None:
    rows = []
    if alloc is not None:
        for i, (g, p) in enumerate(zip(alloc.partition.gamma, alloc.power.p), start=1):
            rows.append([i, "communication" if g else "sensing", _fmt(p)])
    _write_csv(FsPath(path), ["subcarrier_index", "assigned_service", "power_w"], rows)


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def config_echo(cfg: ScenarioConfig, est_cfg: EstimatorConfig | None = None) -> dict:
    out = {"scenario": {f.name: getattr(cfg, f.name) for f in fields(cfg)}}
    if est_cfg is not None:
        est = {k: v for k, v in asdict(est_cfg).items() if k != "init"}
        init = est_cfg.init
        est["init"] = asdict(init) if isinstance(init, InitGrid) else {"state": asdict(init)}
        out["estimator"] = est
    return out


def export_results(metrics: AggregateMetrics | None, results: list[TrialResult], path,
                   cfg: ScenarioConfig, est_cfg: EstimatorConfig | None = None) -> dict:
    """Write trials/cdf/sweep/allocation CSVs and summary.json into directory ``path``.

    Sweep and allocation files describe the first trial with a feasible allocation.
    Returns the summary dictionary.
    """
    out = FsPath(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc

    _write_csv(out / "trials.csv", TRIAL_COLUMNS, trial_rows(results, cfg.seed))

    label = f"cdf_nt{cfg.n_tx}_nr{cfg.n_rx}"
    cdf_rows = []
    if metrics is not None and metrics.errors.size:
        cdf_rows = [[_fmt(x), _fmt(c)] for x, c in zip(metrics.cdf_grid, metrics.cdf)]
    _write_csv(out / "cdf.csv", ["error_m", label], cdf_rows)

    shown = next((r for r in results if r.sweep is not None), None)
    write_sweep(out / "sweep.csv", shown.sweep if shown else None)
    write_allocation(out / "allocation.csv", shown.allocation if shown else None)

    summary = {"seed": cfg.seed, "config": config_echo(cfg, est_cfg), "echo_gain": cfg.echo_gain,
               "sweep_trial": shown.trial if shown else None,
               "best_eta": shown.best_eta if shown else None}
    if metrics is not None:
        summary["aggregate"] = {
            "trials": metrics.trials,
            "sensing_failed": metrics.n_sensing_failed,
            "allocation_infeasible": metrics.n_infeasible,
            "compared_trials": metrics.n_compared,
            "pos_err_median_m": float(np.median(metrics.errors)) if metrics.errors.size else None,
            "pos_err_mean_m": float(np.mean(metrics.errors)) if metrics.errors.size else None,
            "frac_err_le_0p2m": float(np.mean(metrics.errors <= 0.2)) if metrics.errors.size else None,
            "aoa_mean_deg": metrics.aoa_mean_deg,
            "aoa_std_deg": metrics.aoa_std_deg,
            "aoa_err_mean_deg": metrics.aoa_err_mean_deg,
            "mean_total_power_w": metrics.mean_power,
            "jspa_not_worse_fraction": metrics.jspa_wins,
        }
    failures = [f"trial {r.trial}: {r.failure}" for r in results if r.failure]
    summary["failures"] = failures
    summary = jsonable(summary)
    try:
        with open(out / "summary.json", "w") as fh:
            json.dump(summary, fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {out / 'summary.json'}: {exc}") from exc
    return summary


def with_overrides(cfg: ScenarioConfig, **kw) -> ScenarioConfig:
    try:
        return replace(cfg, **kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
