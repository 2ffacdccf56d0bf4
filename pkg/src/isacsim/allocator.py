"""Subcarrier partitioning and minimum-power allocation under rate / mutual-information floors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InfeasibleError",
    "SinrProfile",
    "SubcarrierPartition",
    "PowerAllocation",
    "AllocationResult",
    "QosConstraints",
    "WaterfillResult",
    "SweepPoint",
    "SweepResult",
    "comm_rate",
    "sensing_mi",
    "partition_subcarriers",
    "waterfill",
    "uniform_power",
    "allocate_joint",
    "eta_grid",
    "sweep_eta",
    "random_partition",
    "raca_baselines",
]

BISECT_TOL = 1e-9
BISECT_MAX_ITER = 200


class InfeasibleError(ValueError):
    """A QoS floor cannot be met within the per-carrier power cap."""

    def __init__(self, service: str, max_achievable: float, floor: float):
        self.service = service
        self.max_achievable = float(max_achievable)
        self.floor = float(floor)
        # filled by sweep_eta so callers can still report the evaluated points
        self.curve: list = []
        super().__init__(f"{service} floor {floor:g} infeasible: at most {self.max_achievable:.6g} achievable")


@dataclass(frozen=True)
class SinrProfile:
    sinr_com: np.ndarray
    sinr_rad: np.ndarray

    def __post_init__(self):
        com = np.asarray(self.sinr_com, dtype=float).ravel()
        rad = np.asarray(self.sinr_rad, dtype=float).ravel()
        if com.shape != rad.shape:
            raise ValueError(f"profile lengths differ: {com.size} vs {rad.size}")
        if np.any(~np.isfinite(com)) or np.any(~np.isfinite(rad)) or np.any(com < 0) or np.any(rad < 0):
            raise ValueError("SINR entries must be finite and non-negative")
        object.__setattr__(self, "sinr_com", com)
        object.__setattr__(self, "sinr_rad", rad)

    def __len__(self):
        return self.sinr_com.size


@dataclass(frozen=True)
class SubcarrierPartition:
    gamma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=bool).ravel())

    @property
    def comm(self) -> np.ndarray:
        """0-based indices serving communication."""
        return np.flatnonzero(self.gamma)

    @property
    def radar(self) -> np.ndarray:
        return np.flatnonzero(~self.gamma)

    def __len__(self):
        return self.gamma.size


@dataclass(frozen=True)
class PowerAllocation:
    p: np.ndarray
    total_w: float
    achieved_rate: float
    achieved_mi: float


@dataclass(frozen=True)
class AllocationResult:
    method: str
    eta: float
    partition: SubcarrierPartition
    power: PowerAllocation
    level_com: float = float("nan")
    level_rad: float = float("nan")

    @property
    def total_w(self) -> float:
        return self.power.total_w

    @property
    def power_com(self) -> float:
        return float(self.power.p[self.partition.gamma].sum())

    @property
    def power_rad(self) -> float:
        return float(self.power.p[~self.partition.gamma].sum())


@dataclass(frozen=True)
class QosConstraints:
    c_min: float = 200.0
    i_min: float = 600.0
    p_max: float = 50.0
    eta_range: tuple[float, float, float] = (0.1, 3.0, 0.1)

    def __post_init__(self):
        if self.c_min < 0 or self.i_min < 0:
            raise ValueError("QoS floors must be non-negative")
        if not self.p_max > 0:
            raise ValueError("p_max must be positive")
        lo, hi, step = self.eta_range
        if not step > 0:
            raise ValueError("eta step must be positive")
        if not 0 < lo <= hi:
            raise ValueError(f"eta range must satisfy 0 < min <= max, got {self.eta_range}")


def _log_sum(p, sinr) -> float:
    return float(np.sum(np.log2(1.0 + p * sinr)))


def comm_rate(partition: SubcarrierPartition, p, profile: SinrProfile) -> float:
    p = np.asarray(p, dtype=float)
    g = partition.gamma
    return _log_sum(p[g], profile.sinr_com[g])


def sensing_mi(partition: SubcarrierPartition, p, profile: SinrProfile) -> float:
    p = np.asarray(p, dtype=float)
    g = ~partition.gamma
    return _log_sum(p[g], profile.sinr_rad[g])


def partition_subcarriers(profile: SinrProfile, eta: float) -> SubcarrierPartition:
    """Communication gets carrier ``n`` iff ``sinr_com[n] >= eta * sinr_rad[n]``."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    return SubcarrierPartition(profile.sinr_com >= eta * profile.sinr_rad)


# ---------------------------------------------------------------------------
# power


@dataclass(frozen=True)
class WaterfillResult:
    powers: np.ndarray
    level: float
    achieved: float


def _fill(level: float, inv: np.ndarray, p_max: float) -> np.ndarray:
    return np.clip(level - inv, 0.0, p_max)


def waterfill(sinrs, floor: float, p_max: float, service: str = "service") -> WaterfillResult:
    """Least total power with ``sum log2(1 + P_c s_c) >= floor`` and ``0 <= P_c <= p_max``.

    ``P_c = clip(level - 1/s_c, 0, p_max)`` where the water level is the smallest
    one meeting the floor, found by bisection.  Carriers with zero SINR get no
    power.
    """
    s = np.asarray(sinrs, dtype=float).ravel()
    if np.any(s < 0) or np.any(~np.isfinite(s)):
        raise ValueError("SINRs must be finite and non-negative")
    if floor < 0:
        raise ValueError("floor must be non-negative")
    p_max = float(p_max)
    if not p_max > 0:
        raise ValueError("p_max must be positive")

    powers = np.zeros_like(s)
    live = s > 0
    if floor == 0:
        level = float(np.min(1.0 / s[live])) if live.any() else 0.0
        return WaterfillResult(powers, level, 0.0)

    sl = s[live]
    best = _log_sum(np.full(sl.size, p_max), sl)
    if best < floor:
        raise InfeasibleError(service, best, floor)

    inv = 1.0 / sl
    lo, hi = float(inv.min()), float(inv.max()) + p_max
    for _ in range(BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        got = _log_sum(_fill(mid, inv, p_max), sl)
        if got >= floor:
            hi = mid
            if got - floor <= BISECT_TOL:
                break
        else:
            lo = mid
    p = _fill(hi, inv, p_max)
    powers[live] = p
    return WaterfillResult(powers, hi, _log_sum(p, sl))


def uniform_power(sinrs, floor: float, p_max: float, service: str = "service") -> np.ndarray:
    """Smallest common per-carrier power meeting the floor, found by bisection."""
    s = np.asarray(sinrs, dtype=float).ravel()
    if floor <= 0 or s.size == 0:
        if floor > 0:
            raise InfeasibleError(service, 0.0, floor)
        return np.zeros_like(s)
    best = _log_sum(np.full(s.size, p_max), s)
    if best < floor:
        raise InfeasibleError(service, best, floor)
    lo, hi = 0.0, float(p_max)
    for _ in range(BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        got = _log_sum(np.full(s.size, mid), s)
        if got >= floor:
            hi = mid
            if got - floor <= BISECT_TOL:
                break
        else:
            lo = mid
    return np.full(s.size, hi)


def _assemble(method, eta, partition, profile, p, level_com=np.nan, level_rad=np.nan) -> AllocationResult:
    power = PowerAllocation(p, float(p.sum()), comm_rate(partition, p, profile), sensing_mi(partition, p, profile))
    return AllocationResult(method, float(eta), partition, power, float(level_com), float(level_rad))


def _allocate(partition: SubcarrierPartition, profile: SinrProfile, qos: QosConstraints,
              method: str, eta: float, uniform: bool) -> AllocationResult:
    if len(partition) != len(profile):
        raise ValueError("partition and profile lengths differ")
    g = partition.gamma
    p = np.zeros(len(profile))
    if uniform:
        p[g] = uniform_power(profile.sinr_com[g], qos.c_min, qos.p_max, "communication")
        p[~g] = uniform_power(profile.sinr_rad[~g], qos.i_min, qos.p_max, "sensing")
        return _assemble(method, eta, partition, profile, p)
    com = waterfill(profile.sinr_com[g], qos.c_min, qos.p_max, "communication")
    rad = waterfill(profile.sinr_rad[~g], qos.i_min, qos.p_max, "sensing")
    p[g] = com.powers
    p[~g] = rad.powers
    return _assemble(method, eta, partition, profile, p, com.level, rad.level)


def allocate_joint(profile: SinrProfile, eta: float, qos: QosConstraints) -> AllocationResult:
    """SINR-ratio partition at ``eta`` followed by a water-fill per service."""
    return _allocate(partition_subcarriers(profile, eta), profile, qos, "jspa", eta, uniform=False)


# ---------------------------------------------------------------------------
# sweep and baselines


def eta_grid(eta_range: tuple[float, float, float]) -> np.ndarray:
    lo, hi, step = eta_range
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(n), 12)


@dataclass(frozen=True)
class SweepPoint:
    eta: float
    n_com: int
    n_rad: int
    power_com_w: float
    power_rad_w: float
    power_total_w: float
    feasible: bool
    failing_service: str = ""


@dataclass(frozen=True)
class SweepResult:
    best_eta: float
    best: AllocationResult
    curve: list[SweepPoint] = field(default_factory=list)


def sweep_eta(profile: SinrProfile, qos: QosConstraints) -> SweepResult:
    """Evaluate :func:`allocate_joint` on the eta grid and keep the cheapest feasible point.

    Ties go to the smallest eta.  Infeasible points stay on the curve with
    ``feasible=False`` and NaN powers.
    """
    curve, best = [], None
    max_seen = {"communication": 0.0, "sensing": 0.0}
    for eta in eta_grid(qos.eta_range):
        part = partition_subcarriers(profile, eta)
        n_com = int(part.gamma.sum())
        try:
            res = allocate_joint(profile, eta, qos)
        except InfeasibleError as exc:
            max_seen[exc.service] = max(max_seen[exc.service], exc.max_achievable)
            curve.append(SweepPoint(float(eta), n_com, len(part) - n_com, np.nan, np.nan, np.nan, False,
                                    exc.service))
            continue
        curve.append(SweepPoint(float(eta), n_com, len(part) - n_com, res.power_com, res.power_rad,
                                res.total_w, True))
        if best is None or res.total_w < best.total_w:
            best = res
    if best is None:
        # report the service that failed most often
        failing = max(max_seen, key=lambda k: sum(p.failing_service == k for p in curve))
        floor = qos.c_min if failing == "communication" else qos.i_min
        err = InfeasibleError(failing, max_seen[failing], floor)
        err.curve = curve
        raise err
    return SweepResult(best.eta, best, curve)


def random_partition(n_total: int, n_com: int, rng: np.random.Generator) -> SubcarrierPartition:
    """Uniformly random choice of ``n_com`` communication carriers."""
    gamma = np.zeros(n_total, dtype=bool)
    gamma[rng.permutation(n_total)[:n_com]] = True
    return SubcarrierPartition(gamma)


def raca_baselines(profile: SinrProfile, eta: float, qos: QosConstraints,
                   rng: np.random.Generator) -> dict[str, AllocationResult | InfeasibleError]:
    """Reference allocators for comparison.

    ``raca1``: ratio partition at ``eta`` with uniform power.
    ``raca2``: random partition with water-filled power.
    ``raca3``: random partition with uniform power.
    Both random baselines share one draw that keeps the ratio partition's
    carrier count.  Infeasible baselines are returned as the exception object.
    """
    ratio = partition_subcarriers(profile, eta)
    rand = random_partition(len(profile), int(ratio.gamma.sum()), rng)
    jobs = {"raca1": (ratio, True), "raca2": (rand, False), "raca3": (rand, True)}
    out = {}
    for name, (part, uniform) in jobs.items():
        try:
            out[name] = _allocate(part, profile, qos, name, eta, uniform)
        except InfeasibleError as exc:
            out[name] = exc
    return out
