"""Deterministic physics: geometry, ULA steering, radar/communication channels, SINRs.

Conventions
-----------
* Angles are radians, measured from the array axis (``e_x`` by default) and
  returned by ``arccos`` in ``[0, pi]``.
* Subcarrier indices ``n`` are 1-based, ``f_n = n / (N * T_s)``.
* Steering phases use ``2*pi*(t-1)*(f'_n/c)*d_A*cos(angle)`` with
  ``f'_n = f_n + f_c``; with half-wavelength spacing this is a pi-per-element
  increment at ``f_n = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 3e8


class GeometryError(ValueError):
    """Degenerate geometry (coincident points, distance below reference, ...)."""


@dataclass(frozen=True)
class ArrayConfig:
    """Co-located transmit/receive ULAs of the base station."""

    n_tx: int = 8
    n_rx: int = 8
    carrier_freq: float = 60e9
    element_spacing: float | None = None  # None -> half wavelength
    bs_position: tuple[float, float] = (0.0, 0.0)
    array_axis: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        if self.n_tx < 1 or self.n_rx < 1:
            raise ValueError(f"antenna counts must be >= 1, got n_tx={self.n_tx}, n_rx={self.n_rx}")
        if not self.carrier_freq > 0:
            raise ValueError(f"carrier_freq must be positive, got {self.carrier_freq}")
        if self.element_spacing is None:
            object.__setattr__(self, "element_spacing", SPEED_OF_LIGHT / (2.0 * self.carrier_freq))
        axis = np.asarray(self.array_axis, dtype=float)
        norm = np.linalg.norm(axis)
        if norm == 0:
            raise ValueError("array_axis must be nonzero")
        object.__setattr__(self, "array_axis", tuple(float(a) for a in axis / norm))
        object.__setattr__(self, "bs_position", tuple(float(a) for a in self.bs_position))

    @property
    def bs(self) -> np.ndarray:
        return np.asarray(self.bs_position, dtype=float)

    @property
    def axis(self) -> np.ndarray:
        return np.asarray(self.array_axis, dtype=float)


@dataclass(frozen=True)
class SubcarrierGrid:
    """OFDM numerology: ``n_total`` system carriers, the first ``n_coherent`` used for sensing."""

    n_total: int = 128
    n_coherent: int = 10
    n_symbols: int = 10
    sample_period: float = 1.0 / 100e6

    def __post_init__(self):
        if not 1 <= self.n_coherent <= self.n_total:
            raise ValueError(
                f"need 1 <= n_coherent <= n_total, got n_coherent={self.n_coherent}, n_total={self.n_total}"
            )
        if self.n_symbols < 1:
            raise ValueError(f"n_symbols must be >= 1, got {self.n_symbols}")
        if not self.sample_period > 0:
            raise ValueError(f"sample_period must be positive, got {self.sample_period}")

    @property
    def spacing(self) -> float:
        return 1.0 / (self.n_total * self.sample_period)

    def freq(self, n: int) -> float:
        """Baseband frequency of subcarrier ``n`` (1-based)."""
        if not 1 <= n <= self.n_total:
            raise IndexError(f"subcarrier index {n} outside 1..{self.n_total}")
        return n * self.spacing

    @property
    def baseband_freqs(self) -> np.ndarray:
        """Baseband frequencies of the coherent (sensing) subcarriers."""
        return np.arange(1, self.n_coherent + 1) * self.spacing

    @property
    def all_freqs(self) -> np.ndarray:
        return np.arange(1, self.n_total + 1) * self.spacing


@dataclass(frozen=True)
class UEState:
    """Unknown UE state: 2-D position (m) and radial velocity (m/s)."""

    x: float
    y: float
    velocity: float = 0.0

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def as_vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.velocity], dtype=float)

    @classmethod
    def from_vector(cls, u) -> "UEState":
        return cls(float(u[0]), float(u[1]), float(u[2]))


@dataclass(frozen=True)
class Path:
    fading: complex
    delay: float
    aoa: float


@dataclass(frozen=True)
class PathSet:
    """Propagation paths; ``paths[0]`` is the direct reflection off the UE."""

    departure_angle: float
    doppler: float
    paths: tuple[Path, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))
        if not self.paths:
            raise ValueError("PathSet needs at least the direct path")
        if any(not p.delay > 0 for p in self.paths):
            raise ValueError("all path delays must be positive")

    @property
    def direct(self) -> Path:
        return self.paths[0]

    @property
    def indirect(self) -> tuple[Path, ...]:
        return self.paths[1:]

    def check_invariants(self, atol: float = 1e-12) -> None:
        """Raise if the direct path violates reciprocity or is not the shortest."""
        if abs(self.direct.aoa - self.departure_angle) > atol:
            raise ValueError("direct-path AoA must equal the departure angle")
        if any(p.delay < self.direct.delay for p in self.indirect):
            raise ValueError("direct path must have the shortest round trip")


@dataclass(frozen=True)
class CommChannelParams:
    path_loss_db: float
    shadowing_db: float = 0.0
    loss_exponent: float = 2.9
    ref_distance: float = 1.0

    @property
    def large_scale_fading(self) -> float:
        return 10.0 ** (-self.path_loss_db / 10.0)


def doppler_shift(velocity: float, carrier_freq: float) -> float:
    if not carrier_freq > 0:
        raise ValueError("carrier_freq must be positive")
    return 2.0 * velocity * carrier_freq / SPEED_OF_LIGHT


def range_and_cosine(bs: Sequence[float], ue: Sequence[float], axis=(1.0, 0.0)) -> tuple[float, float]:
    """Distance ``||ue - bs||`` and direction cosine w.r.t. the array axis."""
    diff = np.asarray(ue, dtype=float) - np.asarray(bs, dtype=float)
    dist = float(np.hypot(diff[0], diff[1]))
    if dist == 0.0:
        raise GeometryError("UE coincides with the base station")
    cos = float(np.clip(diff @ np.asarray(axis, dtype=float) / dist, -1.0, 1.0))
    return dist, cos


def direct_path_geometry(bs, ue, axis=(1.0, 0.0)) -> tuple[float, float]:
    """Round-trip delay and AoA of the direct reflection."""
    dist, cos = range_and_cosine(bs, ue, axis)
    return 2.0 * dist / SPEED_OF_LIGHT, float(np.arccos(cos))


def aoa_of(bs, point, axis=(1.0, 0.0)) -> float:
    return float(np.arccos(range_and_cosine(bs, point, axis)[1]))


def canonical_position(q, bs=(0.0, 0.0), axis=(1.0, 0.0)) -> np.ndarray:
    """Mirror ``q`` across the array axis into the half-plane of non-negative normal offset.

    Everything the array observes depends on range and ``cos(angle)`` only, so
    ``q`` and its mirror image are indistinguishable; this picks one representative.
    """
    q = np.asarray(q, dtype=float)
    bs = np.asarray(bs, dtype=float)
    axis = np.asarray(axis, dtype=float)
    normal = np.array([-axis[1], axis[0]])
    off = (q - bs) @ normal
    if off < 0:
        return q - 2.0 * off * normal
    return q.copy()


def steering_matrix(n_ant: int, freqs, cos_angle: float, array: ArrayConfig) -> np.ndarray:
    """Steering vectors for several baseband frequencies, shape ``(len(freqs), n_ant)``."""
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    k = (freqs + array.carrier_freq) / SPEED_OF_LIGHT * array.element_spacing
    t = np.arange(n_ant)
    return np.exp(-2j * np.pi * np.outer(k, t) * cos_angle)


def steering_tx(grid: SubcarrierGrid, array: ArrayConfig, n: int, angle: float) -> np.ndarray:
    return steering_matrix(array.n_tx, grid.freq(n), np.cos(angle), array)[0]


def steering_rx(grid: SubcarrierGrid, array: ArrayConfig, n: int, angle: float) -> np.ndarray:
    return steering_matrix(array.n_rx, grid.freq(n), np.cos(angle), array)[0]


def radar_channel(grid, array, path: Path, departure_angle: float, doppler: float, n: int) -> np.ndarray:
    """``N_R x N_T`` radar channel of one path on subcarrier ``n``."""
    fn = grid.freq(n)
    phase = path.fading * np.exp(-2j * np.pi * (fn - doppler) * path.delay)
    b = steering_rx(grid, array, n, path.aoa)
    a = steering_tx(grid, array, n, departure_angle)
    return phase * np.outer(b, a.conj())


def path_loss_db(dist: float, ref_distance: float = 1.0, loss_exponent: float = 2.9,
                 carrier_freq: float = 60e9, shadowing_db: float = 0.0) -> float:
    if not ref_distance > 0:
        raise GeometryError("reference distance must be positive")
    if dist < ref_distance:
        raise GeometryError(f"distance {dist} m is below the reference distance {ref_distance} m")
    free_space = 20.0 * np.log10(4.0 * np.pi * carrier_freq * ref_distance / SPEED_OF_LIGHT)
    return float(free_space + 10.0 * loss_exponent * np.log10(dist / ref_distance) + shadowing_db)


def comm_channel(dist: float, shadowing_db: float = 0.0, loss_exponent: float = 2.9,
                 ref_distance: float = 1.0, carrier_freq: float = 60e9) -> CommChannelParams:
    pl = path_loss_db(dist, ref_distance, loss_exponent, carrier_freq, shadowing_db)
    return CommChannelParams(pl, shadowing_db, loss_exponent, ref_distance)


def _default_tx(array: ArrayConfig, grid: SubcarrierGrid) -> np.ndarray:
    from isacsim.waveform import tx_vector

    return tx_vector(1, 1, array, grid.n_symbols)


def tx_gain(grid, array, n: int, departure_angle: float, tx=None) -> float:
    """``|a_n^H(phi) x|^2``: power radiated toward ``departure_angle`` by transmit vector ``x``."""
    x = _default_tx(array, grid) if tx is None else np.asarray(tx)
    a = steering_tx(grid, array, n, departure_angle)
    return float(abs(a.conj() @ x) ** 2)


def sinr_rad(array: ArrayConfig, grid: SubcarrierGrid, pathset: PathSet, n: int,
             beam_gain: float = 1.0, noise_var: float = 1e-14, tx=None) -> float:
    """Per-unit-power sensing SINR on subcarrier ``n``.

    The receiver combines with ``b_n(theta_0)/sqrt(N_R)``; the indirect paths
    add coherently at the combiner output, which makes the ratio
    frequency-selective.
    """
    if not noise_var > 0:
        raise ValueError("sensing noise power must be positive")
    fn = grid.freq(n)
    gain = tx_gain(grid, array, n, pathset.departure_angle, tx)
    direct = pathset.direct
    u = steering_rx(grid, array, n, direct.aoa) / np.sqrt(array.n_rx)
    signal = abs(direct.fading) ** 2 * array.n_rx * gain
    interf = 0j
    for p in pathset.indirect:
        b = steering_rx(grid, array, n, p.aoa)
        interf += p.fading * np.exp(-2j * np.pi * (fn - pathset.doppler) * p.delay) * (u.conj() @ b)
    interference = abs(interf) ** 2 * gain
    return float(beam_gain * signal / (beam_gain * interference + noise_var))


def sinr_com(array: ArrayConfig, grid: SubcarrierGrid, beta: float, pathset: PathSet, n: int,
             beam_gain_com: float = 1.0, beam_gain_rad: float = 1.0, noise_var: float = 1e-14,
             tx=None) -> float:
    """Per-unit-power downlink SINR of the single-antenna UE on subcarrier ``n``."""
    if not noise_var > 0:
        raise ValueError("communication noise power must be positive")
    fn = grid.freq(n)
    gain = tx_gain(grid, array, n, pathset.departure_angle, tx)
    interf = sum(p.fading * np.exp(-2j * np.pi * (fn - pathset.doppler) * p.delay) for p in pathset.paths)
    interference = abs(interf) ** 2 * gain * beam_gain_rad
    return float(beta * gain * beam_gain_com / (noise_var + interference))
