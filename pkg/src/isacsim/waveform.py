"""Transmit vectors, direct/indirect echo synthesis and the stacked observation ``y_rad``.

Stacking order is subcarrier-major, then OFDM symbol, then receive antenna::

    index(n, m, r) = ((n - 1) * M + (m - 1)) * N_R + (r - 1)
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from isacsim.geometry import (
    ArrayConfig,
    Path,
    PathSet,
    SubcarrierGrid,
    UEState,
    direct_path_geometry,
    doppler_shift,
    steering_matrix,
    steering_tx,
)


def tx_vector(m: int, n: int, array: ArrayConfig, n_symbols: int) -> np.ndarray:
    """Effective transmit vector ``W s_m(n)``: ``exp(-j*pi*(t-1)) / sqrt(M)``, same for every (m, n)."""
    if m < 1 or n < 1:
        raise IndexError("symbol and subcarrier indices are 1-based")
    t = np.arange(array.n_tx)
    return np.exp(-1j * np.pi * t) / np.sqrt(n_symbols)


def default_waveform(grid: SubcarrierGrid, array: ArrayConfig) -> np.ndarray:
    """Transmit vectors for every sensing (subcarrier, symbol), shape ``(N_C, M, N_T)``."""
    x = tx_vector(1, 1, array, grid.n_symbols)
    return np.broadcast_to(x, (grid.n_coherent, grid.n_symbols, array.n_tx)).copy()


def echo_length(grid: SubcarrierGrid, array: ArrayConfig) -> int:
    return array.n_rx * grid.n_coherent * grid.n_symbols


def echo_index(n: int, m: int, r: int, grid: SubcarrierGrid, array: ArrayConfig) -> int:
    """Position of the 1-based triple (subcarrier, symbol, antenna) in the stacked echo."""
    return ((n - 1) * grid.n_symbols + (m - 1)) * array.n_rx + (r - 1)


def tx_projection(grid: SubcarrierGrid, array: ArrayConfig, waveform: np.ndarray, cos_phi: float) -> np.ndarray:
    """``a_n^H(phi) W s_m(n)`` for all sensing (n, m), shape ``(N_C, M)``."""
    a = steering_matrix(array.n_tx, grid.baseband_freqs, cos_phi, array)
    return np.einsum("nt,nmt->nm", a.conj(), waveform)


def synthesize_path(path: Path, departure_angle: float, doppler: float, grid: SubcarrierGrid,
                    array: ArrayConfig, waveform: np.ndarray) -> np.ndarray:
    """Noiseless echo of a single path, stacked."""
    fn = grid.baseband_freqs
    phase = path.fading * np.exp(-2j * np.pi * (fn - doppler) * path.delay)
    b = steering_matrix(array.n_rx, fn, np.cos(path.aoa), array)
    g = tx_projection(grid, array, waveform, np.cos(departure_angle))
    return np.einsum("n,nr,nm->nmr", phase, b, g).reshape(-1)


def synthesize_dr(state: UEState, alpha0: complex, grid: SubcarrierGrid,
                  array: ArrayConfig, waveform: np.ndarray) -> np.ndarray:
    """Direct-reflection echo with delay, angle and Doppler all derived from the UE state."""
    delay, angle = direct_path_geometry(array.bs, state.position, array.axis)
    fd = doppler_shift(state.velocity, array.carrier_freq)
    return synthesize_path(Path(alpha0, delay, angle), angle, fd, grid, array, waveform)


def synthesize_idr(paths: Sequence[Path], grid: SubcarrierGrid, array: ArrayConfig,
                   departure_angle: float, doppler: float, waveform: np.ndarray) -> np.ndarray:
    out = np.zeros(echo_length(grid, array), dtype=complex)
    for p in paths:
        out += synthesize_path(p, departure_angle, doppler, grid, array, waveform)
    return out


def complex_noise(rng: np.random.Generator, size: int, noise_var: float) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with ``E|n|^2 = noise_var``."""
    if noise_var < 0:
        raise ValueError("noise variance must be non-negative")
    scale = np.sqrt(noise_var / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def synthesize_echo(state: UEState, pathset: PathSet, grid: SubcarrierGrid,
                    array: ArrayConfig, waveform: np.ndarray, noise_var: float,
                    rng: np.random.Generator | None = None, echo_gain: float = 1.0) -> np.ndarray:
    """Full radar observation ``y_rad = gain * (f_DR + f_IDR) + n``.

    The direct path takes its fading from ``pathset.paths[0]`` and its geometry
    from the UE state; indirect paths are used as given.
    """
    if noise_var < 0:
        raise ValueError("noise variance must be non-negative")
    _, phi = direct_path_geometry(array.bs, state.position, array.axis)
    fd = doppler_shift(state.velocity, array.carrier_freq)
    y = synthesize_dr(state, pathset.direct.fading, grid, array, waveform)
    y = y + synthesize_idr(pathset.indirect, grid, array, phi, fd, waveform)
    y = echo_gain * y
    if noise_var > 0:
        if rng is None:
            raise ValueError("a random generator is required when noise_var > 0")
        y = y + complex_noise(rng, y.size, noise_var)
    return y


def received_comm_sample(beta: float, pathset: PathSet, grid: SubcarrierGrid, array: ArrayConfig,
                         waveform: np.ndarray, noise_var: float, rng: np.random.Generator | None,
                         n: int, m: int) -> complex:
    """Scalar downlink sample at the single-antenna UE on sensing subcarrier ``n``, symbol ``m``.

    The UE sees the reference element of each indirect path's array response.
    """
    x = waveform[n - 1, m - 1]
    proj = steering_tx(grid, array, n, pathset.departure_angle).conj() @ x
    fn = grid.freq(n)
    sample = np.sqrt(beta) * proj
    for p in pathset.indirect:
        sample += p.fading * np.exp(-2j * np.pi * (fn - pathset.doppler) * p.delay) * proj
    if noise_var > 0:
        if rng is None:
            raise ValueError("a random generator is required when noise_var > 0")
        sample += complex_noise(rng, 1, noise_var)[0]
    return complex(sample)
