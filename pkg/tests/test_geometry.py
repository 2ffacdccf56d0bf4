import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from isacsim.geometry import (
    SPEED_OF_LIGHT,
    ArrayConfig,
    GeometryError,
    Path,
    PathSet,
    SubcarrierGrid,
    canonical_position,
    comm_channel,
    direct_path_geometry,
    doppler_shift,
    path_loss_db,
    radar_channel,
    range_and_cosine,
    sinr_com,
    sinr_rad,
    steering_matrix,
    steering_rx,
    steering_tx,
    tx_gain,
)


def test_doppler_examples():
    assert doppler_shift(0.0, 60e9) == 0.0
    assert doppler_shift(20.0, 60e9) == pytest.approx(8000.0)
    assert doppler_shift(-5.0, 60e9) == pytest.approx(-2000.0)
    with pytest.raises(ValueError):
        doppler_shift(1.0, 0.0)


def test_grid_frequencies():
    g = SubcarrierGrid()
    assert g.spacing == pytest.approx(1e8 / 128)
    assert g.freq(1) == pytest.approx(g.spacing)
    assert g.freq(128) == pytest.approx(1e8)
    np.testing.assert_allclose(g.baseband_freqs, g.spacing * np.arange(1, 11))
    with pytest.raises(IndexError):
        g.freq(0)
    with pytest.raises(ValueError):
        SubcarrierGrid(n_total=8, n_coherent=9)


def test_default_spacing_is_half_wavelength():
    arr = ArrayConfig()
    assert arr.element_spacing == pytest.approx(SPEED_OF_LIGHT / 60e9 / 2)


def test_steering_reference_element_is_one(array):
    a = steering_tx(SubcarrierGrid(), array, 5, 0.7)
    assert a[0] == 1
    np.testing.assert_allclose(np.abs(a), 1.0)


def test_steering_broadside_is_flat(array):
    b = steering_rx(SubcarrierGrid(), array, 3, math.pi / 2)
    np.testing.assert_allclose(b, np.ones(array.n_rx), atol=1e-12)


def test_steering_phase_progression(array):
    f = 2e6
    a = steering_matrix(array.n_tx, [f], 0.5, array)[0]
    step = -2 * np.pi * (f + array.carrier_freq) / SPEED_OF_LIGHT * array.element_spacing * 0.5
    np.testing.assert_allclose(np.angle(a[1] / a[0]), np.angle(np.exp(1j * step)))


def test_range_and_cosine():
    d, c = range_and_cosine((0, 0), (3, 4))
    assert d == 5.0 and c == pytest.approx(0.6)
    with pytest.raises(GeometryError):
        range_and_cosine((1, 1), (1, 1))


def test_direct_path_geometry():
    tau, phi = direct_path_geometry((0, 0), (30, 0))
    assert tau == pytest.approx(60 / SPEED_OF_LIGHT)
    assert phi == pytest.approx(0.0)


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_canonical_position_is_mirror_invariant(x, y):
    a = canonical_position((x, y))
    b = canonical_position((x, -y))
    np.testing.assert_allclose(a, b)
    assert a[1] >= 0


def test_path_loss():
    fs = 20 * np.log10(4 * np.pi * 60e9 / SPEED_OF_LIGHT)
    assert path_loss_db(1.0) == pytest.approx(fs)
    assert path_loss_db(10.0) == pytest.approx(fs + 29.0)
    assert path_loss_db(10.0, shadowing_db=3.0) == pytest.approx(fs + 32.0)
    with pytest.raises(GeometryError):
        path_loss_db(0.5)


def test_comm_channel_fading():
    ch = comm_channel(10.0)
    assert ch.large_scale_fading == pytest.approx(10 ** (-ch.path_loss_db / 10))


def _pathset(phi=0.4, k=2):
    paths = [Path(1e-3, 2e-7, phi)]
    for i in range(k):
        paths.append(Path(3e-4 * np.exp(1j * i), 2.5e-7 + 1e-8 * i, 1.0 + 0.3 * i))
    return PathSet(phi, 4000.0, paths)


def test_pathset_invariants():
    _pathset().check_invariants()
    with pytest.raises(ValueError):
        PathSet(0.1, 0.0, [])
    with pytest.raises(ValueError):
        PathSet(0.1, 0.0, [Path(1.0, 0.0, 0.1)])
    bad = PathSet(0.1, 0.0, [Path(1.0, 2e-7, 0.2)])
    with pytest.raises(ValueError):
        bad.check_invariants()


def test_sinr_without_interference_is_snr(array):
    grid = SubcarrierGrid()
    ps = _pathset(k=0)
    gain = tx_gain(grid, array, 7, ps.departure_angle)
    expected = abs(1e-3) ** 2 * array.n_rx * gain / 1e-14
    assert sinr_rad(array, grid, ps, 7) == pytest.approx(expected)


def test_sinr_decreases_with_interference(array):
    grid = SubcarrierGrid()
    clean = sinr_rad(array, grid, _pathset(k=0), 3)
    dirty = sinr_rad(array, grid, _pathset(k=2), 3)
    assert dirty < clean
    assert sinr_com(array, grid, 1e-10, _pathset(k=2), 3) >= 0


def test_sinr_rejects_zero_noise(array):
    with pytest.raises(ValueError):
        sinr_rad(array, SubcarrierGrid(), _pathset(), 1, noise_var=0.0)
    with pytest.raises(ValueError):
        sinr_com(array, SubcarrierGrid(), 1e-10, _pathset(), 1, noise_var=0.0)


def test_doppler_hand_value():
    assert doppler_shift(10.0, 60e9) == pytest.approx(4000.0)


def test_direct_path_examples():
    tau, phi = direct_path_geometry((0, 0), (150, 0))
    assert tau == pytest.approx(1e-6)
    assert phi == 0.0
    assert direct_path_geometry((1, 1), (1, 8))[1] == pytest.approx(np.pi / 2)
    assert direct_path_geometry((0, 0), (-4, 0))[1] == pytest.approx(np.pi)


def test_steering_examples():
    arr2 = ArrayConfig(n_tx=2, n_rx=2)
    np.testing.assert_allclose(steering_matrix(2, [0.0], 1.0, arr2)[0], [1, -1], atol=1e-12)
    arr4 = ArrayConfig(n_tx=4)
    got = steering_matrix(4, [0.0], np.cos(np.pi / 3), arr4)[0]
    np.testing.assert_allclose(got, np.exp(-1j * np.pi * np.arange(4) / 2), atol=1e-12)
    np.testing.assert_array_equal(steering_matrix(1, [5e6], 0.3, ArrayConfig(n_rx=1))[0], [1])


def test_radar_channel_structure(grid):
    arr = ArrayConfig(n_tx=4, n_rx=3)
    H = radar_channel(grid, arr, Path(0.3 - 0.4j, 2e-7, 1.2), 0.7, 900.0, 5)
    assert np.linalg.matrix_rank(H) <= 1
    np.testing.assert_allclose(np.abs(H), 0.5)
    assert not radar_channel(grid, arr, Path(0.0, 2e-7, 1.2), 0.7, 900.0, 5).any()


def test_radar_channel_all_ones():
    arr = ArrayConfig(n_tx=2, n_rx=2)
    H = radar_channel(SubcarrierGrid(), arr, Path(1.0, 0.0, np.pi / 2), np.pi / 2, 0.0, 1)
    np.testing.assert_allclose(H, np.ones((2, 2)), atol=1e-12)


def test_path_loss_examples():
    assert path_loss_db(1.0) == pytest.approx(20 * np.log10(800 * np.pi), abs=1e-6)
    assert path_loss_db(1.0) == pytest.approx(68.0, abs=0.05)
    assert path_loss_db(3.0, loss_exponent=0.0) == pytest.approx(path_loss_db(40.0, loss_exponent=0.0))


def test_sinr_rad_zero_direct(array, grid):
    ps = PathSet(0.4, 0.0, [Path(0.0, 2e-7, 0.4), Path(1e-4, 3e-7, 1.0)])
    assert sinr_rad(array, grid, ps, 1) == 0.0


def test_sinr_rad_equal_geometry_limit(array, grid):
    ps = PathSet(0.4, 0.0, [Path(2e-3, 2e-7, 0.4), Path(5e-4, 3e-7, 0.4)])
    assert sinr_rad(array, grid, ps, 9, noise_var=1e-40) == pytest.approx(16.0, rel=1e-9)


def test_sinr_com_examples(array, grid):
    quiet = PathSet(0.4, 0.0, [Path(0.0, 2e-7, 0.4), Path(0.0, 3e-7, 1.0)])
    gain = tx_gain(grid, array, 2, 0.4)
    assert sinr_com(array, grid, 1e-8, quiet, 2, beam_gain_com=3.0) == pytest.approx(1e-8 * gain * 3.0 / 1e-14)
    assert sinr_com(array, grid, 0.0, _pathset(), 2) == 0.0
    # one loud interferer: noise negligible
    loud = PathSet(0.4, 0.0, [Path(1e-2, 2e-7, 0.4)])
    got = sinr_com(array, grid, 1e-8, loud, 2, beam_gain_com=2.0, beam_gain_rad=5.0)
    assert got == pytest.approx(1e-8 * 2.0 / (1e-4 * 5.0), rel=1e-6)
