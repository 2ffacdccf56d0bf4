import numpy as np
import pytest
from hypothesis import settings

from isacsim.geometry import ArrayConfig, SubcarrierGrid
from isacsim.waveform import default_waveform

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def grid():
    return SubcarrierGrid()


@pytest.fixture
def array():
    return ArrayConfig()


@pytest.fixture
def waveform(grid, array):
    return default_waveform(grid, array)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
