import numpy as np
import pytest

from scan import FrequencySweep, ReconstructionGrid, ScanLine, SoilModel


@pytest.fixture
def soil():
    return SoilModel()


@pytest.fixture
def table1_sweep():
    """1.2 - 3.775 GHz in 25 MHz steps."""
    return FrequencySweep(1.2e9, 25e6, 104)


@pytest.fixture
def table1_scanline():
    """45 positions over 1.2 m."""
    return ScanLine.from_length(0.0, 1.2, 45)


@pytest.fixture
def table1_grid():
    return ReconstructionGrid(0.0, 1.2, 0.02, 0.42, 60, 60)


@pytest.fixture
def desk_grid():
    return ReconstructionGrid(0.36, 0.84, 0.02, 0.26, 24, 12)


@pytest.fixture
def small_sweep():
    return FrequencySweep(1.2e9, 25e6, 41)


@pytest.fixture
def small_scanline():
    return ScanLine.from_length(0.0, 0.8, 21)


@pytest.fixture
def small_grid():
    """24 cells of 4 cm, well conditioned for exact inversion up to 2.2 GHz."""
    return ReconstructionGrid(0.30, 0.54, 0.04, 0.20, 6, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
