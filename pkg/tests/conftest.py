import numpy as np
import pytest

from diffstereo.scenesim import CameraRig
from diffstereo.wavefield import DOEProfile, WaveConfig, simulate_pattern


@pytest.fixture(scope="session")
def default_rig():
    return CameraRig()


@pytest.fixture(scope="session")
def toy_rig():
    # scaled-down baseline so disparities fit small toy grids
    return CameraRig(baseline_wide=55e-4)


@pytest.fixture(scope="session")
def toy_pattern_64(default_rig):
    """Camera-resampled speckle pattern (s = 1) on a 64-grid."""
    wave = WaveConfig.toy(64, default_rig)
    doe = DOEProfile.random(64, wave.eta, wave.wavelength, wave.pitch_u, seed=5)
    return simulate_pattern(doe, default_rig)


def rng(seed=0):
    return np.random.default_rng(seed)
