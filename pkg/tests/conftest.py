import numpy as np
import pytest

from binaural_masking import synth
from binaural_masking.audio_io import Signal
from binaural_masking.transforms import StftConfig

RATE = 10000


@pytest.fixture(scope="session")
def sc():
    return StftConfig()


@pytest.fixture(scope="session")
def speech():
    return synth.synthetic_speech(seed=7, duration_s=2.0, rate=RATE)


@pytest.fixture(scope="session")
def noise():
    return synth.white_noise(seed=8, duration_s=2.0, rate=RATE)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_signal(rng):
    return Signal(rng.standard_normal(RATE), RATE)
