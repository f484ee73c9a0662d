import numpy as np
import pytest

from isacsim.frame import Numerology, SlotPattern, build_schedule

NR_PATTERN = "DDDDDDDSUU"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_numerology():
    """3.6 MHz / 128-point grid: same 30 kHz timeline, desk-sized sample rate."""
    return Numerology(bandwidth=3.6e6, fft_size=128)


@pytest.fixture
def small_schedule(small_numerology):
    return build_schedule(small_numerology, SlotPattern.from_string(NR_PATTERN), [0, 5], 64)
