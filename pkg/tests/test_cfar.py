import numpy as np
import pytest

from isacsim import kernels
from isacsim.detect import CfarConfig, DetectorKind, ca_cfar_2d, cfar_mask, threshold_multiplier
from isacsim.errors import ConfigError, WindowTooLarge
from isacsim.rdproc import RangeDopplerMap

N32 = CfarConfig(guard_cells=(0, 1), training_cells=(3, 1), pfa=1e-3)


def rd_map(power):
    nr, nd = power.shape
    return RangeDopplerMap(power, np.arange(nr) * 1.5, (np.arange(nd) - nd // 2) * 0.1, pri=2.5e-3,
                           wavelength=0.08)


def test_training_count_and_multiplier():
    assert N32.num_training == 32
    assert N32.alpha == pytest.approx(32 * (1e-3 ** (-1 / 32) - 1), rel=1e-15)
    # Square-law CA-CFAR: Pfa = (1 + alpha / N)^-N.
    assert (1 + N32.alpha / 32) ** -32 == pytest.approx(1e-3, rel=1e-12)
    assert CfarConfig().num_training == 92
    assert threshold_multiplier(10, 0.5) == pytest.approx(10 * (2 ** 0.1 - 1))


def test_false_alarm_rate_on_exponential_noise(rng):
    power = rng.exponential(1.0, (1100, 1000))
    mask = cfar_mask(power, N32)
    valid = 1100 - 2 * N32.half_window[0]
    cells = valid * 1000
    assert cells >= 1_000_000
    rate = mask.sum() / cells
    assert 0.5e-3 <= rate <= 2e-3


def test_single_strong_cell_in_empty_map():
    power = np.zeros((64, 64))
    power[30, 17] = 100.0
    dets = ca_cfar_2d(rd_map(power))
    assert [(d.range_bin, d.doppler_bin) for d in dets] == [(30, 17)]
    assert dets[0].detector is DetectorKind.CA_CFAR
    assert dets[0].range_m == pytest.approx(45.0)


def test_strong_cell_in_noise(rng):
    power = rng.exponential(1.0, (64, 64))
    power[30, 17] = 100.0  # 20 dB above the mean noise power
    dets = ca_cfar_2d(rd_map(power), CfarConfig(pfa=1e-6))
    assert [(d.range_bin, d.doppler_bin) for d in dets] == [(30, 17)]


def test_all_zero_map_has_no_detections():
    assert ca_cfar_2d(rd_map(np.zeros((32, 32)))) == []


def test_window_too_large_and_config_checks():
    with pytest.raises(WindowTooLarge):
        ca_cfar_2d(rd_map(np.ones((5, 64))))
    with pytest.raises(ConfigError):
        CfarConfig(guard_cells=(0, 0), training_cells=(1, 0))
    with pytest.raises(ConfigError):
        CfarConfig(pfa=0.0)


def test_doppler_axis_wraps():
    power = np.ones((20, 16))
    power[10, 0] = 1e4
    dets = ca_cfar_2d(rd_map(power), CfarConfig(guard_cells=(1, 1), training_cells=(1, 2)))
    assert [(d.range_bin, d.doppler_bin) for d in dets] == [(10, 0)]


@pytest.mark.skipif(kernels._native is None, reason="compiled kernels not built")
def test_native_matches_fallback(rng):
    power = rng.exponential(1.0, (80, 48))
    a = kernels.cfar_noise_level(power, 2, 2, 2, 4, backend="native")
    b = kernels.cfar_noise_level(power, 2, 2, 2, 4, backend="python")
    assert np.allclose(a, b, rtol=1e-12, equal_nan=True)
    assert np.array_equal(np.isnan(a), np.isnan(b))
