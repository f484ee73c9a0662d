import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isacsim.budget import LinkParams
from isacsim.errors import ConfigError, TooFewNoiseCells, WrongOrigin
from isacsim.frame import SPEED_OF_LIGHT, Numerology, SlotPattern, build_schedule
from isacsim.rdproc import doppler_process, doppler_spectrum, pulse_compress, slow_time_window, snr_estimate
from isacsim.scene import Origin, PulseMatrix, RxArray, Scene, TargetSpec, simulate_cpi
from isacsim.waveform import matched_filter_ref, synth_chirp_symbol

LAMBDA = 0.080064
PRI = 2.5e-3


def tone_matrix(v, n=256, ranges=8, channels=1, amp=1.0, rng=None, noise=0.0, bin_=3):
    """Compressed matrix with a slow-time tone of radial velocity v in one range bin."""
    t = np.arange(n) * PRI
    x = np.zeros((ranges, n, channels), complex)
    x[bin_] = (amp * np.exp(-4j * np.pi * v * t / LAMBDA))[:, None]
    if noise:
        x += math.sqrt(noise / 2) * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))
    return PulseMatrix(x, 122.88e6, t, origin=Origin.COMPRESSED, wavelength=LAMBDA)


def test_aligned_copy_peak_is_sqrt_length():
    num = Numerology(bandwidth=3.6e6, fft_size=128)
    sym = synth_chirp_symbol(num)
    ref = matched_filter_ref(sym)
    assert np.sum(np.abs(ref) ** 2) == pytest.approx(1.0)
    x = np.zeros((sym.time_domain.size + 10, 2, 1), complex)
    x[:sym.time_domain.size, :, 0] = sym.time_domain[:, None]
    m = PulseMatrix(x, num.sample_rate, np.array([0.0, PRI]), cp_len=num.cp_len)
    out = pulse_compress(m, ref)
    assert np.argmax(np.abs(out.samples[:, 0, 0])) == 0
    assert abs(out.samples[0, 0, 0]) == pytest.approx(math.sqrt(num.fft_size), rel=1e-9)
    with pytest.raises(WrongOrigin):
        pulse_compress(out, ref)


def test_compression_preserves_noise_variance(rng):
    num = Numerology(bandwidth=3.6e6, fft_size=128)
    ref = matched_filter_ref(synth_chirp_symbol(num))
    x = (rng.standard_normal((600, 200, 1)) + 1j * rng.standard_normal((600, 200, 1))) / math.sqrt(2)
    out = pulse_compress(PulseMatrix(x, num.sample_rate, np.arange(200) * PRI, cp_len=num.cp_len), ref)
    assert np.var(out.samples) == pytest.approx(1.0, rel=0.02)


def test_targets_three_metres_apart_are_resolved():
    num = Numerology()  # 100 MHz occupied bandwidth
    sched = build_schedule(num, SlotPattern.from_string("DDDDDDDSUU"), [0, 5], 2)
    sym = synth_chirp_symbol(num)
    rb = SPEED_OF_LIGHT / (2 * num.sample_rate)
    r0 = 20 * rb
    scene = Scene([TargetSpec(r0, 0.0, 1.0), TargetSpec(r0 + 3.0, 0.0, 1.0)], num_range_bins=40, add_noise=False)
    out = pulse_compress(simulate_cpi(scene, num, sched, sym, LinkParams(), RxArray(1)), matched_filter_ref(sym))
    p = np.abs(out.samples[:, 0, 0]) ** 2
    peaks = [i for i in range(1, p.size - 1) if p[i] >= p[i - 1] and p[i] >= p[i + 1] and p[i] > 0.25 * p.max()]
    assert len(peaks) == 2
    a, b = peaks
    dip = p[a:b + 1].min()
    assert 10 * math.log10(min(p[a], p[b]) / dip) >= 3.0


def test_five_mps_lands_eighty_bins_from_dc():
    expected = round(2 * 5 / LAMBDA * PRI * 256) % 256
    assert expected == 80
    rd = doppler_process(tone_matrix(5.0))
    assert np.argmax(rd.power[3]) - rd.zero_doppler_bin == expected
    assert rd.velocity_axis[rd.zero_doppler_bin + 80] == pytest.approx(5.0, abs=rd.velocity_axis[1] - rd.velocity_axis[0])


def test_zero_velocity_in_dc_bin():
    rd = doppler_process(tone_matrix(0.0))
    assert np.argmax(rd.power[3]) == rd.zero_doppler_bin
    assert rd.velocity_axis[rd.zero_doppler_bin] == 0.0


def _first_sidelobe_db(spectrum):
    p = spectrum / spectrum.max()
    k = int(np.argmax(p))
    i = k
    while p[i + 1] < p[i]:
        i += 1
    return 10 * np.log10(p[i:i + len(p) // 8].max()), i - k


def test_hann_sidelobes_lower_than_rect():
    m = tone_matrix(0.0, n=64)
    rect = np.abs(doppler_spectrum(m, "rect", nfft=64 * 16)[3, :, 0]) ** 2
    hann = np.abs(doppler_spectrum(m, "hann", nfft=64 * 16)[3, :, 0]) ** 2
    sl_rect, null_rect = _first_sidelobe_db(rect)
    sl_hann, null_hann = _first_sidelobe_db(hann)
    assert sl_rect == pytest.approx(-13.26, abs=0.1)
    assert sl_rect - sl_hann >= 18.0
    assert null_hann > null_rect


def test_snr_estimate_of_injected_tone(rng):
    n = 256
    est = snr_estimate(doppler_process(tone_matrix(2.0, n=n, ranges=64, amp=10.0, noise=1.0, rng=rng)),
                       (3, 128 + round(2 * 2.0 / LAMBDA * PRI * n)))
    w = slow_time_window("hann", n)
    truth = 10 * math.log10(100.0 * w.sum() ** 2 / np.sum(w ** 2))
    assert est == pytest.approx(truth, abs=0.5)


def test_noise_only_max_cell_estimate_bounded(rng):
    for _ in range(5):
        m = tone_matrix(0.0, n=256, ranges=256, amp=0.0, noise=1.0, rng=rng)
        rd = doppler_process(m)
        cell = np.unravel_index(np.argmax(rd.power), rd.shape)
        est = snr_estimate(rd, cell)
        assert est < 15.0
        assert est > 10 * math.log10(math.log(rd.power.size)) - 3


def test_too_few_noise_cells():
    rd = doppler_process(tone_matrix(1.0, n=16, ranges=4))
    with pytest.raises(TooFewNoiseCells):
        snr_estimate(rd, (1, 9))
    with pytest.raises(ConfigError):
        snr_estimate(rd, (10, 0))


def test_parseval(rng):
    m = tone_matrix(1.3, n=100, ranges=16, channels=2, noise=1.0, rng=rng)
    w = slow_time_window("hann", 100)
    for nfft in (None, 256):
        rd = doppler_process(m, nfft=nfft)
        k = 100 if nfft is None else nfft
        ref = k * np.sum(np.abs(m.samples * w[None, :, None]) ** 2)
        assert abs(rd.power.sum() - ref) / ref < 1e-6


@settings(max_examples=25, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(-15, 15))
def test_map_invariant_under_global_phase(phase, v):
    rng = np.random.default_rng(1)
    m = tone_matrix(v, n=32, ranges=4, noise=0.5, rng=rng)
    rotated = m.with_samples(m.samples * np.exp(1j * phase))
    assert np.allclose(doppler_process(m).power, doppler_process(rotated).power, rtol=1e-9, atol=1e-12)


def test_doppler_aliasing_bit_identical():
    num = Numerology(bandwidth=3.6e6, fft_size=128)
    sched = build_schedule(num, SlotPattern.from_string("DDDDDDDSUU"), [0, 5], 32)
    sym = synth_chirp_symbol(num)
    link = LinkParams()
    v_unamb = link.wavelength / (4 * sched.pri)
    rb = SPEED_OF_LIGHT / (2 * num.sample_rate)
    maps = []
    for v in (1.1, 1.1 + 2 * v_unamb):
        scene = Scene([TargetSpec(8.3 * rb, v, 1.0)], seed=11, num_range_bins=16)
        raw = simulate_cpi(scene, num, sched, sym, link, RxArray(1))
        maps.append(doppler_process(pulse_compress(raw, matched_filter_ref(sym))).power)
    assert np.array_equal(maps[0], maps[1])


def test_channel_combining():
    m = tone_matrix(2.0, n=32, ranges=4, channels=3)
    total = doppler_process(m)
    per = sum(doppler_process(m, combine=c).power for c in range(3))
    assert np.allclose(total.power, per)
    assert total.channel == "combined" and doppler_process(m, combine=1).channel == 1
    coh = doppler_process(m, combine="coherent", azimuth=0.0)
    assert coh.power.max() == pytest.approx(total.power.max())
    with pytest.raises(ConfigError):
        doppler_process(m, combine=5)
    with pytest.raises(WrongOrigin):
        doppler_process(m.with_samples(m.samples, origin=Origin.RAW))


def test_map_axes_and_nonnegative(rng):
    rd = doppler_process(tone_matrix(0.5, n=33, ranges=5, noise=1.0, rng=rng))
    assert rd.power.min() >= 0
    assert rd.shape == (len(rd.range_axis), len(rd.velocity_axis))
    assert rd.velocity_axis[rd.zero_doppler_bin] == 0.0
