import json

import numpy as np
import pytest

from isacsim import io
from isacsim.detect import Detection, DetectorKind
from isacsim.errors import ConfigError
from isacsim.rdproc import RangeDopplerMap
from isacsim.scene import Origin, PulseMatrix


def matrix(rng):
    x = rng.standard_normal((20, 8, 2)) + 1j * rng.standard_normal((20, 8, 2))
    return PulseMatrix(x, 3.6e6, np.arange(8) * 2.5e-3, Origin.COMPRESSED, cp_len=9, valid_from=1)


def test_pulse_matrix_round_trip(tmp_path, rng):
    m = matrix(rng)
    path = io.write_pulse_matrix(tmp_path / "cpi000.bin", m)
    assert path.stat().st_size == m.samples.size * 8
    back = io.read_pulse_matrix(path)
    assert np.array_equal(back.samples, m.samples.astype(np.complex64))
    assert back.origin is Origin.COMPRESSED and back.cp_len == 9 and back.valid_from == 1
    assert np.array_equal(back.pulse_times, m.pulse_times)
    raw = np.frombuffer(path.read_bytes(), "<f4")
    assert raw[0] == np.float32(m.samples[0, 0, 0].real) and raw[1] == np.float32(m.samples[0, 0, 0].imag)


def test_map_round_trip_and_csv(tmp_path, rng):
    rd = RangeDopplerMap(rng.exponential(1.0, (4, 6)), np.arange(4) * 1.2, np.linspace(-1, 1, 6), 0, 2.5e-3, 0.08)
    back = io.read_map_binary(io.write_map_binary(tmp_path / "m.bin", rd))
    assert np.array_equal(back.power, rd.power.astype(np.float32))
    assert back.channel == 0 and back.pri == 2.5e-3
    lines = io.map_csv(rd).splitlines()
    assert len(lines) == 5 and len(lines[0].split(",")) == 7
    assert float(lines[2].split(",")[0]) == pytest.approx(1.2)


def test_sidecar_checks(tmp_path, rng):
    path = io.write_pulse_matrix(tmp_path / "a.bin", matrix(rng))
    meta = json.loads(path.with_suffix(".json").read_text())
    meta["version"] = 99
    path.with_suffix(".json").write_text(json.dumps(meta))
    with pytest.raises(ConfigError):
        io.read_pulse_matrix(path)
    path = io.write_pulse_matrix(tmp_path / "b.bin", matrix(rng))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ConfigError):
        io.read_pulse_matrix(path)
    with pytest.raises(ConfigError):
        io.read_map_binary(io.write_pulse_matrix(tmp_path / "c.bin", matrix(rng)))


def test_detections_csv():
    d = Detection(3, 7, 4.5, -0.25, 12.5, DetectorKind.CFPS_CFAR)
    text = io.detections_csv([d], cpi=2)
    assert text.splitlines() == ["cpi,range_m,velocity_mps,score,detector,range_bin,doppler_bin",
                                 "2,4.500000,-0.250000,12.5,cfps_cfar,3,7"]
    assert io.detections_csv([]).splitlines() == ["range_m,velocity_mps,score,detector,range_bin,doppler_bin"]
