"""File exports: interleaved float32 I/Q and maps with JSON sidecars, CSV tables.

Binary payloads are little-endian float32 in C order. Every binary file
``name.bin`` has a sidecar ``name.json`` describing shape and axes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

import numpy as np

from .detect.cfar import Detection
from .errors import ConfigError
from .rdproc import RangeDopplerMap
from .scene import Origin, PulseMatrix

IQ_FORMAT = "isacsim-pulse-matrix"
MAP_FORMAT = "isacsim-rd-map"
FORMAT_VERSION = 1


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def _read_sidecar(path: Path, expected: str) -> dict:
    meta = json.loads(_sidecar(path).read_text())
    if meta.get("format") != expected:
        raise ConfigError(f"{_sidecar(path)} is not a {expected} sidecar")
    if meta.get("version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported {expected} version {meta.get('version')}")
    return meta


def write_pulse_matrix(path, matrix: PulseMatrix) -> Path:
    """Write ``path`` (interleaved I/Q, [fast, slow, channel]) and its sidecar."""
    path = Path(path)
    inter = np.empty(matrix.samples.shape + (2,), dtype="<f4")
    inter[..., 0] = matrix.samples.real
    inter[..., 1] = matrix.samples.imag
    path.write_bytes(inter.tobytes(order="C"))
    meta = {
        "format": IQ_FORMAT,
        "version": FORMAT_VERSION,
        "dtype": "<f4",
        "layout": "fast_time,slow_time,channel,iq",
        "shape": list(matrix.samples.shape),
        "sample_rate_hz": matrix.sample_rate,
        "pulse_times_s": [float(t) for t in matrix.pulse_times],
        "origin": matrix.origin.value,
        "cp_len": matrix.cp_len,
        "wavelength_m": matrix.wavelength,
        "valid_from": matrix.valid_from,
    }
    _sidecar(path).write_text(json.dumps(meta, indent=2))
    return path


def read_pulse_matrix(path) -> PulseMatrix:
    path = Path(path)
    meta = _read_sidecar(path, IQ_FORMAT)
    shape = tuple(meta["shape"])
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != int(np.prod(shape)) * 2:
        raise ConfigError(f"{path} holds {raw.size} floats, sidecar expects {int(np.prod(shape)) * 2}")
    inter = raw.reshape(shape + (2,)).astype(float)
    samples = inter[..., 0] + 1j * inter[..., 1]
    return PulseMatrix(samples, meta["sample_rate_hz"], np.array(meta["pulse_times_s"]),
                       Origin(meta["origin"]), meta["cp_len"], meta["wavelength_m"], meta["valid_from"])


def write_map_binary(path, rd: RangeDopplerMap) -> Path:
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(rd.power, dtype="<f4").tobytes())
    meta = {
        "format": MAP_FORMAT,
        "version": FORMAT_VERSION,
        "dtype": "<f4",
        "layout": "range,doppler",
        "unit": "linear power",
        "shape": list(rd.shape),
        "range_axis_m": [float(v) for v in rd.range_axis],
        "velocity_axis_mps": [float(v) for v in rd.velocity_axis],
        "channel": rd.channel,
        "pri_s": rd.pri,
        "wavelength_m": rd.wavelength,
    }
    _sidecar(path).write_text(json.dumps(meta, indent=2))
    return path


def read_map_binary(path) -> RangeDopplerMap:
    path = Path(path)
    meta = _read_sidecar(path, MAP_FORMAT)
    power = np.frombuffer(path.read_bytes(), dtype="<f4").astype(float).reshape(meta["shape"])
    return RangeDopplerMap(power, np.array(meta["range_axis_m"]), np.array(meta["velocity_axis_mps"]),
                           meta["channel"], meta["pri_s"], meta["wavelength_m"])


def map_csv(rd: RangeDopplerMap) -> str:
    """First row: velocity axis; first column: range axis; body: linear power."""
    head = "range_m\\velocity_mps," + ",".join(f"{v:.6g}" for v in rd.velocity_axis)
    rows = [head]
    for r, row in zip(rd.range_axis, rd.power):
        rows.append(f"{r:.6g}," + ",".join(f"{p:.9g}" for p in row))
    return "\n".join(rows) + "\n"


def detections_csv(detections: Iterable[Detection], cpi: int | None = None) -> str:
    lead = "cpi," if cpi is not None else ""
    lines = [lead + "range_m,velocity_mps,score,detector,range_bin,doppler_bin"]
    for d in detections:
        pre = f"{cpi}," if cpi is not None else ""
        lines.append(f"{pre}{d.range_m:.6f},{d.velocity_mps:.6f},{d.score:.9g},{d.detector.value},"
                     f"{d.range_bin},{d.doppler_bin}")
    return "\n".join(lines) + "\n"
