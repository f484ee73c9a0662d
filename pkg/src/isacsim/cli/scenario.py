"""Scenario files: strict TOML schema, conversion to simulator objects and config hashing."""

from __future__ import annotations

import hashlib
import json
import math
import sys
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from ..budget import LinkParams, rcs_for_snr
from ..clutter import NlmsConfig
from ..detect.cfar import CfarConfig
from ..errors import ConfigError
from ..frame import Numerology, SensingSchedule, SlotPattern, build_schedule
from ..scene import ClutterScatterer, ImpairmentConfig, RxArray, Scene, TargetSpec
from ..track import TrackerConfig
from ..waveform import ChirpSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# Fields that only say where results go; they cannot change any number.
HASH_EXCLUDED = ("output_dir",)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True, frozen=True)


class FrameConfig(_Strict):
    subcarrier_spacing_hz: float = 30e3
    bandwidth_hz: float = 100e6
    fft_size: int = 4096
    symbols_per_slot: int = 14
    slots_per_period: int = 10
    period_ms: float = 5.0
    cp_fraction: float = 1.0 / 14.0
    pattern: str = "DDDDDDDSUU"
    sensing_slots: list[int] = [0, 5]
    symbol_index: Optional[int] = None
    pulses_per_cpi: int = 256
    pri_override_ms: Optional[float] = None

    @model_validator(mode="after")
    def _slots_exist(self):
        for s in self.sensing_slots:
            if not 0 <= s < len(self.pattern):
                raise ValueError(f"sensing slot {s} does not exist in pattern {self.pattern!r}")
        return self


class ChirpConfig(_Strict):
    occupied_subcarriers: Optional[int] = None
    sweep_direction: Literal["up", "down"] = "up"


class LinkConfig(_Strict):
    transmit_power_w: float = 10.0
    antenna_gain_db: float = 12.0
    wavelength_m: float = 0.080064
    rcs_m2: float = 0.1
    symbol_duration_us: float = 33.33
    duty_ratio: float = 0.5
    max_range_m: float = 1000.0
    temperature_k: float = 290.0
    loss_noise_figure_db: float = 8.0


class ArrayConfig(_Strict):
    num_channels: int = 4
    element_spacing_wavelengths: float = 0.5


class TargetConfig(_Strict):
    """One target: either a waypoint track or an initial polar state with constant velocity.

    Strength is given as ``rcs_m2`` or as the integrated single-CPI SNR
    ``snr_db`` the radar equation would predict at the initial range.
    """

    rcs_m2: Optional[float] = None
    snr_db: Optional[float] = None
    range_m: Optional[float] = None
    azimuth_deg: float = 0.0
    radial_velocity_mps: float = 0.0
    cross_velocity_mps: float = 0.0
    waypoints: Optional[list[list[float]]] = None  # [[t_s, x_m, y_m], ...]

    @model_validator(mode="after")
    def _one_of(self):
        if (self.rcs_m2 is None) == (self.snr_db is None):
            raise ValueError("give exactly one of rcs_m2 or snr_db")
        if (self.range_m is None) == (self.waypoints is None):
            raise ValueError("give exactly one of range_m or waypoints")
        if self.waypoints is not None:
            if len(self.waypoints) < 2 or any(len(w) != 3 for w in self.waypoints):
                raise ValueError("waypoints need at least two [t_s, x_m, y_m] rows")
            ts = [w[0] for w in self.waypoints]
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValueError("waypoint times must increase")
        return self

    def kinematics(self, t: float) -> tuple[float, float, float, float]:
        """(x, y, vx, vy) at time ``t``; waypoints are joined by straight segments."""
        if self.waypoints is None:
            a = math.radians(self.azimuth_deg)
            u = (math.sin(a), math.cos(a))
            n = (math.cos(a), -math.sin(a))
            vx = self.radial_velocity_mps * u[0] + self.cross_velocity_mps * n[0]
            vy = self.radial_velocity_mps * u[1] + self.cross_velocity_mps * n[1]
            return self.range_m * u[0] + vx * t, self.range_m * u[1] + vy * t, vx, vy
        w = self.waypoints
        k = 0
        while k < len(w) - 2 and t >= w[k + 1][0]:
            k += 1
        (t0, x0, y0), (t1, x1, y1) = w[k], w[k + 1]
        vx, vy = (x1 - x0) / (t1 - t0), (y1 - y0) / (t1 - t0)
        return x0 + vx * (t - t0), y0 + vy * (t - t0), vx, vy


class ClutterConfig(_Strict):
    range_m: float
    cnr_db: float
    azimuth_deg: float = 0.0


class ImpairmentsConfig(_Strict):
    phase_jitter_std_rad: float = 0.0
    amplitude_jitter_std: float = 0.0
    jitter_correlation: float = 0.9
    saturation_level_db: float = math.inf
    direct_path_isolation_db: float = math.inf
    tx_level_db: Optional[float] = None


class SceneConfig(_Strict):
    num_range_bins: int = 1024
    noise_power: float = 1.0
    cpi_interval_s: Optional[float] = None
    targets: list[TargetConfig] = []
    clutter: list[ClutterConfig] = []
    impairments: ImpairmentsConfig = ImpairmentsConfig()


class NlmsSection(_Strict):
    enabled: bool = True
    filter_order: int = 8
    step_size: float = 0.5
    regularization: float = 1e-6
    training_pulses: int = 64
    clutter_gate_db: float = 20.0
    retrain: bool = False
    # "first_cpi": adapt on the first measurement CPI; "clutter_cpi": adapt once on a
    # separately simulated target-free CPI (the target enters the scene later).
    train_source: Literal["first_cpi", "clutter_cpi"] = "first_cpi"


class MtiSection(_Strict):
    enabled: bool = True  # off: branch A runs CA-CFAR on the NLMS output directly
    order: int = 1


class CfarSection(_Strict):
    guard_cells: list[int] = [2, 2]
    training_cells: list[int] = [2, 4]
    pfa: float = 1e-3


class CfpsSection(_Strict):
    enabled: bool = True
    pfa: float = 0.01
    concavity: Optional[int] = 8
    mode: Literal["full", "location"] = "full"
    smoothing: int = 3
    poly_order: int = 2
    significance: float = 1e-3
    zero_doppler_guard_bins: float = 0.5
    training_cpis: int = 4
    region_file: Optional[str] = None


class TrackingSection(_Strict):
    enabled: bool = True
    source: Literal["both", "ca_cfar", "cfps_cfar"] = "both"
    gate: float = 16.27
    confirm_hits: int = 2
    confirm_window: int = 3
    max_misses: int = 5
    process_noise: float = 0.5
    turn_rate_rad_s: float = 0.1
    stay_probability: float = 0.95
    range_std_m: Optional[float] = None
    velocity_std_mps: Optional[float] = None
    azimuth_std_floor_deg: float = 0.1


class ProcessingConfig(_Strict):
    window: str = "hann"
    combine: Literal["noncoherent", "coherent"] = "noncoherent"
    nlms: NlmsSection = NlmsSection()
    mti: MtiSection = MtiSection()
    cfar: CfarSection = CfarSection()
    cfps: CfpsSection = CfpsSection()
    tracking: TrackingSection = TrackingSection()


class ExportConfig(_Strict):
    maps: Literal["none", "last", "all"] = "last"
    iq: bool = False


class MonteCarloConfig(_Strict):
    probe_range_m: Optional[float] = None
    probe_velocity_mps: Optional[float] = None
    workers: int = 1


class Scenario(_Strict):
    seed: int
    cpis: int = 1
    output_dir: Optional[str] = None
    frame: FrameConfig = FrameConfig()
    chirp: ChirpConfig = ChirpConfig()
    link: LinkConfig = LinkConfig()
    array: ArrayConfig = ArrayConfig()
    scene: SceneConfig = SceneConfig()
    processing: ProcessingConfig = ProcessingConfig()
    export: ExportConfig = ExportConfig()
    monte_carlo: MonteCarloConfig = MonteCarloConfig()

    @model_validator(mode="after")
    def _cross_checks(self):
        if self.cpis < 1:
            raise ValueError("cpis must be at least 1")
        return self

    # ---- conversions

    def numerology(self) -> Numerology:
        f = self.frame
        return Numerology(f.subcarrier_spacing_hz, f.bandwidth_hz, f.symbols_per_slot,
                          f.slots_per_period, f.period_ms * 1e-3, f.fft_size, f.cp_fraction)

    def pattern(self) -> SlotPattern:
        return SlotPattern.from_string(self.frame.pattern)

    def schedule(self) -> SensingSchedule:
        f = self.frame
        pri = None if f.pri_override_ms is None else f.pri_override_ms * 1e-3
        return build_schedule(self.numerology(), self.pattern(), f.sensing_slots, f.pulses_per_cpi,
                              f.symbol_index, pri)

    def chirp_spec(self) -> ChirpSpec:
        return ChirpSpec(self.chirp.occupied_subcarriers, self.chirp.sweep_direction)

    def link_params(self) -> LinkParams:
        ln = self.link
        return LinkParams(ln.transmit_power_w, ln.antenna_gain_db, ln.wavelength_m, ln.rcs_m2,
                          self.frame.pulses_per_cpi, ln.symbol_duration_us * 1e-6, ln.duty_ratio,
                          ln.max_range_m, ln.temperature_k, ln.loss_noise_figure_db)

    def rx_array(self) -> RxArray:
        return RxArray(self.array.num_channels, self.array.element_spacing_wavelengths)

    def impairments(self) -> ImpairmentConfig:
        i = self.scene.impairments
        return ImpairmentConfig(i.phase_jitter_std_rad, i.amplitude_jitter_std, i.saturation_level_db,
                                i.jitter_correlation)

    def cpi_interval(self) -> float:
        s = self.scene.cpi_interval_s
        return self.schedule().cpi_duration if s is None else s

    def target_rcs(self, target: TargetConfig) -> float:
        if target.rcs_m2 is not None:
            return target.rcs_m2
        x, y, _, _ = target.kinematics(0.0)
        return rcs_for_snr(self.link_params().with_(max_range=math.hypot(x, y)), target.snr_db)

    def truth(self, t: float) -> list[tuple[float, float, float, float]]:
        return [tg.kinematics(t) for tg in self.scene.targets]

    def target_specs(self, t: float) -> list[TargetSpec]:
        out = []
        for tg in self.scene.targets:
            x, y, vx, vy = tg.kinematics(t)
            r = math.hypot(x, y)
            out.append(TargetSpec(r, (x * vx + y * vy) / r, self.target_rcs(tg), math.degrees(math.atan2(x, y))))
        return out

    def clutter(self) -> list[ClutterScatterer]:
        return [ClutterScatterer(c.range_m, c.cnr_db, c.azimuth_deg) for c in self.scene.clutter]

    def scene_for(self, t: float, seed: int, with_targets: bool = True) -> Scene:
        targets = self.target_specs(t) if with_targets else []
        clutter = self.clutter()
        return Scene(targets, clutter, self.impairments(), seed, self.scene.num_range_bins,
                     self.scene.noise_power, True, noise_only=not (targets or clutter))

    def nlms_config(self) -> NlmsConfig:
        n = self.processing.nlms
        return NlmsConfig(n.filter_order, n.step_size, n.regularization, n.training_pulses, n.clutter_gate_db)

    def cfar_config(self) -> CfarConfig:
        c = self.processing.cfar
        if len(c.guard_cells) != 2 or len(c.training_cells) != 2:
            raise ConfigError("cfar guard_cells and training_cells need two entries (range, doppler)")
        return CfarConfig(tuple(c.guard_cells), tuple(c.training_cells), c.pfa)

    def tracker_config(self) -> TrackerConfig:
        t = self.processing.tracking
        return TrackerConfig(t.gate, t.confirm_hits, t.confirm_window, t.max_misses, t.process_noise,
                             t.turn_rate_rad_s, t.stay_probability)

    def validate_objects(self) -> None:
        """Build every simulator object once so physics-level errors surface as ConfigError early."""
        num = self.numerology()
        self.schedule()
        self.chirp_spec()
        self.link_params()
        self.rx_array()
        self.impairments()
        self.nlms_config()
        self.cfar_config()
        self.tracker_config()
        if num.fft_size < 16:
            raise ConfigError("fft_size too small")

    # ---- hashing

    def canonical_json(self) -> str:
        data = self.model_dump(mode="json", exclude=set(HASH_EXCLUDED))
        return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _format_validation(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def scenario_from_dict(data: dict[str, Any]) -> Scenario:
    try:
        sc = Scenario.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid scenario: {_format_validation(exc)}") from None
    sc.validate_objects()
    return sc


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return scenario_from_dict(data)


def with_override(scenario: Scenario, path: str, value: Any) -> Scenario:
    """Copy of ``scenario`` with the dotted ``path`` (list indices allowed) set to ``value``."""
    data = scenario.model_dump(mode="python")
    keys = path.split(".")
    node: Any = data
    try:
        for k in keys[:-1]:
            node = node[int(k)] if isinstance(node, list) else node[k]
    except (KeyError, IndexError, ValueError, TypeError):
        raise ConfigError(f"unknown scenario field {path!r}") from None
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        if last not in node:
            raise ConfigError(f"unknown scenario field {path!r}")
        node[last] = value
    return scenario_from_dict(data)


def default_scenario_path(name: str = "slow_target_desk") -> Path:
    return Path(__file__).resolve().parent.parent / "scenarios" / f"{name}.toml"
