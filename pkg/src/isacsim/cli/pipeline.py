"""End-to-end orchestration: simulate -> compress -> cancel -> detect -> track, plus exports."""

from __future__ import annotations

import json
import math
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .. import io
from ..budget import REFERENCE_RATES, budget_table, rate_loss, snr_out
from ..clutter import NlmsState, cell_power_ratio_db, mti_cancel, nlms_apply, nlms_train, residual_history_csv
from ..detect.cfar import Detection, DetectorKind, ca_cfar_2d
from ..detect.cfps import ClutterRegion, cfps_detect, learn_clutter_region, map_peak_features
from ..errors import ConfigError, IsacError, TooFewNoiseCells, TooFewSamples
from ..frame import derived_axes, dl_symbol_overhead, sensing_overhead
from ..rdproc import RangeDopplerMap, doppler_process, doppler_spectrum, pulse_compress, snr_estimate
from ..scene import PulseMatrix, default_tx_level_db, inject_direct_path, simulate_cpi
from ..track import Tracker, azimuth_std_deg, estimate_azimuth, measurement_cov, measurement_from_detection
from ..waveform import matched_filter_ref, synth_chirp_symbol
from .scenario import Scenario

REPORT_FORMAT = "isacsim-run-report"
REPORT_VERSION = 1
MEASUREMENT = 0
TRAINING = 1
NLMS_TRAINING = 2
OVERHEAD_NOTE = "nominal figure: approximately 1 %"


class StageError(IsacError):
    """Wraps a module error with the CPI it happened in."""


def derive_seed(seed: int, purpose: int, index: int, extra: int = 0) -> int:
    return int(np.random.SeedSequence([seed, purpose, index, extra]).generate_state(1)[0])


class Timer:
    def __init__(self):
        self.totals: dict[str, float] = defaultdict(float)

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.totals[name] += time.perf_counter() - t0


@dataclass
class Context:
    """Objects shared by every CPI of a run."""

    scenario: Scenario
    numerology: object
    schedule: object
    symbol: object
    reference: np.ndarray
    link: object
    array: object
    axes: object
    cfar: object
    nlms: object
    config_hash: str

    @classmethod
    def build(cls, sc: Scenario) -> "Context":
        num = sc.numerology()
        sched = sc.schedule()
        sym = synth_chirp_symbol(num, sc.chirp_spec())
        link = sc.link_params()
        return cls(sc, num, sched, sym, matched_filter_ref(sym), link, sc.rx_array(),
                   derived_axes(num, sched, link.wavelength), sc.cfar_config(), sc.nlms_config(),
                   sc.config_hash())

    @property
    def range_bin_spacing(self) -> float:
        return self.axes.range_bin_spacing

    def cpi_time(self, cpi: int) -> float:
        return cpi * self.scenario.cpi_interval()


def simulate_raw(ctx: Context, cpi: int, seed: int, with_targets: bool = True) -> PulseMatrix:
    sc = ctx.scenario
    scene = sc.scene_for(ctx.cpi_time(cpi), seed, with_targets)
    raw = simulate_cpi(scene, ctx.numerology, ctx.schedule, ctx.symbol, ctx.link, ctx.array)
    imp = sc.scene.impairments
    if math.isfinite(imp.direct_path_isolation_db):
        tx = default_tx_level_db(ctx.link, ctx.numerology) if imp.tx_level_db is None else imp.tx_level_db
        raw = inject_direct_path(raw, ctx.symbol, imp.direct_path_isolation_db, tx, sc.scene.noise_power)
    return raw


def simulate_cpis(ctx: Context) -> Iterator[PulseMatrix]:
    for k in range(ctx.scenario.cpis):
        yield simulate_raw(ctx, k, derive_seed(ctx.scenario.seed, MEASUREMENT, k))


def expected_cell(rd: RangeDopplerMap, range_m: float, velocity: float, spacing: float) -> tuple[int, int]:
    r = int(round(range_m / spacing))
    dv = rd.velocity_axis[1] - rd.velocity_axis[0]
    d = (rd.zero_doppler_bin + int(round(velocity / dv))) % rd.num_doppler
    return r, d


def local_peak(rd: RangeDopplerMap, cell: tuple[int, int], dr: int = 1, dd: int = 2) -> tuple[int, int]:
    r0, d0 = cell
    best, where = -1.0, cell
    for r in range(max(0, r0 - dr), min(rd.shape[0], r0 + dr + 1)):
        for k in range(d0 - dd, d0 + dd + 1):
            d = k % rd.num_doppler
            if rd.power[r, d] > best:
                best, where = rd.power[r, d], (r, d)
    return where


def clutter_and_reference_cells(ctx: Context, t: float) -> tuple[list[int], list[int]]:
    sc = ctx.scenario
    n = sc.scene.num_range_bins
    sp = ctx.range_bin_spacing
    busy = [int(round(c.range_m / sp)) for c in sc.scene.clutter]
    targets = [int(round(s.range / sp)) for s in sc.target_specs(t)]
    clutter = sorted(set(b for b in busy if 0 <= b < n))
    near = set()
    for b in busy + targets:
        near.update(range(b - 3, b + 4))
    reference = [b for b in range(n) if b not in near]
    return clutter, reference


def clutter_only_nlms(ctx: Context) -> NlmsState:
    """NLMS state adapted on a target-free CPI drawn from its own seed stream."""
    raw = simulate_raw(ctx, 0, derive_seed(ctx.scenario.seed, NLMS_TRAINING, 0), with_targets=False)
    return nlms_train(pulse_compress(raw, ctx.reference), ctx.nlms)


def train_clutter_region(ctx: Context, state: NlmsState | None = None) -> tuple[ClutterRegion | None, str]:
    """Region from a file, or learned on clutter-only CPIs simulated with independent seeds."""
    cfg = ctx.scenario.processing.cfps
    if cfg.region_file:
        return ClutterRegion.from_text(Path(cfg.region_file).read_text()), f"loaded from {cfg.region_file}"
    features = []
    nlms_on = ctx.scenario.processing.nlms.enabled
    if nlms_on and state is None:
        state = clutter_only_nlms(ctx)
    for k in range(cfg.training_cpis):
        raw = simulate_raw(ctx, 0, derive_seed(ctx.scenario.seed, TRAINING, k), with_targets=False)
        comp = pulse_compress(raw, ctx.reference)
        if nlms_on:
            comp = nlms_apply(comp, state)
        rd = doppler_process(comp, ctx.scenario.processing.window, ctx.scenario.processing.combine)
        for peaks in map_peak_features(rd, None, cfg.smoothing, cfg.poly_order, cfg.significance).values():
            features.extend(peaks)
    try:
        region = learn_clutter_region(features, cfg.pfa, cfg.concavity, cfg.mode)
    except TooFewSamples as exc:
        return None, f"skipped: {exc}"
    return region, f"learned from {len(features)} clutter peaks in {cfg.training_cpis} CPIs"


def _merge(primary: list[Detection], secondary: list[Detection], v_tol: float) -> list[Detection]:
    out = list(primary)
    for d in secondary:
        if not any(abs(d.range_bin - p.range_bin) <= 1 and abs(d.velocity_mps - p.velocity_mps) <= v_tol
                   for p in primary):
            out.append(d)
    return out


def _det_dict(d: Detection) -> dict:
    return {"range_bin": d.range_bin, "doppler_bin": d.doppler_bin, "range_m": float(d.range_m),
            "velocity_mps": float(d.velocity_mps), "score": float(d.score), "detector": d.detector.value}


def _num(x) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass
class CpiResult:
    index: int
    time_s: float
    snr_estimates_db: list
    cnr_db: dict
    detections: dict[str, list[Detection]]
    nlms_trained: bool
    maps: dict[str, RangeDopplerMap] = field(default_factory=dict)


@dataclass
class RunReport:
    config_hash: str
    payload: dict
    timings: dict[str, float]
    tracker: Tracker | None = None
    cpis: list[CpiResult] = field(default_factory=list)
    region: ClutterRegion | None = None
    nlms_state: NlmsState | None = None

    def to_dict(self, include_timings: bool = True) -> dict:
        d = dict(self.payload)
        if include_timings:
            d["timings_s"] = {k: round(v, 6) for k, v in sorted(self.timings.items())}
        return d

    def to_json(self, include_timings: bool = True) -> str:
        return json.dumps(self.to_dict(include_timings), indent=2, sort_keys=True)


def _metric(name: str, module: str, value, h: str, cpi: int | None = None) -> dict:
    m = {"name": name, "module": module, "value": value, "config_hash": h}
    if cpi is not None:
        m["cpi"] = cpi
    return m


class Pipeline:
    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.ctx = Context.build(scenario)
        self.timer = Timer()
        self.nlms_state: NlmsState | None = None
        self.region: ClutterRegion | None = None
        self.region_note = "disabled"
        self.tracker = Tracker(scenario.tracker_config()) if self._tracking_enabled() else None

    def _tracking_enabled(self) -> bool:
        return self.sc.processing.tracking.enabled and self.sc.array.num_channels >= 2

    def prepare(self) -> None:
        nl = self.sc.processing.nlms
        if nl.enabled and nl.train_source == "clutter_cpi":
            with self.timer.stage("nlms"):
                self.nlms_state = clutter_only_nlms(self.ctx)
        if self.sc.processing.cfps.enabled:
            with self.timer.stage("cfps_training"):
                self.region, self.region_note = train_clutter_region(self.ctx, self.nlms_state)

    def process_cpi(self, k: int, raw: PulseMatrix, keep_maps: bool = False) -> CpiResult:
        sc, ctx, tm = self.sc, self.ctx, self.timer
        proc = sc.processing
        t = ctx.cpi_time(k)
        with tm.stage("pulse_compress"):
            comp = pulse_compress(raw, ctx.reference)
        with tm.stage("doppler"):
            rd_pre = doppler_process(comp, proc.window, proc.combine)
        trained = False
        with tm.stage("nlms"):
            if proc.nlms.enabled:
                if self.nlms_state is None or (proc.nlms.retrain and proc.nlms.train_source == "first_cpi"):
                    self.nlms_state = nlms_train(comp, ctx.nlms)
                    trained = True
                cancelled = nlms_apply(comp, self.nlms_state)
            else:
                cancelled = comp
        with tm.stage("doppler"):
            rd_post = doppler_process(cancelled, proc.window, proc.combine)
        if proc.mti.enabled:
            with tm.stage("mti"):
                mti = mti_cancel(cancelled, proc.mti.order)
            with tm.stage("doppler"):
                rd_mti = doppler_process(mti, proc.window, proc.combine)
        else:
            rd_mti = rd_post
        with tm.stage("ca_cfar"):
            det_a = ca_cfar_2d(rd_mti, ctx.cfar)
        det_b: list[Detection] = []
        if self.region is not None:
            with tm.stage("cfps"):
                c = proc.cfps
                feats = map_peak_features(rd_post, None, c.smoothing, c.poly_order, c.significance)
                bin_hz = rd_post.doppler_axis_hz[1] - rd_post.doppler_axis_hz[0]
                det_b = cfps_detect(feats, self.region, c.zero_doppler_guard_bins * bin_hz, rd_post)

        snrs = []
        for spec in sc.target_specs(t):
            cell = expected_cell(rd_pre, spec.range, spec.radial_velocity, ctx.range_bin_spacing)
            if not 0 <= cell[0] < rd_pre.shape[0]:
                snrs.append(None)
                continue
            try:
                snrs.append(_num(snr_estimate(rd_pre, local_peak(rd_pre, cell))))
            except TooFewNoiseCells:
                snrs.append(None)

        clutter_cells, ref_cells = clutter_and_reference_cells(ctx, t)
        cnr = {}
        if clutter_cells and ref_cells:
            for name, rd in (("pre", rd_pre), ("post_nlms", rd_post), ("post_mti", rd_mti)):
                cnr[name] = _num(cell_power_ratio_db(rd, clutter_cells, ref_cells))

        if self.tracker is not None:
            with tm.stage("tracking"):
                self._track(k, t, cancelled, rd_post, det_a, det_b)

        maps = {"pre": rd_pre, "post_nlms": rd_post, "post_mti": rd_mti} if keep_maps else {}
        return CpiResult(k, t, snrs, cnr, {"ca_cfar": det_a, "cfps_cfar": det_b}, trained, maps)

    def _track(self, k, t, cancelled, rd_post, det_a, det_b) -> None:
        cfg = self.sc.processing.tracking
        ctx = self.ctx
        dv = abs(rd_post.velocity_axis[1] - rd_post.velocity_axis[0])
        if cfg.source == "ca_cfar":
            dets = det_a
        elif cfg.source == "cfps_cfar":
            dets = det_b
        else:
            dets = _merge(det_a, det_b, 2.0 * dv)
        r_std = cfg.range_std_m if cfg.range_std_m is not None else ctx.range_bin_spacing / math.sqrt(12.0)
        v_std = cfg.velocity_std_mps if cfg.velocity_std_mps is not None else dv / math.sqrt(12.0)
        spec = doppler_spectrum(cancelled, self.sc.processing.window) if dets else None
        meas = []
        for d in dets:
            cell = expected_cell(rd_post, d.range_m, d.velocity_mps, ctx.range_bin_spacing)
            az, snr = estimate_azimuth(cancelled, (d.range_bin, cell[1]), ctx.array, spectrum=spec)
            a_std = max(cfg.azimuth_std_floor_deg, azimuth_std_deg(snr, ctx.array, az))
            meas.append(measurement_from_detection(d, az, measurement_cov(r_std, v_std, a_std), t))
        self.tracker.step(meas, t)

    def report(self, results: list[CpiResult]) -> RunReport:
        sc, ctx = self.sc, self.ctx
        h = ctx.config_hash
        link = ctx.link
        table = [{"parameter": n, "value": float(v), "unit": u, "db": float(db)} for n, v, u, db in budget_table(link)]
        overhead = {
            "sensing_overhead": sensing_overhead(ctx.numerology, ctx.schedule),
            "dl_symbol_overhead": dl_symbol_overhead(ctx.numerology, sc.pattern(), ctx.schedule),
            "rate_loss": rate_loss(REFERENCE_RATES),
            "note": OVERHEAD_NOTE,
        }
        axes = {
            "range_resolution_m": ctx.axes.range_resolution,
            "range_bin_spacing_m": ctx.axes.range_bin_spacing,
            "max_unambiguous_velocity_mps": ctx.axes.max_unambiguous_velocity,
            "velocity_resolution_mps": ctx.axes.velocity_resolution,
            "pri_s": ctx.schedule.pri,
        }
        per_cpi = []
        metrics = [_metric("snr_out_db", "budget", snr_out(link), h)]
        for name in ("sensing_overhead", "dl_symbol_overhead", "rate_loss"):
            metrics.append(_metric(name, "frame" if name != "rate_loss" else "budget", overhead[name], h))
        for r in results:
            per_cpi.append({
                "cpi": r.index,
                "time_s": r.time_s,
                "snr_estimates_db": r.snr_estimates_db,
                "cnr_db": r.cnr_db,
                "nlms_trained": r.nlms_trained,
                "detections": {k: [_det_dict(d) for d in v] for k, v in r.detections.items()},
            })
            for i, v in enumerate(r.snr_estimates_db):
                metrics.append(_metric(f"snr_estimate_db[target{i}]", "rdproc", v, h, r.index))
            for stage, v in r.cnr_db.items():
                metrics.append(_metric(f"cnr_db[{stage}]", "clutter", v, h, r.index))
            for det, v in r.detections.items():
                metrics.append(_metric(f"detections[{det}]", "detect", len(v), h, r.index))

        tracks = None
        if self.tracker is not None:
            confirmed_at = {}
            for rec in self.tracker.history:
                if rec.status.value in ("confirmed", "coasting") and rec.id not in confirmed_at:
                    confirmed_at[rec.id] = rec.timestamp
            final = []
            for trk in self.tracker.confirmed():
                x, y, vx, vy = (float(v) for v in trk.state)
                final.append({"id": trk.id, "status": trk.status.value, "x_m": x, "y_m": y, "vx_mps": vx,
                              "vy_mps": vy, "dominant_model": self.tracker.models[trk.dominant_model].label,
                              "confirmed_at_s": confirmed_at.get(trk.id)})
            tracks = {"confirmed": final, "ever_confirmed": len(confirmed_at),
                      "first_confirmation_cpi": _first_confirmation_cpi(confirmed_at, ctx)}
            metrics.append(_metric("confirmed_tracks", "track", len(final), h))

        payload = {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "config_hash": h,
            "seed": sc.seed,
            "cpis": sc.cpis,
            "budget": {"snr_out_db": snr_out(link), "table": table},
            "overhead": overhead,
            "axes": axes,
            "cfps_region": self.region_note,
            "per_cpi": per_cpi,
            "tracks": tracks,
            "metrics": metrics,
        }
        return RunReport(h, payload, dict(self.timer.totals), self.tracker, results, self.region, self.nlms_state)


def _first_confirmation_cpi(confirmed_at: dict, ctx: Context) -> int | None:
    if not confirmed_at:
        return None
    dt = ctx.scenario.cpi_interval()
    return int(round(min(confirmed_at.values()) / dt)) if dt > 0 else 0


def run_pipeline(scenario: Scenario, matrices: Iterable[PulseMatrix] | None = None,
                 keep_maps: str = "none") -> RunReport:
    """Run every CPI of ``scenario``; ``matrices`` replaces simulation with recorded raw data."""
    pipe = Pipeline(scenario)
    pipe.prepare()
    source = simulate_cpis(pipe.ctx) if matrices is None else matrices
    results = []
    it = iter(source)
    k = 0
    while True:
        try:
            with pipe.timer.stage("simulate" if matrices is None else "load"):
                raw = next(it)
        except StopIteration:
            break
        keep = keep_maps == "all" or (keep_maps == "last" and k == scenario.cpis - 1)
        try:
            results.append(pipe.process_cpi(k, raw, keep))
        except IsacError as exc:
            exc.args = (f"CPI {k}: {exc}",)
            raise
        k += 1
    return pipe.report(results)


def write_outputs(report: RunReport, out_dir, scenario: Scenario) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name: str, text: str):
        p = out / name
        p.write_text(text)
        written.append(p)

    put("run_summary.json", report.to_json())
    lines = ["cpi,range_m,velocity_mps,score,detector,range_bin,doppler_bin"]
    for r in report.cpis:
        for dets in r.detections.values():
            lines += io.detections_csv(dets, r.index).splitlines()[1:]
    put("detections.csv", "\n".join(lines) + "\n")
    rows = ["parameter,value,unit,db"] + [f"{r['parameter']},{r['value']!r},{r['unit']},{r['db']!r}"
                                           for r in report.payload["budget"]["table"]]
    put("budget.csv", "\n".join(rows) + "\n")
    if report.tracker is not None:
        put("tracks.csv", report.tracker.history_csv())
    if report.nlms_state is not None:
        put("nlms_residual.csv", residual_history_csv(report.nlms_state))
    if report.region is not None:
        put("clutter_region.txt", report.region.to_text())
    for r in report.cpis:
        for name, rd in r.maps.items():
            written.append(io.write_map_binary(out / f"cpi{r.index:03d}_{name}.bin", rd))
            if name == "post_nlms":
                put(f"cpi{r.index:03d}_{name}.csv", io.map_csv(rd))
    return written
