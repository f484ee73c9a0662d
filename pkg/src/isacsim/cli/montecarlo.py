"""Monte Carlo harness: independent seeded trials, Pd/Pfa with Wilson intervals, parameter sweeps."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.stats import binomtest

from ..detect.cfar import Detection
from ..errors import ConfigError
from .pipeline import MEASUREMENT, Pipeline, derive_seed, simulate_raw
from .scenario import Scenario, with_override

MONTE_CARLO = 3
MIN_TRIALS = 10
DETECTORS = ("ca_cfar", "cfps_cfar")


@dataclass(frozen=True)
class Estimate:
    """Binomial proportion with a 95 % Wilson interval."""

    successes: int
    total: int
    value: float
    low: float
    high: float

    @classmethod
    def of(cls, k: int, n: int) -> "Estimate":
        if n == 0:
            return cls(k, n, math.nan, math.nan, math.nan)
        ci = binomtest(k, n).proportion_ci(0.95, method="wilson")
        return cls(k, n, k / n, float(ci.low), float(ci.high))


@dataclass
class TrialOutcome:
    hit: dict[str, bool]
    false_alarms: dict[str, int]
    cells: dict[str, int]
    cnr_db: dict[str, float | None]


@dataclass
class SweepPoint:
    value: Any
    trials: int
    pd: dict[str, Estimate]
    pfa: dict[str, Estimate]
    cnr_db: dict[str, float | None] = field(default_factory=dict)


@dataclass
class MonteCarloResult:
    path: str | None
    config_hash: str
    points: list[SweepPoint]

    def to_dict(self) -> dict:
        return {"sweep": self.path, "config_hash": self.config_hash,
                "points": [asdict(p) for p in self.points]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str)

    def to_csv(self) -> str:
        lines = ["value,detector,trials,pd,pd_low,pd_high,pfa,pfa_low,pfa_high"]
        for p in self.points:
            for d in DETECTORS:
                a, b = p.pd[d], p.pfa[d]
                lines.append(f"{p.value},{d},{p.trials},{a.value!r},{a.low!r},{a.high!r},"
                             f"{b.value!r},{b.low!r},{b.high!r}")
        return "\n".join(lines) + "\n"


def probe(scenario: Scenario) -> tuple[float, float] | None:
    """(range, radial velocity) tested for Pd: configured, else the first target at t = 0."""
    mc = scenario.monte_carlo
    if mc.probe_range_m is not None:
        return mc.probe_range_m, mc.probe_velocity_mps or 0.0
    specs = scenario.target_specs(0.0)
    if not specs:
        return None
    return specs[0].range, specs[0].radial_velocity


def _is_hit(d: Detection, probe_bin: int, velocity: float, v_tol: float) -> bool:
    return d.range_bin == probe_bin and abs(d.velocity_mps - velocity) <= v_tol


def _run_chunk(scenario: Scenario, indices: Sequence[int]) -> list[TrialOutcome]:
    pipe = Pipeline(scenario)
    pipe.tracker = None
    pipe.prepare()
    ctx = pipe.ctx
    target = probe(scenario)
    n_range = scenario.scene.num_range_bins
    out = []
    for i in indices:
        raw = simulate_raw(ctx, 0, derive_seed(scenario.seed, MONTE_CARLO, i))
        res = pipe.process_cpi(0, raw, keep_maps=True)
        hit, fa, cells = {}, {}, {}
        for det in DETECTORS:
            rd = res.maps["post_mti" if det == "ca_cfar" else "post_nlms"]
            v_bin = abs(rd.velocity_axis[1] - rd.velocity_axis[0])
            dets = res.detections[det]
            if target is None:
                probe_bin = -1
                hit[det] = False
            else:
                probe_bin = int(round(target[0] / ctx.range_bin_spacing))
                hit[det] = any(_is_hit(d, probe_bin, target[1], 1.5 * v_bin) for d in dets)
            fa[det] = sum(d.range_bin != probe_bin for d in dets)
            other = n_range - (1 if 0 <= probe_bin < n_range else 0)
            # CA-CFAR decides per range-Doppler cell, CFPS-CFAR once per range cell.
            cells[det] = other * rd.num_doppler if det == "ca_cfar" else other
        out.append(TrialOutcome(hit, fa, cells, dict(res.cnr_db)))
    return out


def run_trials(scenario: Scenario, trials: int, workers: int | None = None) -> list[TrialOutcome]:
    """Outcomes in trial order; identical for any worker count."""
    if trials < MIN_TRIALS:
        raise ConfigError(f"need at least {MIN_TRIALS} trials, got {trials}")
    workers = scenario.monte_carlo.workers if workers is None else workers
    if workers <= 1:
        return _run_chunk(scenario, range(trials))
    chunks = [list(c) for c in np.array_split(np.arange(trials), workers) if len(c)]
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        parts = pool.map(_run_chunk, [scenario] * len(chunks), [[int(i) for i in c] for c in chunks])
        return [o for part in parts for o in part]


def summarize(value: Any, outcomes: list[TrialOutcome]) -> SweepPoint:
    pd = {d: Estimate.of(sum(o.hit[d] for o in outcomes), len(outcomes)) for d in DETECTORS}
    pfa = {d: Estimate.of(sum(o.false_alarms[d] for o in outcomes), sum(o.cells[d] for o in outcomes))
           for d in DETECTORS}
    cnr = {}
    for stage in sorted({k for o in outcomes for k in o.cnr_db}):
        vals = [o.cnr_db[stage] for o in outcomes if o.cnr_db.get(stage) is not None]
        # Average in linear power, report in dB.
        cnr[stage] = float(10 * np.log10(np.mean(10 ** (np.array(vals) / 10)))) if vals else None
    return SweepPoint(value, len(outcomes), pd, pfa, cnr)


def monte_carlo(scenario: Scenario, trials: int, sweep: str | None = None,
                values: Sequence[Any] = (), workers: int | None = None) -> MonteCarloResult:
    """Pd/Pfa per detector (and mean CNR per stage) for each value of the swept field."""
    if sweep is None:
        points = [summarize(None, run_trials(scenario, trials, workers))]
    else:
        if not values:
            raise ConfigError("a sweep needs at least one value")
        points = [summarize(v, run_trials(with_override(scenario, sweep, v), trials, workers)) for v in values]
    return MonteCarloResult(sweep, scenario.config_hash(), points)
