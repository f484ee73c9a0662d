"""Command-line interface: simulate, process, run, budget, mc, report."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Sequence

from .. import io
from ..budget import REFERENCE_RATES, budget_table, rate_loss
from ..errors import ConfigError, IsacError, NumericalError
from ..frame import dl_symbol_overhead, sensing_overhead
from .montecarlo import monte_carlo
from .pipeline import OVERHEAD_NOTE, Context, run_pipeline, simulate_cpis, write_outputs
from .scenario import Scenario, default_scenario_path, load_scenario, with_override

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
DEFAULT_OUT = "isacsim_out"

log = logging.getLogger("isacsim")


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _scenario(args) -> Scenario:
    path = args.scenario if args.scenario else default_scenario_path()
    sc = load_scenario(path)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects path=value, got {item!r}")
        key, value = item.split("=", 1)
        sc = with_override(sc, key.strip(), _parse_value(value.strip()))
    return sc


def _out_dir(args, sc: Scenario) -> Path:
    return Path(args.output or sc.output_dir or DEFAULT_OUT)


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    out = _out_dir(args, sc) / "iq"
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context.build(sc)
    for k, raw in enumerate(simulate_cpis(ctx)):
        io.write_pulse_matrix(out / f"cpi{k:03d}.bin", raw)
    log.info("wrote %d CPIs to %s", sc.cpis, out)
    print(out)
    return EXIT_OK


def _iq_files(directory: Path) -> list[Path]:
    files = sorted(directory.glob("cpi*.bin"))
    if not files:
        raise ConfigError(f"no cpi*.bin files in {directory}")
    return files


def cmd_process(args) -> int:
    sc = _scenario(args)
    files = _iq_files(Path(args.iq_dir))
    if len(files) != sc.cpis:
        sc = with_override(sc, "cpis", len(files))
    report = run_pipeline(sc, (io.read_pulse_matrix(f) for f in files), keep_maps=sc.export.maps)
    out = _out_dir(args, sc)
    write_outputs(report, out, sc)
    print(render_text(report.to_dict()))
    return EXIT_OK


def cmd_run(args) -> int:
    sc = _scenario(args)
    out = _out_dir(args, sc)
    if sc.export.iq:
        (out / "iq").mkdir(parents=True, exist_ok=True)
        raws = []
        for k, raw in enumerate(simulate_cpis(Context.build(sc))):
            io.write_pulse_matrix(out / "iq" / f"cpi{k:03d}.bin", raw)
            raws.append(raw)
        report = run_pipeline(sc, raws, keep_maps=sc.export.maps)
    else:
        report = run_pipeline(sc, keep_maps=sc.export.maps)
    write_outputs(report, out, sc)
    print(render_text(report.to_dict()))
    return EXIT_OK


def budget_text(sc: Scenario, fmt: str = "table") -> str:
    link = sc.link_params()
    rows = budget_table(link)
    num, sched = sc.numerology(), sc.schedule()
    overhead = [
        ("sensing_overhead", sensing_overhead(num, sched)),
        ("dl_symbol_overhead", dl_symbol_overhead(num, sc.pattern(), sched)),
        ("rate_loss", rate_loss(REFERENCE_RATES)),
    ]
    if fmt == "json":
        return json.dumps({
            "table": [{"parameter": n, "value": v, "unit": u, "db": d} for n, v, u, d in rows],
            "overhead": dict(overhead, note=OVERHEAD_NOTE),
        }, indent=2)
    if fmt == "csv":
        lines = ["parameter,value,unit,db"] + [f"{n},{v!r},{u},{d!r}" for n, v, u, d in rows]
        return "\n".join(lines)
    lines = [f"{'parameter':<20} {'value':>14} {'unit':<5} {'dB':>9}"]
    for n, v, u, d in rows:
        lines.append(f"{n:<20} {v:>14.6g} {u:<5} {d:>9.3f}")
    lines.append("")
    for n, v in overhead:
        lines.append(f"{n:<20} {100 * v:>13.3f} %")
    lines.append(f"(symbol overhead, {OVERHEAD_NOTE})")
    return "\n".join(lines)


def cmd_budget(args) -> int:
    print(budget_text(_scenario(args), args.format))
    return EXIT_OK


def cmd_mc(args) -> int:
    sc = _scenario(args)
    values = [_parse_value(v) for v in args.values.split(",")] if args.values else ()
    if bool(args.sweep) != bool(values):
        raise ConfigError("--sweep and --values go together")
    result = monte_carlo(sc, args.trials, args.sweep, values, args.workers)
    out = _out_dir(args, sc)
    out.mkdir(parents=True, exist_ok=True)
    (out / "montecarlo.json").write_text(result.to_json())
    (out / "montecarlo.csv").write_text(result.to_csv())
    print(result.to_csv(), end="")
    return EXIT_OK


def _fmt(x, spec: str = ".2f") -> str:
    return "n/a" if x is None or (isinstance(x, float) and math.isnan(x)) else format(x, spec)


def render_text(summary: dict) -> str:
    """Human-readable rendering of a run summary dictionary."""
    lines = [f"run {summary['config_hash'][:12]}  seed {summary['seed']}  cpis {summary['cpis']}"]
    lines.append(f"budget snr_out {summary['budget']['snr_out_db']:.3f} dB")
    ov = summary["overhead"]
    lines.append(f"overhead {100 * ov['sensing_overhead']:.2f} % of symbols, "
                 f"{100 * ov['dl_symbol_overhead']:.2f} % of DL symbols, rate loss {100 * ov['rate_loss']:.2f} % "
                 f"({ov['note']})")
    ax = summary["axes"]
    lines.append(f"axes range bin {ax['range_bin_spacing_m']:.3f} m, velocity res {ax['velocity_resolution_mps']:.4f} m/s, "
                 f"PRI {1e3 * ax['pri_s']:.3f} ms")
    lines.append(f"cfps region: {summary['cfps_region']}")
    lines.append("cpi   snr_db      cnr pre/nlms/mti dB      ca_cfar  cfps_cfar")
    for c in summary["per_cpi"]:
        snr = ",".join(_fmt(s, ".1f") for s in c["snr_estimates_db"]) or "-"
        cnr = "/".join(_fmt(c["cnr_db"].get(k), ".1f") for k in ("pre", "post_nlms", "post_mti"))
        d = c["detections"]
        lines.append(f"{c['cpi']:<5} {snr:<11} {cnr:<24} {len(d['ca_cfar']):>7}  {len(d['cfps_cfar']):>9}")
    tr = summary.get("tracks")
    if tr is not None:
        lines.append(f"tracks confirmed {len(tr['confirmed'])}, first confirmation at CPI "
                     f"{_fmt(tr['first_confirmation_cpi'], 'd')}")
        for t in tr["confirmed"]:
            lines.append(f"  #{t['id']} ({t['x_m']:.1f}, {t['y_m']:.1f}) m  "
                         f"({t['vx_mps']:.2f}, {t['vy_mps']:.2f}) m/s  {t['dominant_model']}")
    if "timings_s" in summary:
        lines.append("timings " + ", ".join(f"{k} {v:.3f}s" for k, v in summary["timings_s"].items()))
    return "\n".join(lines)


def cmd_report(args) -> int:
    path = Path(args.summary)
    if path.is_dir():
        path = path / "run_summary.json"
    try:
        summary = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read run summary {path}: {exc}") from None
    if summary.get("format") != "isacsim-run-report":
        raise ConfigError(f"{path} is not a run summary")
    print(json.dumps(summary, indent=2, sort_keys=True) if args.format == "json" else render_text(summary))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isacsim", description="ISAC base-station sensing simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp, output=True):
        sp.add_argument("scenario", nargs="?", help="scenario TOML (default: bundled slow_target_desk)")
        sp.add_argument("--set", action="append", metavar="PATH=VALUE",
                        help="override a scenario field, e.g. scene.impairments.phase_jitter_std_rad=0.05")
        if output:
            sp.add_argument("-o", "--output", help="output directory")

    sp = sub.add_parser("simulate", help="scene -> raw I/Q files")
    scenario_args(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("process", help="raw I/Q files -> maps, detections, tracks")
    sp.add_argument("iq_dir", help="directory holding cpiNNN.bin files and their .json sidecars")
    scenario_args(sp)
    sp.set_defaults(func=cmd_process)

    sp = sub.add_parser("run", help="end-to-end simulation and processing")
    scenario_args(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("budget", help="link budget table and overhead accounting")
    scenario_args(sp, output=False)
    sp.add_argument("--format", choices=("table", "csv", "json"), default="table")
    sp.set_defaults(func=cmd_budget)

    sp = sub.add_parser("mc", help="Monte Carlo Pd/Pfa, optionally swept over one field")
    scenario_args(sp)
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--sweep", help="dotted scenario field to sweep")
    sp.add_argument("--values", help="comma-separated values for --sweep")
    sp.add_argument("--workers", type=int, default=None)
    sp.set_defaults(func=cmd_mc)

    sp = sub.add_parser("report", help="re-render a run summary")
    sp.add_argument("summary", help="run_summary.json or the directory holding it")
    sp.add_argument("--format", choices=("text", "json"), default="text")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except IsacError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
