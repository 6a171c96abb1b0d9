"""``auvsim`` command line: run, validate, bench, convert.

Exit codes: 0 success (mission done or duration reached), 1 failed
validation, 2 mission aborted, 3 grounding or non-finite state,
64 bad configuration or input.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import sys
from pathlib import Path

from .schema import ConfigError

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ABORTED = 2
EXIT_SIM_ERROR = 3
EXIT_USAGE = 64

log = logging.getLogger("auvsim")


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="auvsim", description="Faster-than-real-time multi-AUV simulator")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file (or a bundled scenario name)")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--dt", type=float, help="physics step in seconds (control period reset to auto)")
    r.add_argument("--duration", type=float)
    r.add_argument("--trace-out")
    r.add_argument("--summary-out")
    r.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    r.add_argument("--realtime", action="store_true", help="pace the loop to wall-clock time")

    v = sub.add_parser("validate", help="run the invariant suite")
    v.add_argument("--vehicle", default="reference", help="vehicle TOML (default: bundled reference)")
    v.add_argument("--only", action="append", help="run only the named check (repeatable)")
    v.add_argument("--csv", help="write the result table as CSV")

    b = sub.add_parser("bench", help="RTF sweep over vehicle counts and physics steps")
    b.add_argument("scenario", nargs="?", default="yoyo")
    b.add_argument("--counts", type=_int_list, default=[1, 2, 4, 8])
    b.add_argument("--dts", type=_float_list, default=[0.01, 0.02, 0.03])
    b.add_argument("--duration", type=float, default=300.0)
    b.add_argument("--repeats", type=int, default=1)
    b.add_argument("--out", help="CSV output path")

    c = sub.add_parser("convert", help="ESRI ASCII grid -> tileset, or env CSV -> normalised env CSV")
    c.add_argument("input")
    c.add_argument("output")
    c.add_argument("--kind", choices=["auto", "ascii", "env"], default="auto")
    c.add_argument("--tile-cells", type=int, default=256)
    c.add_argument("--projection", type=_float_list, help="lat0,lon0 for lat/lon env files")
    return ap


# -- run ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    from .engine import run
    from .mission import export_transitions
    from .scenario import build_world, exit_code, load_scenario, summarize

    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"world.seed={args.seed}")
    if args.dt is not None:
        overrides.append(f"run.physics_dt={args.dt}")
        if not any(o.startswith("run.control_period") for o in args.overrides):
            overrides.append("run.control_period=0.0")
    if args.duration is not None:
        overrides.append(f"run.duration={args.duration}")
    if args.trace_out:
        overrides.append(f"run.trace_out={json.dumps(args.trace_out)}")
    if args.summary_out:
        overrides.append(f"run.summary_out={json.dumps(args.summary_out)}")
    if args.realtime:
        overrides.append("run.realtime=true")
    loaded = load_scenario(args.config, overrides)
    rc = loaded.config.run
    world = build_world(loaded, trace=bool(rc.trace_out))
    result = run(world, rc.duration, rc.stop_when_terminal, rc.realtime)
    summary = summarize(loaded, result)

    if rc.trace_out:
        result.trace.export(rc.trace_out)
    if rc.transitions_out:
        export_transitions([t for v in world.vehicles for t in v.mission.transitions], rc.transitions_out)
    if rc.homing_out:
        for v in world.vehicles:
            if hasattr(v.mission, "export_homing"):
                v.mission.export_homing(rc.homing_out)
    if rc.channel_log:
        world.channel.export_log(rc.channel_log)
    text = json.dumps(summary, indent=2, default=_json_default)
    if rc.summary_out:
        Path(rc.summary_out).write_text(text + "\n")
    brief = {k: summary[k] for k in ("scenario", "exit_code", "sim_time", "phases", "abort_reasons",
                                      "min_range", "rtf", "error")}
    print(json.dumps(brief, indent=2, default=_json_default))
    return exit_code(result)


def _json_default(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


# -- validate ------------------------------------------------------------------------

def cmd_validate(args) -> int:
    import csv

    from .validation import CHECKS, run_suite
    from .vehicle import load_vehicle

    params = load_vehicle(args.vehicle, strict=False)
    bad = params.violations()
    for msg in bad:
        print(f"warning: {msg}")
    if args.only:
        unknown = sorted(set(args.only) - set(CHECKS))
        if unknown:
            raise ConfigError(f"unknown check(s) {unknown}; available: {sorted(CHECKS)}")
    results = run_suite(params, args.only)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.seconds:7.2f}s  {r.detail}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["check", "passed", "seconds", "detail"])
            for r in results:
                w.writerow([r.name, r.passed, f"{r.seconds:.3f}", r.detail])
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_FAILED if failed else EXIT_OK


# -- bench ---------------------------------------------------------------------------

def replicate(loaded, n: int, dt: float, spacing: float = 500.0):
    """Copy of ``loaded`` with every vehicle repeated ``n`` times, offset along x."""
    from .scenario import LoadedScenario

    cfg = copy.deepcopy(loaded.config)
    if any(v.mission == "hotbunk" for v in cfg.vehicles):
        raise ConfigError("bench replicates vehicles and cannot use a hot-bunk scenario")
    vehicles = []
    for k in range(n):
        for v in loaded.config.vehicles:
            c = copy.deepcopy(v)
            c.id = f"{v.id}{k}"
            c.position = (v.position[0] + k * spacing, v.position[1], v.position[2])
            vehicles.append(c)
    cfg.vehicles = vehicles
    cfg.run.physics_dt = dt
    cfg.run.control_period = 0.0
    return LoadedScenario(cfg, loaded.data, loaded.base)


def cmd_bench(args) -> int:
    from .engine import rtf_slope, rtf_sweep, write_rtf_csv
    from .scenario import build_world, load_scenario

    loaded = load_scenario(args.scenario)
    if args.duration <= 0:
        raise ConfigError("bench --duration must be > 0")
    reports = rtf_sweep(lambda n, dt: build_world(replicate(loaded, n, dt)), args.counts, args.dts,
                        args.duration, args.repeats)
    print(f"{'vehicles':>8} {'dt':>6} {'sim_s':>8} {'wall_s':>8} {'rtf':>9}")
    for r in reports:
        print(f"{r.n_vehicles:>8} {r.physics_dt:>6.3f} {r.sim_seconds:>8.1f} {r.wall_seconds:>8.3f} "
              f"{r.rtf if r.rtf is not None else float('nan'):>9.1f}")
    for dt in args.dts:
        cell = [r for r in reports if r.physics_dt == dt]
        if len(cell) > 1:
            print(f"dt={dt}: log-log slope of rtf vs vehicles {rtf_slope(cell):.3f}")
    if args.out:
        write_rtf_csv(reports, args.out)
    return EXIT_OK


# -- convert -------------------------------------------------------------------------

def cmd_convert(args) -> int:
    from .bathymetry import BathymetryError, ascii_to_tiles
    from .envgrid import EnvGridError, Equirectangular, export_env, load_env

    src = Path(args.input)
    if not src.exists():
        raise ConfigError("input not found", src)
    if src.stat().st_size == 0 or not src.read_text().strip():
        raise ConfigError("empty input", src)
    kind = args.kind
    if kind == "auto":
        kind = "ascii" if src.suffix.lower() in (".asc", ".txt", ".grd") else "env"
    try:
        if kind == "ascii":
            manifest = ascii_to_tiles(src, args.output, args.tile_cells)
            print(f"wrote {manifest}")
        else:
            proj = Equirectangular(*args.projection) if args.projection else None
            grid = load_env(src, proj)
            n = export_env(grid, args.output)
            print(f"wrote {n} samples of '{grid.field_name}' on a {'x'.join(map(str, grid.shape))} grid")
    except (BathymetryError, EnvGridError) as exc:
        raise ConfigError(str(exc)) from exc
    return EXIT_OK


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "bench": cmd_bench, "convert": cmd_convert}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
