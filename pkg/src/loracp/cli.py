"""Command-line entry point: single runs and the canned study sweeps."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import presets
from .core import ScenarioError, load_scenario, run_manifest, validate_scenario
from .engine import Simulation
from .metrics import compute_metrics, emit_outputs, fmt


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(v):
    if dataclasses.is_dataclass(v):
        return {k: _jsonable(x) for k, x in dataclasses.asdict(v).items()}
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, set)):
        return [_jsonable(x) for x in v]
    if isinstance(v, float) and v != v:
        return None
    if isinstance(v, float) and v in (float("inf"), float("-inf")):
        return str(v)
    if hasattr(v, "value"):
        return v.value
    return v


def write_trace(trace, path: Path) -> None:
    """Dump the event trace as JSON lines, one record per line."""
    streams = [
        ("mac", trace.mac), ("downlink", trace.downlinks), ("dp_tx", trace.dp_tx),
        ("generated", trace.generated), ("delivered", trace.delivered), ("dropped", trace.dropped),
        ("lifecycle", trace.lifecycle), ("controller", trace.controller_log),
        ("nak_recovery", trace.nak_recoveries),
    ]
    with open(path, "w", encoding="utf-8") as fh:
        for name, items in streams:
            for item in items:
                fh.write(json.dumps({"stream": name, "record": _jsonable(item)}, sort_keys=True) + "\n")


def node_snapshot(sim: Simulation) -> dict:
    """Final per-node routing and MAC state, for debugging."""
    out = {}
    for n in sim.node_ids:
        st = sim.ctp.get(n)
        entry = {"alive": sim.alive[n]}
        if st is not None:
            entry["parent"] = st.parent
            entry["retx"] = st.retx
            entry["neighbors"] = {j: e.etx_estimate for j, e in sorted(st.neighbors.items())}
        if n in getattr(sim, "clocks", {}):
            entry["clock_error_ms"] = sim.clocks[n].error(sim.now)
        out[n] = entry
    return _jsonable(out)


def run_one(raw, out_dir: Path | None = None, trace: bool = False, snapshot: bool = False):
    scn = validate_scenario(raw)
    sim = Simulation(scn)
    tr = sim.run()
    record = compute_metrics(tr, scn)
    if out_dir is not None:
        emit_outputs(record, out_dir)
        _write_json(out_dir / "manifest.json", run_manifest(scn))
        if trace:
            write_trace(tr, out_dir / "trace.jsonl")
        if snapshot:
            _write_json(out_dir / "nodes.json", node_snapshot(sim))
    return scn, record


def _write_rows(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def _batch(jobs: int, fn, items):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# ----------------------------------------------------------------------
# sweep workers (module level so they pickle)


def _pressure_job(args):
    p, seed, q, duration, out = args
    _, m = run_one(presets.pressure(p, seed, duration, q), out)
    return (p, seed, m.fdr(), m.mean_delay_s(), m.mean_delay_s(7), m.mean_delay_s(8), m.mean_delay_s(9))


def _side_job(args):
    proto, sp, seed, hb, duration, out = args
    _, m = run_one(presets.side_by_side(proto, sp, seed, duration, hb), out)
    return (sp, proto, hb, seed, m.pdr, m.avg_power_mw(), m.cp_uplinks, m.dp_tx, m.cp_ratio)


def _clock_job(args):
    ppm, hb, seed, duration, out = args
    _, m = run_one(presets.clock_sync(seed, ppm, hb, duration), out)
    return (ppm, hb, seed, m.mean_abs_clock_error_ms(), m.guard_violations)


def _replicate_job(args):
    proto, seed, nodes, duration, out = args
    _, m = run_one(presets.replicate_sim(proto, seed, nodes, duration), out)
    dominated = sum(1 for r in m.retx_series if r[3] <= r[2] + 1e-9)
    worst = max((r[2] - r[3] for r in m.retx_series), default=0.0)
    return (proto, seed, nodes, m.pdr, len(m.retx_series), dominated, worst)


def _subdir(base: Path, per_run: bool, *parts) -> Path | None:
    if not per_run:
        return None
    return base.joinpath(*[str(p) for p in parts])


# ----------------------------------------------------------------------
# commands


def cmd_run(a) -> int:
    raw = load_scenario(a.scenario)
    if a.seed is not None:
        raw.seed = a.seed
    scn, rec = run_one(raw, Path(a.out), trace=a.trace, snapshot=a.dump_state)
    for k, v in rec.summary().items():
        print(f"{k}: {fmt(v)}")
    return 0


def cmd_pressure(a) -> int:
    out = Path(a.out)
    items = [(p, s, a.queue_capacity, a.duration, _subdir(out, a.per_run, f"p{p:g}", f"seed{s}"))
             for p in a.probabilities for s in range(a.seeds)]
    rows = _batch(a.jobs, _pressure_job, items)
    _write_rows(out / "pressure.csv", ["reply_probability", "seed", "fdr", "mean_delay_s",
                                       "delay_sf7_s", "delay_sf8_s", "delay_sf9_s"], rows)
    for p in a.probabilities:
        sel = [r for r in rows if r[0] == p]
        fdrs = [r[2] for r in sel if r[2] is not None]
        dls = [r[3] for r in sel if r[3] is not None]
        print(f"p={p:g} fdr={fmt(statistics.fmean(fdrs)) if fdrs else '-'} "
              f"delay_s={fmt(statistics.fmean(dls)) if dls else '-'}")
    return 0


def cmd_side_by_side(a) -> int:
    out = Path(a.out)
    items = [(proto, sp, s, a.heartbeat_period, a.duration, _subdir(out, a.per_run, proto, f"sp{sp:g}", f"seed{s}"))
             for sp in a.setpoints for proto in ("ctp", "scdp") for s in range(a.seeds)]
    rows = _batch(a.jobs, _side_job, items)
    _write_rows(out / "side_by_side.csv", ["setpoint", "protocol", "heartbeat_period", "seed", "pdr",
                                           "cp_power_mw", "cp_uplinks", "dp_tx", "cp_ratio"], rows)
    for sp in a.setpoints:
        line = [f"setpoint={sp:g}"]
        for proto in ("ctp", "scdp"):
            pdrs = [r[4] for r in rows if r[0] == sp and r[1] == proto and r[4] is not None]
            line.append(f"pdr_{proto}={fmt(statistics.fmean(pdrs)) if pdrs else '-'}")
        print(" ".join(line))
    return 0


def cmd_interference(a) -> int:
    """Control-plane power and clock error against interference and heartbeat period."""
    out = Path(a.out)
    items = [("scdp", sp, s, hb, a.duration, _subdir(out, a.per_run, f"sp{sp:g}", f"h{hb}", f"seed{s}"))
             for sp in a.setpoints for hb in a.heartbeat_periods for s in range(a.seeds)]
    rows = _batch(a.jobs, _side_job, items)
    _write_rows(out / "energy.csv", ["setpoint", "protocol", "heartbeat_period", "seed", "pdr",
                                     "cp_power_mw", "cp_uplinks", "dp_tx", "cp_ratio"], rows)
    clock_items = [(a.drift_ppm, hb, s, a.duration, None) for hb in a.heartbeat_periods for s in range(a.seeds)]
    crows = _batch(a.jobs, _clock_job, clock_items)
    _write_rows(out / "clock.csv", ["drift_ppm", "heartbeat_period", "seed", "mean_abs_error_ms", "guard_violations"], crows)
    with open(out / "energy.dat", "w", encoding="utf-8") as fh:
        fh.write("# setpoint mean_mw min_mw max_mw\n")
        for sp in a.setpoints:
            vals = [r[5] for r in rows if r[0] == sp and r[5] is not None]
            if vals:
                fh.write(f"{fmt(float(sp))} {fmt(statistics.fmean(vals))} {fmt(min(vals))} {fmt(max(vals))}\n")
    for sp in a.setpoints:
        vals = [r[5] for r in rows if r[0] == sp and r[5] is not None]
        print(f"setpoint={sp:g} cp_power_mw={fmt(statistics.fmean(vals)) if vals else '-'}")
    return 0


def cmd_replicate(a) -> int:
    out = Path(a.out)
    items = [(proto, s, a.nodes, a.duration, out / proto / f"seed{s}") for proto in ("ctp", "scdp") for s in range(a.seeds)]
    rows = _batch(a.jobs, _replicate_job, items)
    _write_rows(out / "replicate.csv", ["protocol", "seed", "nodes", "pdr", "samples", "samples_dominated",
                                        "max_retx_g_minus_star"], rows)
    for r in rows:
        print(f"{r[0]} seed={r[1]} pdr={fmt(r[3])} dominated={r[5]}/{r[4]} max_gap={fmt(r[6])}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="loracp", description="SDN-style control plane over LoRa: simulator and studies")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="run one scenario file")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", action="store_true", help="also write trace.jsonl")
    p.add_argument("--dump-state", action="store_true", help="also write final per-node state to nodes.json")
    p.set_defaults(fn=cmd_run)

    def common(sp, duration):
        sp.add_argument("--seeds", type=int, default=3)
        sp.add_argument("--duration", type=float, default=duration)
        sp.add_argument("--out", required=True)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--per-run", action="store_true", help="keep each run's CSVs in a subdirectory")

    p = sub.add_parser("pressure", help="downlink pressure test over reply probabilities")
    p.add_argument("--probabilities", type=float, nargs="+", default=[0.2, 0.4, 0.6, 0.8, 1.0])
    p.add_argument("--queue-capacity", type=int, default=presets.PRESSURE_QUEUE_CAPACITY)
    common(p, 3600.0)
    p.set_defaults(fn=cmd_pressure)

    p = sub.add_parser("interference", help="control-plane power and clock error sweep")
    p.add_argument("--setpoints", type=float, nargs="+", default=list(presets.SIDE_BY_SIDE_SETPOINTS))
    p.add_argument("--heartbeat-periods", type=int, nargs="+", default=[4, 10])
    p.add_argument("--drift-ppm", type=float, default=50.0)
    common(p, 3600.0)
    p.set_defaults(fn=cmd_interference)

    p = sub.add_parser("side-by-side", help="CTP against CTP-SCDP under interference setpoints")
    p.add_argument("--setpoints", type=float, nargs="+", default=list(presets.SIDE_BY_SIDE_SETPOINTS))
    p.add_argument("--heartbeat-period", type=int, default=10)
    common(p, 3600.0)
    p.set_defaults(fn=cmd_side_by_side)

    p = sub.add_parser("replicate-sim", help="route-cost study on a random deployment")
    p.add_argument("--nodes", type=int, default=60)
    common(p, 7200.0)
    p.set_defaults(seeds=1)
    p.set_defaults(fn=cmd_replicate)
    return ap


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return a.fn(a)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(str(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
