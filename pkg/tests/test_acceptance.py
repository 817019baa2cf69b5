"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines.
"""

import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor

import pytest
from oracles import ABSENT, bellman_ford, exhaustive_costs, graph_classes, random_graph, to_graph

from loracp import presets, run, validate_scenario
from loracp.cli import run_one
from loracp.controller import compute_min_tree
from loracp.core import rng_stream
from loracp.engine import Simulation
from loracp.metrics import CSV_SCHEMAS
from loracp.phy import RadioSpec, multihop_energy_ratio

SEEDS = 10
JOBS = min(8, os.cpu_count() or 1)


def report(n, ok, detail):
    print(f"\ncriterion {n:2d} {'PASS' if ok else 'FAIL'}: {detail}")
    return ok


def _pool_map(fn, items):
    if JOBS <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=JOBS) as ex:
        return list(ex.map(fn, items))


def _side(args):
    proto, sp, seed = args
    _, m = run(presets.side_by_side(proto, sp, seed=seed))
    return proto, sp, seed, m.pdr, m.avg_power_mw(), m.cp_ratio, m.audit.ok


@pytest.fixture(scope="module")
def side_runs():
    items = [(p, sp, s) for sp in presets.SIDE_BY_SIDE_SETPOINTS for p in ("ctp", "scdp") for s in range(SEEDS)]
    return _pool_map(_side, items)


def _mean(rows, idx):
    return statistics.fmean(r[idx] for r in rows)


# ----------------------------------------------------------------------


def test_c01_dijkstra_optimality():
    t = time.perf_counter()
    ok = True
    for seed in range(100):
        rng = rng_stream(seed, "graph")
        n = int(rng.integers(2, 9))
        edges = random_graph(rng, n)
        oracle = bellman_ford(n, 0, {k: v for k, v in edges.items() if v < 20.0})
        tree = compute_min_tree(to_graph(edges))
        ok &= all(tree.cost.get(v, math.inf) == oracle[v] for v in range(n))
    graphs = 0
    for n in range(2, 6):
        pairs, combos = graph_classes(n, [1.0, 2.0, 3.0, ABSENT])
        oracle = exhaustive_costs(n, pairs, combos)
        for g_idx, row in enumerate(combos):
            edges = {}
            for (a, b), c in zip(pairs, row):
                if c < ABSENT:
                    edges[(a, b)] = edges[(b, a)] = float(c)
            tree = compute_min_tree(to_graph(edges))
            ok &= all(tree.cost.get(v, math.inf) == oracle[v][g_idx] for v in range(1, n))
            graphs += 1
    dt = time.perf_counter() - t
    ok &= dt < 10.0
    assert report(1, ok, f"100 random graphs + {graphs} exhaustive graphs exact, {dt:.1f} s (< 10 s)")


def _replicate(proto):
    t = time.perf_counter()
    _, m = run(presets.replicate_sim(proto, seed=0, nodes=15, duration_s=1200.0))
    return m.retx_series, time.perf_counter() - t


def test_c02_optimality_dominance():
    lines, ok = [], True
    for proto in ("ctp", "scdp"):
        series, dt = _replicate(proto)
        dominated = sum(star <= ground + 1e-9 for _, _, ground, star, _, _ in series)
        gap = sum(ground - star > 0.5 for _, _, ground, star, _, _ in series)
        ok &= bool(series) and dominated == len(series) and dt < 120.0
        if proto == "ctp":
            ok &= gap > 0
        lines.append(f"{proto}: {dominated}/{len(series)} dominated, {gap} gaps > 0.5, {dt:.1f} s")
    assert report(2, ok, "15 nodes / 20 min; " + "; ".join(lines))


def test_c03_pdr_gap(side_runs):
    hi, lo = max(presets.SIDE_BY_SIDE_SETPOINTS), min(presets.SIDE_BY_SIDE_SETPOINTS)

    def gap(sp):
        scdp = [r for r in side_runs if r[0] == "scdp" and r[1] == sp]
        ctp = [r for r in side_runs if r[0] == "ctp" and r[1] == sp]
        return 100.0 * (_mean(scdp, 3) - _mean(ctp, 3)), _mean(ctp, 3), _mean(scdp, 3)

    g_hi, c_hi, s_hi = gap(hi)
    g_lo, _, _ = gap(lo)
    ok = g_hi >= 5.0 and abs(g_lo) <= 3.0
    assert report(3, ok, f"setpoint {hi:g}: CTP {c_hi:.3f} SCDP {s_hi:.3f} gap {g_hi:.1f} pts (>= 5); "
                         f"setpoint {lo:g}: gap {g_lo:+.1f} pts (within 3); {SEEDS} seeds")


def _pressure(args):
    p, seed = args
    _, m = run(presets.pressure(p, seed=seed))
    return p, seed, m.fdr(), m.mean_delay_s(), {sf: m.mean_delay_s(sf) for sf in (7, 8, 9)}


def test_c04_pressure():
    probs = [0.2, 0.4, 0.6, 0.8, 1.0]
    rows = _pool_map(_pressure, [(p, s) for p in probs for s in range(SEEDS)])
    fdr = [statistics.fmean(r[2] for r in rows if r[0] == p) for p in probs]
    monotone = all(b <= a + 0.02 for a, b in zip(fdr, fdr[1:]))
    delays = [r[3] for r in rows if r[3] is not None]
    mean_delay = statistics.fmean(delays)
    top = [r[4] for r in rows if r[0] == 1.0]
    per_sf = {sf: statistics.fmean(d[sf] for d in top if d[sf] is not None) for sf in (7, 8, 9)}
    ordered = per_sf[9] > per_sf[8] > per_sf[7]
    band = 3.0 <= mean_delay <= 5.5
    ok = monotone and band and ordered
    assert report(4, ok, f"FDR {' '.join(f'{x:.3f}' for x in fdr)} non-increasing={monotone}; "
                         f"mean delay {mean_delay:.2f} s in [3.0, 5.5]={band}; "
                         f"p=1 delay SF7 {per_sf[7]:.2f} SF8 {per_sf[8]:.2f} SF9 {per_sf[9]:.2f} "
                         f"SF9>SF8>SF7={ordered}")


def test_c05_mac_safety(side_runs):
    scenarios = [
        presets.pressure(1.0, seed=1, duration_s=1800.0),
        presets.pressure(0.4, seed=2, duration_s=1800.0),
        presets.clock_sync(seed=1, duration_s=1800.0),
        presets.clock_sync(seed=2, heartbeat_period=4, duration_s=1800.0, fixed_drift=True),
        presets.nak_script(seed=1),
        presets.side_by_side("scdp", 90.0, seed=1, duration_s=1800.0),
    ]
    bad = []
    for raw in scenarios:
        _, m = run(raw)
        a = m.audit
        if not a.ok:
            bad.append((raw["name"], a.unsolicited_downlinks, a.overlapping_downlinks, a.tdma_overlaps_synced))
    side_bad = sum(not r[6] for r in side_runs)
    ok = not bad and side_bad == 0
    assert report(5, ok, f"{len(scenarios) + len(side_runs)} traces audited; violations {bad or 'none'}, "
                         f"side-by-side failures {side_bad}")


def _nak_trial(seed):
    sim = Simulation(validate_scenario(presets.nak_script(seed=seed)))
    tr = sim.run()
    node, rot = 2, 4
    lost = [r for r in tr.mac if r.direction == "up" and r.node == node and not r.urgent and r.outcome == "LOST"]
    if not lost:
        return False
    deadline = sim.schedule_tdma.slot_start(node, rot + 2)
    rec = [x for x in tr.nak_recoveries if x["node"] == node and x["lost"] == lost[0].counter]
    return bool(rec) and rec[0]["t"] < deadline


def test_c06_nak_recovery():
    n = 1000
    ok_count = sum(_pool_map(_nak_trial, range(n)))
    rate = ok_count / n
    assert report(6, rate >= 0.99, f"recovered before the second later slot in {ok_count}/{n} seeds ({rate:.1%}, >= 99%)")


def _clock(seed):
    _, m = run(presets.clock_sync(seed=seed, drift_ppm=50.0, heartbeat_period=10))
    return m.mean_abs_clock_error_ms(), m.guard_violations


def test_c07_clock_sync():
    rows = _pool_map(_clock, range(SEEDS))
    mean_err = statistics.fmean(r[0] for r in rows)
    _, fixed = run(presets.clock_sync(seed=0, drift_ppm=50.0, heartbeat_period=10, duration_s=3600.0, fixed_drift=True))
    violations = fixed.guard_violations + sum(r[1] for r in rows)
    ok = 1.5 <= mean_err <= 4.5 and violations == 0
    assert report(7, ok, f"mean |error| {mean_err:.2f} ms in [1.5, 4.5] (sigma 1.7 ms, H=10); "
                         f"guard violations over 1 h at 50 ppm: {violations}")


def test_c08_energy(side_runs):
    sps = sorted(presets.SIDE_BY_SIDE_SETPOINTS)
    power = [_mean([r for r in side_runs if r[0] == "scdp" and r[1] == sp], 4) for sp in sps]
    ratios = [r[5] for r in side_runs if r[0] == "scdp"]
    ratio = statistics.fmean(ratios)
    ok = (0.3 <= power[0] <= 2.5 and all(b > a for a, b in zip(power, power[1:])) and power[-1] < 6.0
          and 0.04 <= ratio <= 0.09)
    assert report(8, ok, "power mW " + " ".join(f"{sp:g}:{p:.3f}" for sp, p in zip(sps, power))
                  + f" (first in [0.3, 2.5], strictly increasing, last < 6); cp/dp ratio {ratio:.3f} in [0.04, 0.09]")


def test_c09_energy_ratio():
    lora = RadioSpec(p_tx=38.9 * 3.3, p_rx=14.2 * 3.3, rate_bps=11_000, hop_range_m=1000)
    zigbee = RadioSpec(p_tx=19.5 * 3.3, p_rx=18.8 * 3.3, rate_bps=250_000, hop_range_m=100)
    r = multihop_energy_ratio(lora, zigbee, 1000.0)
    assert report(9, abs(r - 2.94) <= 0.4, f"ratio {r:.3f} (2.94 +/- 0.4)")


def test_c10_determinism(tmp_path):
    raws = [presets.side_by_side("scdp", 80.0, seed=7, duration_s=900.0),
            presets.pressure(0.6, seed=7, duration_s=900.0),
            presets.replicate_sim("ctp", seed=7, nodes=15, duration_s=600.0)]
    diffs = []
    for i, raw in enumerate(raws):
        run_one(raw, tmp_path / f"{i}a")
        run_one(raw, tmp_path / f"{i}b")
        diffs += [f"{i}/{name}" for name in CSV_SCHEMAS
                  if (tmp_path / f"{i}a" / name).read_bytes() != (tmp_path / f"{i}b" / name).read_bytes()]
    assert report(10, not diffs, f"{len(raws)} scenarios x {len(CSV_SCHEMAS)} CSVs byte-identical; differing: {diffs or 'none'}")
