"""Metric computation over an event trace, and CSV / plot-data emission."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

from .core import Scenario
from .engine import EventTrace
from .mac import AuditResult, audit_mac_trace
from .phy import CurrentProfile, RadioMode, radio_energy

SCHEMA_VERSION = 1


@dataclass
class EnergyRow:
    node: int
    tx_ms: int
    rx_ms: int
    sleep_ms: int
    tx_mj: float
    rx_mj: float
    sleep_mj: float

    @property
    def total_mj(self) -> float:
        return self.tx_mj + self.rx_mj + self.sleep_mj


@dataclass
class MetricsRecord:
    duration_s: float
    bucket_s: float
    generated: int = 0
    delivered: int = 0
    dropped: int = 0
    in_flight: int = 0
    drop_reasons: dict[str, int] = field(default_factory=dict)
    pdr_series: list[tuple[float, int, int]] = field(default_factory=list)
    dp_data_tx: int = 0
    dp_beacons: int = 0
    uplinks_by_kind: dict[str, int] = field(default_factory=dict)
    uplink_outcomes: dict[str, int] = field(default_factory=dict)
    downlink_attempts: dict[int, int] = field(default_factory=dict)
    downlink_received: dict[int, int] = field(default_factory=dict)
    delays: list[tuple[int, float]] = field(default_factory=list)  # (sf, seconds)
    energy: list[EnergyRow] = field(default_factory=list)
    retx_series: list[tuple[float, float, float, float, int, int]] = field(default_factory=list)
    retx_nodes: list[tuple[float, int, float, float, float]] = field(default_factory=list)
    clock_errors: list[tuple[float, int, float]] = field(default_factory=list)
    guard_violations: int = 0
    audit: AuditResult = field(default_factory=AuditResult)
    counters: dict[str, int] = field(default_factory=dict)

    # derived values -----------------------------------------------------
    @property
    def pdr(self) -> float | None:
        return self.delivered / self.generated if self.generated else None

    @property
    def dp_tx(self) -> int:
        return self.dp_data_tx + self.dp_beacons

    @property
    def cp_uplinks(self) -> int:
        return sum(self.uplinks_by_kind.values())

    @property
    def cp_ratio(self) -> float | None:
        return self.cp_uplinks / self.dp_tx if self.dp_tx else None

    def fdr(self, sf: int | None = None) -> float | None:
        if sf is None:
            att = sum(self.downlink_attempts.values())
            rec = sum(self.downlink_received.values())
        else:
            att = self.downlink_attempts.get(sf, 0)
            rec = self.downlink_received.get(sf, 0)
        return rec / att if att else None

    def mean_delay_s(self, sf: int | None = None) -> float | None:
        xs = [d for s, d in self.delays if sf is None or s == sf]
        return sum(xs) / len(xs) if xs else None

    def avg_power_mw(self) -> float | None:
        """Mean over nodes of the control-plane radio power."""
        if not self.energy:
            return None
        return sum(r.total_mj for r in self.energy) / len(self.energy) / self.duration_s

    def mean_abs_clock_error_ms(self) -> float | None:
        if not self.clock_errors:
            return None
        return sum(abs(e) for _, _, e in self.clock_errors) / len(self.clock_errors)

    def summary(self) -> dict[str, object]:
        return {
            "schema_version": SCHEMA_VERSION,
            "duration_s": self.duration_s,
            "generated": self.generated,
            "delivered": self.delivered,
            "dropped": self.dropped,
            "in_flight": self.in_flight,
            "pdr": self.pdr,
            "dp_data_tx": self.dp_data_tx,
            "dp_beacons": self.dp_beacons,
            "dp_tx": self.dp_tx,
            "cp_uplinks": self.cp_uplinks,
            "cp_uplink_ratio": self.cp_ratio,
            "downlinks_attempted": sum(self.downlink_attempts.values()),
            "downlinks_received": sum(self.downlink_received.values()),
            "fdr": self.fdr(),
            "mean_downlink_delay_s": self.mean_delay_s(),
            "avg_cp_power_mw": self.avg_power_mw(),
            "mean_abs_clock_error_ms": self.mean_abs_clock_error_ms(),
            "guard_violations": self.guard_violations,
            "unsolicited_downlinks": self.audit.unsolicited_downlinks,
            "overlapping_downlinks": self.audit.overlapping_downlinks,
            "tdma_overlaps": self.audit.tdma_overlaps,
            "tdma_overlaps_synced": self.audit.tdma_overlaps_synced,
            **{f"drop_{k}": v for k, v in sorted(self.drop_reasons.items())},
            **{f"uplink_{k.lower()}": v for k, v in sorted(self.uplink_outcomes.items())},
            **{f"count_{k}": v for k, v in sorted(self.counters.items())},
        }


def _finite_sum(values) -> float:
    return float(sum(v for v in values if math.isfinite(v)))


def compute_metrics(trace: EventTrace, scenario: Scenario) -> MetricsRecord:
    """Derive every metric from the trace alone (plus scenario constants)."""
    dur_s = trace.duration_ms / 1000.0
    bucket_ms = int(round(scenario.metrics.bucket_s * 1000))
    rec = MetricsRecord(duration_s=dur_s, bucket_s=scenario.metrics.bucket_s)

    rec.generated = len(trace.generated)
    rec.delivered = len(trace.delivered)
    rec.dropped = len(trace.dropped)
    rec.in_flight = rec.generated - rec.delivered - rec.dropped
    for _, _, _, reason in trace.dropped:
        rec.drop_reasons[reason] = rec.drop_reasons.get(reason, 0) + 1
    gen_gt = {(o, s): t for t, o, s in trace.generated}
    nb = max(1, math.ceil(trace.duration_ms / bucket_ms)) if trace.generated else 0
    g_b = [0] * nb
    d_b = [0] * nb
    for t, _, _ in trace.generated:
        g_b[min(nb - 1, t // bucket_ms)] += 1
    for _, o, s, _ in trace.delivered:
        d_b[min(nb - 1, gen_gt[(o, s)] // bucket_ms)] += 1
    rec.pdr_series = [(k * bucket_ms / 1000.0, g_b[k], d_b[k]) for k in range(nb)]

    for _, _, kind, attempts in trace.dp_tx:
        if kind == "beacon":
            rec.dp_beacons += attempts
        else:
            rec.dp_data_tx += attempts

    for r in trace.mac:
        if r.direction == "up":
            key = ("URGENT_" if r.urgent else "") + r.kind
            rec.uplinks_by_kind[key] = rec.uplinks_by_kind.get(key, 0) + 1
            rec.uplink_outcomes[r.outcome] = rec.uplink_outcomes.get(r.outcome, 0) + 1
    for d in trace.downlinks:
        rec.downlink_attempts[d.sf] = rec.downlink_attempts.get(d.sf, 0) + 1
        if d.outcome == "received":
            rec.downlink_received[d.sf] = rec.downlink_received.get(d.sf, 0) + 1
            rec.delays.append((d.sf, d.delay_ms / 1000.0))

    c = scenario.phy.currents
    profile = CurrentProfile(c.tx_current, c.rx_current, c.sleep_current, c.supply_voltage)
    for node in sorted(trace.radio):
        tx = sum(d for m, _, d in trace.radio[node] if m == "TX")
        rx = sum(d for m, _, d in trace.radio[node] if m == "RX")
        alive = trace.alive_ms.get(node, trace.duration_ms)
        sleep = max(0, alive - tx - rx)
        rec.energy.append(
            EnergyRow(
                node, tx, rx, sleep,
                radio_energy([(RadioMode.TX, tx)], profile),
                radio_energy([(RadioMode.RX, rx)], profile),
                radio_energy([(RadioMode.SLEEP, sleep)], profile),
            )
        )

    for s in trace.retx:
        t = s.t / 1000.0
        connected = [n for n in sorted(s.ground) if math.isfinite(s.ground[n])]
        rec.retx_series.append(
            (
                t,
                _finite_sum(s.belief[n] for n in connected),
                _finite_sum(s.ground[n] for n in connected),
                _finite_sum(s.optimal[n] for n in connected),
                len(s.ground) - len(connected),
                s.loops,
            )
        )
        for n in sorted(s.ground):
            rec.retx_nodes.append((t, n, s.belief[n], s.ground[n], s.optimal[n]))

    rec.clock_errors = [(t / 1000.0, n, e) for t, n, e in trace.clock]
    rec.guard_violations = trace.guard_violations
    rec.audit = audit_mac_trace(trace.mac, int(round(scenario.mac.wait_time_s * 1000)), scenario.mac.guard_s * 1000.0)
    rec.counters = dict(sorted(trace.counters.items()))
    return rec


# --------------------------------------------------------------------------
# output


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return f"{value:.6f}"
    return str(value)


def _write_csv(path: Path, header: list[str], rows) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _write_dat(path: Path, header: list[str], rows) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# " + " ".join(header) + "\n")
            for row in rows:
                fh.write(" ".join(fmt(v) if fmt(v) != "" else "NaN" for v in row) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


CSV_SCHEMAS = {
    "summary.csv": ["metric", "value"],
    "pdr.csv": ["t_s", "generated", "delivered", "pdr"],
    "fdr.csv": ["channel_sf", "attempted", "received", "fdr", "mean_delay_s"],
    "delays.csv": ["channel_sf", "delay_s"],
    "energy.csv": ["node", "tx_ms", "rx_ms", "sleep_ms", "tx_mj", "rx_mj", "sleep_mj", "total_mj", "avg_power_mw"],
    "retx.csv": ["t_s", "sum_retx", "sum_retx_g", "sum_retx_star", "disconnected", "loops"],
    "retx_nodes.csv": ["t_s", "node", "retx", "retx_g", "retx_star"],
    "uplinks.csv": ["kind", "count"],
    "clock.csv": ["t_s", "node", "error_ms"],
}


def emit_outputs(record: MetricsRecord, out_dir: str | Path) -> list[Path]:
    """Write one CSV per metric family plus gnuplot-ready ``.dat`` tables."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc}") from exc
    sfs = sorted(record.downlink_attempts)
    rows = {
        "summary.csv": list(record.summary().items()),
        "pdr.csv": [(t, g, d, d / g if g else None) for t, g, d in record.pdr_series],
        "fdr.csv": [
            (sf, record.downlink_attempts[sf], record.downlink_received.get(sf, 0), record.fdr(sf), record.mean_delay_s(sf))
            for sf in sfs
        ],
        "delays.csv": list(record.delays),
        "energy.csv": [
            (e.node, e.tx_ms, e.rx_ms, e.sleep_ms, e.tx_mj, e.rx_mj, e.sleep_mj, e.total_mj, e.total_mj / record.duration_s)
            for e in record.energy
        ],
        "retx.csv": list(record.retx_series),
        "retx_nodes.csv": list(record.retx_nodes),
        "uplinks.csv": sorted(record.uplinks_by_kind.items()),
        "clock.csv": list(record.clock_errors),
    }
    written = []
    for name, header in CSV_SCHEMAS.items():
        _write_csv(out / name, header, rows[name])
        written.append(out / name)
    plots = {
        "retx.dat": (["t_s", "sum_retx", "sum_retx_g", "sum_retx_star"], [r[:4] for r in record.retx_series]),
        "fdr_delay.dat": (["channel_sf", "fdr", "mean_delay_s"], [(sf, record.fdr(sf), record.mean_delay_s(sf)) for sf in sfs]),
        "pdr.dat": (["t_s", "pdr"], [(t, d / g if g else None) for t, g, d in record.pdr_series]),
        "energy.dat": (["node", "total_mj", "avg_power_mw"], [(e.node, e.total_mj, e.total_mj / record.duration_s) for e in record.energy]),
    }
    for name, (header, data) in plots.items():
        _write_dat(out / name, header, data)
        written.append(out / name)
    return written
