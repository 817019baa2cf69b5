"""Deterministic discrete-event simulation of a data-plane network and its LoRa control plane.

Events live on a heap keyed by ``(fire_at, sequence)`` with integer
millisecond times.  Every random decision draws from a labelled stream
derived from the scenario seed, so a run is a pure function of the
scenario.
"""

from __future__ import annotations

import copy
import dataclasses
import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from . import ctp
from .clock import DriftingClock, LatencyTable, apply_offset, apply_rate_feedback, estimate_offset, timestamp_noise
from .controller import Controller, TopologyGraph, compute_min_tree, ground_truth_retx
from .core import UPLINK, Frame, FrameCounters, FrameKind, NodeId, Scenario, rng_stream, validate_scenario
from .mac import (
    GatewayState,
    NodeMacState,
    QueuedDownlink,
    SlotAction,
    TxRecord,
    UrgentState,
    build_schedule,
    detect_gap,
    gateway_on_uplink,
    node_slot_action,
    urgent_backoff_ms,
)
from .phy import (
    CurrentProfile,
    EtxModel,
    LinkField,
    LinkState,
    LoraLossModel,
    LoraPhyParams,
    interference_sigma,
    link_snr,
    log_distance_gain,
    lora_airtime,
    prr_from_snr,
    symbol_time_ms,
)

MAX_EVENTS = 10**8

# event kinds
INTERFERENCE_STEP = "INTERFERENCE_STEP"
BEACON_TIMER = "BEACON_TIMER"
DATA_GEN = "DATA_GEN"
SLOT_START = "SLOT_START"
TX_END = "TX_END"
RX_WINDOW = "RX_WINDOW"
RX_CLOSE = "RX_CLOSE"
URGENT_TX = "URGENT_TX"
URGENT_GEN = "URGENT_GEN"
RECOMPUTE = "RECOMPUTE"
LIVENESS_CHECK = "LIVENESS_CHECK"
NODE_FAIL = "NODE_FAIL"
METRICS_SAMPLE = "METRICS_SAMPLE"


class SimulationError(RuntimeError):
    """Internal invariant violation; the run is aborted."""


@dataclass
class DownlinkOutcome:
    t: int
    node: NodeId
    sf: int
    kind: str  # "command", "reply", "nak", or "control" for sync/ack-only frames
    outcome: str  # "received", "lost", "dropped", "overflow"
    delay_ms: int | None = None


@dataclass
class RetxSample:
    t: int
    belief: dict[NodeId, float]
    ground: dict[NodeId, float]
    optimal: dict[NodeId, float]
    loops: int = 0


@dataclass
class EventTrace:
    """Append-only record of what happened in one run."""

    duration_ms: int
    nodes: list[NodeId]
    root: NodeId
    generated: list[tuple[int, NodeId, int]] = field(default_factory=list)
    delivered: list[tuple[int, NodeId, int, int]] = field(default_factory=list)
    dropped: list[tuple[int, NodeId, int, str]] = field(default_factory=list)
    dp_tx: list[tuple[int, NodeId, str, int]] = field(default_factory=list)
    mac: list[TxRecord] = field(default_factory=list)
    downlinks: list[DownlinkOutcome] = field(default_factory=list)
    radio: dict[NodeId, list[tuple[str, int, int]]] = field(default_factory=dict)
    alive_ms: dict[NodeId, int] = field(default_factory=dict)
    retx: list[RetxSample] = field(default_factory=list)
    clock: list[tuple[int, NodeId, float]] = field(default_factory=list)
    guard_violations: int = 0
    controller_log: list[dict] = field(default_factory=list)
    lifecycle: list[tuple[int, NodeId, str]] = field(default_factory=list)
    report_latency: list[tuple[NodeId, int]] = field(default_factory=list)
    nak_recoveries: list[dict] = field(default_factory=list)
    intensity: list[tuple[int, float]] = field(default_factory=list)
    events: list[tuple[int, str, object]] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=dict)

    def bump(self, key: str, n: int = 1) -> None:
        self.counters[key] = self.counters.get(key, 0) + n


def _break_cycles(parents: dict[NodeId, NodeId | None]) -> tuple[dict[NodeId, NodeId | None], set[NodeId]]:
    """Cut parent cycles so ground-truth evaluation can proceed; returns loop members."""
    state: dict[NodeId, int] = {}
    in_loop: set[NodeId] = set()
    for start in sorted(parents):
        path = []
        cur = start
        while cur is not None and cur in parents and state.get(cur, 0) == 0:
            state[cur] = 1
            path.append(cur)
            cur = parents[cur]
        if cur is not None and state.get(cur) == 1:
            k = path.index(cur)
            in_loop.update(path[k:])
        for n in path:
            state[n] = 2
    cut = {n: (None if n in in_loop else p) for n, p in parents.items()}
    return cut, in_loop


class Simulation:
    def __init__(self, scenario: Scenario):
        scn = scenario
        self.scn = scn
        self.seed = scn.seed
        self.end = int(round(scn.duration_s * 1000))
        self.root = scn.root.id
        self.node_ids = [n.id for n in scn.nodes]
        self.pos = {self.root: scn.root.position, **{n.id: n.position for n in scn.nodes}}
        self.alive = {n: True for n in self.node_ids}
        self.alive[self.root] = True
        self.trace = EventTrace(self.end, list(self.node_ids), self.root)
        self._heap: list = []
        self._seq = 0
        self._events = 0
        self.now = 0

        self.rng = {
            label: rng_stream(scn.seed, label)
            for label in (
                "topology", "interference", "links", "beacon", "forward", "dataphase",
                "lora-loss", "aloha", "workload", "clock-noise", "wake", "urgent-gen",
            )
        }
        self.dp_enabled = scn.protocol in ("ctp", "scdp") and bool(self.node_ids)
        self.cp = scn.control_plane if self.node_ids else "none"
        self.currents = CurrentProfile(**dataclasses.asdict(scn.phy.currents))
        self._record_events = scn.metrics.trace_events
        self._setup_dataplane()
        self._setup_controlplane()

    # ------------------------------------------------------------------
    # plumbing

    def schedule(self, at: int, kind: str, *args) -> None:
        at = int(at)
        if at < self.now:
            raise SimulationError(f"{kind} scheduled in the past ({at} < {self.now})")
        self._seq += 1
        heapq.heappush(self._heap, (at, self._seq, kind, args))

    def run(self) -> EventTrace:
        handlers = {
            INTERFERENCE_STEP: self._on_interference,
            BEACON_TIMER: self._on_beacon,
            DATA_GEN: self._on_data,
            SLOT_START: self._on_slot,
            TX_END: self._on_tx_end,
            RX_WINDOW: self._on_rx_window,
            RX_CLOSE: self._on_rx_close,
            URGENT_TX: self._on_urgent_tx,
            URGENT_GEN: self._on_urgent_gen,
            RECOMPUTE: self._on_recompute,
            LIVENESS_CHECK: self._on_liveness,
            NODE_FAIL: self._on_fail,
            METRICS_SAMPLE: self._on_sample,
        }
        while self._heap:
            at, _, kind, args = heapq.heappop(self._heap)
            if at >= self.end:
                break
            self._events += 1
            if self._events > MAX_EVENTS:
                raise SimulationError("event budget exceeded")
            self.now = at
            if self._record_events:
                self.trace.events.append((at, kind, args[0] if args else None))
            handlers[kind](*args)
        self.now = self.end
        self._finish()
        return self.trace

    # ------------------------------------------------------------------
    # data plane setup

    def _setup_dataplane(self) -> None:
        scn, dp = self.scn, self.scn.dataplane
        self.etx_max = scn.ctp.etx_max
        self.model = EtxModel(
            tx_power_dbm=dp.tx_power_dbm,
            snr50_db=dp.snr50_db,
            snr_width_db=dp.snr_width_db,
            interference_k_db=dp.interference_k_db,
            fluct_base_sd_db=dp.fluct_base_sd_db,
            fluct_per_unit_db=dp.fluct_per_unit_db,
            fluct_tau_s=dp.fluct_tau_s,
            etx_max=self.etx_max,
        )
        self.neighbors: dict[NodeId, list[NodeId]] = {n: [] for n in [self.root, *self.node_ids]}
        links: list[LinkState] = []
        if self.dp_enabled:
            rng = self.rng["topology"]
            ids = sorted([self.root, *self.node_ids])
            src = scn.interference.source
            for ai, a in enumerate(ids):
                for b in ids[ai + 1:]:
                    (xa, ya), (xb, yb) = self.pos[a], self.pos[b]
                    d = math.hypot(xa - xb, ya - yb)
                    gain = log_distance_gain(d, dp.pl_d0_db, dp.path_loss_exponent)
                    gain += dp.shadowing_sigma_db * rng.standard_normal()
                    snr = link_snr(gain, dp.noise_floor_dbm, 0.0, 0.0, 0.0, self.model)
                    if prr_from_snr(snr, self.model) < dp.min_link_prr:
                        continue
                    if src is None:
                        coupling = 1.0
                    else:
                        mx, my = (xa + xb) / 2, (ya + yb) / 2
                        dist = math.hypot(mx - src[0], my - src[1])
                        fl = scn.interference.coupling_floor
                        coupling = fl + (1.0 - fl) * math.exp(-dist / scn.interference.coupling_range_m)
                    links.append(LinkState((a, b), gain, dp.noise_floor_dbm, coupling=coupling))
                    self.neighbors[a].append(b)
                    self.neighbors[b].append(a)
        self.field = LinkField(links, self.model)
        self.ctp: dict[NodeId, ctp.CtpNodeState] = {}
        self.commanded: dict[NodeId, bool] = {}
        self.data_seq: dict[NodeId, int] = {}
        self.last_reported: dict[NodeId, dict[NodeId, float]] = {}
        self.dirty: dict[NodeId, dict[NodeId, float]] = {}
        self.staleness_ms = int(scn.ctp.staleness_beacons * scn.ctp.beacon_interval_s * 1000 * (1 + scn.ctp.beacon_jitter))
        if not self.dp_enabled:
            return
        for n in [self.root, *self.node_ids]:
            self.ctp[n] = ctp.CtpNodeState(id=n, is_root=(n == self.root), beacon_interval=scn.ctp.beacon_interval_s)
            self.commanded[n] = False
            self.last_reported[n] = {}
            self.dirty[n] = {}
        self.schedule(0, INTERFERENCE_STEP)
        brng, drng = self.rng["beacon"], self.rng["dataphase"]
        for n in [self.root, *self.node_ids]:
            self.schedule(1 + int(brng.random() * scn.ctp.beacon_interval_s * 1000), BEACON_TIMER, n)
        for nc in scn.nodes:
            self.data_seq[nc.id] = 0
            self.schedule(1 + int(drng.random() * nc.data_period_s * 1000), DATA_GEN, nc.id)
        bucket = int(round(scn.metrics.bucket_s * 1000))
        self.schedule(bucket, METRICS_SAMPLE)

    # ------------------------------------------------------------------
    # control plane setup

    def _setup_controlplane(self) -> None:
        scn = self.scn
        self.controller: Controller | None = None
        if scn.protocol == "scdp" or self.cp == "loracp":
            self.controller = Controller(
                self.root, self.etx_max, scn.controller.recompute_threshold, active=(scn.protocol == "scdp")
            )
        self.recompute_pending = False
        self.wait_ms = int(round(scn.mac.wait_time_s * 1000))
        for f in scn.failures:
            self.schedule(int(round(f.at_s * 1000)), NODE_FAIL, f.node)
        if self.cp != "loracp":
            return
        params = LoraPhyParams(bandwidth=scn.phy.bandwidth, preamble_symbols=scn.phy.preamble_symbols)
        self.phy_params = params
        self.latency = LatencyTable(params)
        self.loss = LoraLossModel.from_config(scn.phy.loss_table)
        chmap = scn.channel_map()
        self.urgent_sf = scn.urgent_channel().sf
        self.schedule_tdma = build_schedule(
            {n.id: n.tdma_sf for n in scn.nodes},
            {sf: ch.slot_length_s for sf, ch in chmap.items() if ch.slot_length_s is not None},
            scn.mac.heartbeat_period,
        )
        gx, gy = scn.controller_position()
        self.gw_dist = {n.id: math.hypot(n.position[0] - gx, n.position[1] - gy) for n in scn.nodes}
        self.gateway = GatewayState(capacity=scn.mac.queue_capacity)
        self.counters = FrameCounters()
        self.mac: dict[NodeId, NodeMacState] = {}
        self.clocks: dict[NodeId, DriftingClock] = {}
        self.last_heard: dict[NodeId, int] = {}
        self.received_up: set[tuple[NodeId, int]] = set()
        self.outstanding_nak: dict[NodeId, dict[int, int]] = {}
        self.resent: dict[NodeId, set[int]] = {}
        self.tx_ctx: dict[int, dict] = {}
        self.tx_recent: dict[int, list[tuple[float, float, int]]] = {}
        self._txids = 0
        self.scripted = {(a, b) for a, b in scn.workload.scripted_losses}
        self.dead_marked: set[NodeId] = set()
        for nc in scn.nodes:
            self.mac[nc.id] = NodeMacState(node=nc.id, sf=nc.tdma_sf)
            self.clocks[nc.id] = DriftingClock(offset=nc.initial_clock_offset_ms, drift_ppm=nc.clock_drift_ppm)
            self.last_heard[nc.id] = 0
            self.outstanding_nak[nc.id] = {}
            self.resent[nc.id] = set()
            self.trace.radio[nc.id] = []
            first = 0
            while self.schedule_tdma.slot_start(nc.id, first) < self.scn.mac.wake_lead_s * 1000.0:
                first += 1
            self._schedule_slot(nc.id, first)
            if scn.workload.urgent_rate_per_hour > 0:
                self._schedule_urgent_gen(nc.id)
        period = min(self.schedule_tdma.slot_ms.values()) if self.schedule_tdma.slot_ms else 1000
        self.schedule(period, LIVENESS_CHECK)

    # ------------------------------------------------------------------
    # interference and links

    def setpoint(self, t_ms: int) -> float:
        sp = 0.0
        for ph in self.scn.interference.schedule:
            if ph.start_s * 1000 <= t_ms:
                sp = ph.setpoint
        return sp

    def _on_interference(self) -> None:
        ic = self.scn.interference
        sp = self.setpoint(self.now)
        intensity = sp
        if ic.jitter and sp > 0:
            intensity = max(0.0, sp + interference_sigma(sp) * self.rng["interference"].standard_normal())
        self.field.step(intensity, self.rng["links"], ic.step_s)
        self.trace.intensity.append((self.now, intensity))
        if self.controller is not None and self.cp == "ideal":
            self._ideal_reports()
        self.schedule(self.now + int(round(ic.step_s * 1000)), INTERFERENCE_STEP)

    def link_etx(self, a: NodeId, b: NodeId) -> float | None:
        if not (self.alive.get(a) and self.alive.get(b)):
            return None
        return self.field.etx_of(a, b)

    def _true_graph(self) -> TopologyGraph:
        g = TopologyGraph(root=self.root, etx_max=self.etx_max)
        for (a, b), k in self.field.index.items():
            if not (self.alive[a] and self.alive[b]):
                continue
            e = float(self.field.etx[k])
            g.edges[(a, b)] = (e, self.now)
            g.edges[(b, a)] = (e, self.now)
        return g

    # ------------------------------------------------------------------
    # CTP machinery

    def _local_routing(self, n: NodeId) -> bool:
        return self.scn.protocol == "ctp" or not self.commanded.get(n, False)

    def _route_update(self, n: NodeId) -> None:
        st = self.ctp[n]
        if self._local_routing(n):
            ctp.recompute_route(st, self.now, self.staleness_ms, self.etx_max)
        else:
            ctp.refresh_cost(st)

    def _estimate_changed(self, i: NodeId, j: NodeId) -> None:
        if self.scn.protocol != "scdp" or self.cp != "loracp" or i == self.root:
            return
        est = self.ctp[i].neighbors[j].etx_estimate
        if est is None:
            return
        last = self.last_reported[i].get(j)
        thr = self.scn.mac.report_threshold
        if last is None or abs(est - last) > thr:
            self.dirty[i][j] = est
            urgent_thr = self.scn.mac.urgent_report_threshold
            if urgent_thr is not None and last is not None and abs(est - last) > urgent_thr:
                body = self._build_report(i)
                if body is not None:
                    self._start_urgent(i, FrameKind.REPORT, body, self._report_bytes(body))

    def _on_beacon(self, n: NodeId) -> None:
        cfg = self.scn.ctp
        if self.alive[n]:
            st = self.ctp[n]
            frame = ctp.emit_beacon(st)
            self.trace.dp_tx.append((self.now, n, "beacon", 1))
            rng = self.rng["beacon"]
            for j in self.neighbors[n]:
                e = self.link_etx(n, j)
                if e is None or rng.random() >= 1.0 / e:
                    continue
                ctp.receive_beacon(self.ctp[j], frame, self.now, cfg.alpha, self.etx_max, cfg.epsilon)
                self._estimate_changed(j, n)
                self._route_update(j)
        delay = ctp.beacon_delay_ms(cfg.beacon_interval_s, cfg.beacon_jitter, self.rng["beacon"])
        self.schedule(self.now + delay, BEACON_TIMER, n)

    def _on_data(self, origin: NodeId) -> None:
        nc = self.scn.node(origin)
        self.schedule(self.now + int(round(nc.data_period_s * 1000)), DATA_GEN, origin)
        if not self.alive[origin]:
            return
        seq = self.data_seq[origin]
        self.data_seq[origin] = seq + 1
        self.trace.generated.append((self.now, origin, seq))
        cfg = self.scn.ctp
        rng = self.rng["forward"]
        ttl = cfg.ttl
        cur = origin
        hops = 0
        ctp.accept_data(self.ctp[origin], origin, seq)
        frame = Frame(src=origin, dst=self.root, kind=FrameKind.DATA, payload_bytes=self.scn.dataplane.frame_bytes, counter=seq)
        while True:
            if cur == self.root:
                self.trace.delivered.append((self.now, origin, seq, hops))
                return
            st = self.ctp[cur]
            parent = st.parent
            link = self.link_etx(cur, parent) if parent is not None else None
            res = ctp.forward_data(st, frame, link, rng, cfg.max_attempts)
            if res.next_hop is None:
                self.trace.dropped.append((self.now, origin, seq, "no_route"))
                return
            self.trace.dp_tx.append((self.now, cur, "data", res.attempts))
            entry = st.neighbors.get(parent)
            if entry is None:
                entry = st.neighbors[parent] = ctp.NeighborEntry(neighbor=parent)
            ctp.update_etx_estimate(entry, res.attempts, 1 if res.acked else 0, cfg.alpha, self.etx_max, cfg.epsilon)
            self._estimate_changed(cur, parent)
            self._route_update(cur)
            if not res.received:
                self.trace.dropped.append((self.now, origin, seq, "retries"))
                return
            hops += 1
            ttl -= 1
            nxt = parent
            if nxt != self.root and not ctp.accept_data(self.ctp[nxt], origin, seq):
                # the packet came back: nxt's route runs through a node that routes via nxt
                self.trace.bump("loops_detected")
                nst = self.ctp[nxt]
                if nst.parent is not None and nst.parent in nst.neighbors:
                    nst.loop_excluded[nst.parent] = nst.neighbors[nst.parent].advertised_retx
                    self._route_update(nxt)
            if ttl <= 0:
                self.trace.dropped.append((self.now, origin, seq, "ttl"))
                return
            cur = nxt

    # ------------------------------------------------------------------
    # controller

    def _ideal_reports(self) -> None:
        ctrl = self.controller
        for (a, b), k in self.field.index.items():
            e = float(self.field.etx[k]) if (self.alive[a] and self.alive[b]) else self.etx_max
            for i, j in ((a, b), (b, a)):
                if i == self.root:
                    continue
                ctrl.ingest(i, [(j, e)], self.now)
        self._request_recompute()

    def _request_recompute(self) -> None:
        if self.controller is None or not self.controller.dirty or self.recompute_pending:
            return
        self.recompute_pending = True
        self.schedule(self.now + self.wait_ms, RECOMPUTE)

    def _on_recompute(self) -> None:
        self.recompute_pending = False
        ctrl = self.controller
        commands = ctrl.recompute(self.now, "report")
        self.trace.controller_log.append(ctrl.log[-1])
        for node, parent in commands:
            if not self.alive.get(node, False) and self.cp == "ideal":
                continue
            if self.cp == "ideal":
                self._apply_command(node, parent)
            elif self.cp == "loracp":
                item = QueuedDownlink(node, "command", {"parent": parent}, self.scn.mac.command_bytes, self.now)
                if not self.gateway.enqueue(item):
                    self._record_downlink(node, self.mac[node].sf, "command", "overflow")
                    ctrl.forget(node)

    def _apply_command(self, node: NodeId, parent: NodeId | None) -> None:
        if not self.dp_enabled:
            return
        st = self.ctp[node]
        local = ctp.select_parent(st, self.now, self.staleness_ms, self.etx_max)
        if local != parent:
            self.controller.conflicts += 1
            self.trace.bump("command_conflicts")
        st.parent = parent
        self.commanded[node] = True
        ctp.refresh_cost(st)

    def _on_liveness(self) -> None:
        if self.controller is not None:
            slack = self.scn.mac.liveness_slack_slots
            for n in self.node_ids:
                if n in self.dead_marked:
                    continue
                rot = self.schedule_tdma.rotation_ms(n)
                window = self.schedule_tdma.liveness_window_ms(n) + slack * rot
                if self.now - self.last_heard[n] > window:
                    self.dead_marked.add(n)
                    self.trace.lifecycle.append((self.now, n, "declared_dead"))
                    self.controller.mark_dead(n)
                    for item in self.gateway.purge(n):
                        self._record_downlink(n, self.mac[n].sf, item.kind, "dropped")
                    self._request_recompute()
        period = min(self.schedule_tdma.slot_ms.values())
        self.schedule(self.now + period, LIVENESS_CHECK)

    def _on_fail(self, node: NodeId) -> None:
        if not self.alive[node]:
            return
        self.alive[node] = False
        self.trace.lifecycle.append((self.now, node, "failed"))
        self.trace.alive_ms[node] = self.now
        if self.cp == "ideal" and self.controller is not None:
            self.controller.mark_dead(node)
            self._request_recompute()

    # ------------------------------------------------------------------
    # LoRa control plane: TDMA slots

    def _schedule_slot(self, node: NodeId, rotation: int) -> None:
        start = self.schedule_tdma.slot_start(node, rotation)
        local_wake = start - self.scn.mac.wake_lead_s * 1000.0
        wake = self.clocks[node].true_time(local_wake)
        self.schedule(max(self.now, int(math.ceil(wake))), SLOT_START, node, rotation)

    def _report_bytes(self, body: dict) -> int:
        m = self.scn.mac
        if "entries" in body:
            return min(m.max_frame_bytes, m.report_header_bytes + m.report_entry_bytes * len(body["entries"]))
        return self.scn.workload.report_bytes

    def _build_report(self, node: NodeId) -> dict | None:
        dirty = self.dirty.get(node)
        if not dirty:
            return None
        m = self.scn.mac
        cap = (m.max_frame_bytes - m.report_header_bytes) // m.report_entry_bytes
        chosen = sorted(dirty)[:cap]
        entries = [(j, dirty.pop(j)) for j in chosen]
        for j, e in entries:
            self.last_reported[node][j] = e
        return {"entries": entries, "ts": self.now}

    def _on_slot(self, node: NodeId, rotation: int) -> None:
        if not self.alive[node]:
            return
        sched, m = self.schedule_tdma, self.scn.mac
        clock = self.clocks[node]
        mac = self.mac[node]
        start = sched.slot_start(node, rotation)
        t_tx = clock.true_time(start + m.guard_s * 1000.0)
        err = clock.error(t_tx)
        self.trace.clock.append((start, node, err))
        if abs(err) >= m.guard_s * 1000.0:
            self.trace.guard_violations += 1
        heartbeat = sched.is_heartbeat(node, rotation)
        if self.scn.workload.report_every_slot:
            mac.queue.append((FrameKind.REPORT, {"ts": self.now}, self.scn.workload.report_bytes))
        elif self.dp_enabled and self.scn.protocol == "scdp":
            body = self._build_report(node)
            if body is not None:
                mac.queue.append((FrameKind.REPORT, body, self._report_bytes(body)))
        if mac.busy_until > self.now:
            # radio still held by an urgent exchange: give up this slot
            self.trace.bump("slots_lost_to_urgent")
            if heartbeat:
                self.trace.bump("heartbeats_missed")
            self._schedule_slot(node, rotation + 1)
            return
        action, payload = node_slot_action(mac, heartbeat)
        if action is SlotAction.SKIP:
            self._schedule_slot(node, rotation + 1)
            return
        latency = self.rng["wake"].normal(m.wake_latency_mean_ms, m.wake_latency_sd_ms)
        ready = self.now + latency
        if ready > t_tx:
            self.trace.bump("late_wake")
            t_tx = ready
        if payload is None:
            kind, body, size = FrameKind.HEARTBEAT, {}, m.heartbeat_bytes
        else:
            kind, body, size = payload
            body = dict(body)
        body["hb"] = heartbeat
        self._transmit(node, kind, body, size, t_tx, mac.sf, urgent=False, rotation=rotation)

    def _transmit(self, node, kind, body, size, t_start: float, sf: int, urgent: bool, rotation=None, local_t0=None, counter=None):
        mac = self.mac[node]
        if mac.missing_down and self.scn.mac.nak:
            body["nak_down"] = list(mac.missing_down)
            size = min(self.scn.mac.max_frame_bytes, size + 2 * len(mac.missing_down))
            mac.missing_down.clear()
        if counter is None:
            counter = self.counters.next(node, UPLINK)
        if local_t0 is None:
            local_t0 = self.clocks[node].local_time(t_start)
        frame = Frame(
            src=node, dst=self.root, kind=kind, payload_bytes=size, counter=counter, direction=UPLINK,
            piggyback_t0=local_t0, body=body, urgent=urgent,
        )
        mac.sent_log[counter] = frame
        air = lora_airtime(sf, size, self.phy_params)
        t_end = t_start + air
        self._txids += 1
        txid = self._txids
        start_ms, end_ms = int(round(t_start)), max(int(round(t_start)) + 1, int(round(t_end)))
        rec = TxRecord("up", node, sf, kind.value, start_ms, end_ms, "PENDING", counter, urgent, size,
                       self.clocks[node].error(t_start))
        self.trace.mac.append(rec)
        self.tx_ctx[txid] = {"frame": frame, "rec": rec, "t_start": t_start, "t_end": t_end, "rotation": rotation, "sf": sf}
        self.tx_recent.setdefault(sf, []).append((t_start, t_end, txid))
        timeout = self.scn.mac.rx_window_symbols * symbol_time_ms(sf, self.phy_params)
        mac.busy_until = end_ms + self.wait_ms + int(math.ceil(timeout)) + 400
        self.trace.radio[node].append(("TX", start_ms, end_ms - start_ms))
        self.schedule(max(self.now, end_ms), TX_END, txid)

    def _on_tx_end(self, txid: int) -> None:
        ctx = self.tx_ctx[txid]
        frame, rec, sf = ctx["frame"], ctx["rec"], ctx["sf"]
        node = frame.src
        recent = self.tx_recent[sf]
        horizon = ctx["t_start"] - 60_000
        self.tx_recent[sf] = recent = [r for r in recent if r[1] >= horizon]
        collided = any(o != txid and s < ctx["t_end"] and e > ctx["t_start"] for s, e, o in recent)
        if collided:
            outcome = "COLLIDED"
        elif ctx["rotation"] is not None and (node, ctx["rotation"]) in self.scripted:
            outcome = "LOST"
        elif not self.alive[node]:
            outcome = "LOST"
        elif self.rng["lora-loss"].random() >= self.loss.probability(self.gw_dist[node], sf):
            outcome = "LOST"
        else:
            outcome = "DELIVERED"
        rec.outcome = outcome
        self.trace.bump(f"uplink_{outcome.lower()}")
        parts = None
        if outcome == "DELIVERED":
            parts = self._gateway_receive(frame, ctx)
        ctx["parts"] = parts
        self.schedule(rec.end + self.wait_ms, RX_WINDOW, txid)

    def _gateway_receive(self, frame: Frame, ctx: dict) -> dict:
        node, c = frame.src, frame.counter
        m = self.scn.mac
        self.last_heard[node] = self.now
        if node in self.dead_marked:
            self.dead_marked.discard(node)
            self.trace.lifecycle.append((self.now, node, "revived"))
            if self.controller is not None:
                self.controller.mark_alive(node)
        gw = self.gateway
        fresh = (node, c) not in self.received_up
        self.received_up.add((node, c))
        missing, _dup = detect_gap(gw.last_up.get(node), c)
        if not _dup:
            gw.last_up[node] = c
        nak_state = self.outstanding_nak[node]
        nak_state.pop(c, None)
        if m.nak:
            for k in missing:
                if (node, k) not in self.received_up:
                    nak_state[k] = 0
        body = frame.body
        if fresh:
            if frame.kind is FrameKind.REPORT and "entries" in body and self.controller is not None:
                src_ts = body.get("ts", self.now)
                self.controller.ingest(node, body["entries"], src_ts)
                self.trace.report_latency.append((node, self.now - src_ts))
                if "retransmits" in body:
                    self.trace.nak_recoveries.append({"node": node, "lost": body["retransmits"], "t": self.now})
            elif frame.kind is FrameKind.REPORT and "retransmits" in body:
                self.trace.nak_recoveries.append({"node": node, "lost": body["retransmits"], "t": self.now})
            if body.get("nak_down") and self.controller is not None:
                self.controller.forget(node)
                self.trace.bump("downlink_naks")
            w = self.scn.workload
            if w.reply_probability is not None and frame.kind is FrameKind.REPORT and not frame.urgent:
                rng = self.rng["workload"]
                if rng.random() < w.reply_probability:
                    size = int(rng.integers(w.reply_bytes[0], w.reply_bytes[1] + 1))
                    item = QueuedDownlink(node, "reply", {}, size, self.now)
                    if not gw.enqueue(item):
                        self._record_downlink(node, self.mac[node].sf, "reply", "overflow")
            self._request_recompute()
        parts: dict = {}
        if m.heartbeat_sync and body.get("hb"):
            t1 = ctx["t_end"] + timestamp_noise(self.rng["clock-noise"], self.scn.clock.noise_sigma_ms, self.scn.clock.noise_truncation)
            parts["delta"] = estimate_offset(frame.piggyback_t0, t1, self.latency(ctx["sf"], frame.payload_bytes))
        if frame.urgent:
            parts["ack"] = c
        if m.nak and nak_state:
            naks = []
            for k in sorted(nak_state):
                if nak_state[k] < 3:
                    nak_state[k] += 1
                    naks.append(k)
            if naks:
                parts["nak"] = naks
        return parts

    def _record_downlink(self, node, sf, kind, outcome, delay=None) -> None:
        self.trace.downlinks.append(DownlinkOutcome(self.now, node, sf, kind, outcome, delay))

    def _on_rx_window(self, txid: int) -> None:
        ctx = self.tx_ctx[txid]
        frame, rec, sf = ctx["frame"], ctx["rec"], ctx["sf"]
        node = frame.src
        timeout = int(math.ceil(self.scn.mac.rx_window_symbols * symbol_time_ms(sf, self.phy_params)))
        close = self.now + timeout
        dl = None
        if ctx["parts"] is not None:
            airtime = lambda size: lora_airtime(sf, size, self.phy_params)  # noqa: E731
            dl, status = gateway_on_uplink(self.gateway, node, self.now, ctx["parts"], airtime, self.scn.mac.ack_bytes)
            if status == "busy":
                if ctx["parts"]:
                    self._record_downlink(node, sf, "control", "dropped")
            elif dl is not None:
                close = dl.end
                ok = self.alive[node] and self.rng["lora-loss"].random() < self.loss.probability(self.gw_dist[node], sf)
                kind = dl.item.kind if dl.item is not None else "control"
                drec = TxRecord("down", node, sf, kind, dl.start, dl.end, "DELIVERED" if ok else "LOST",
                                dl.counter, frame.urgent, dl.payload_bytes, trigger_end=rec.end)
                self.trace.mac.append(drec)
                ctx["downlink"] = (dl, ok)
        if self.alive[node]:
            self.trace.radio[node].append(("RX", rec.end, close - rec.end))
        self.mac[node].busy_until = close
        self.schedule(close, RX_CLOSE, txid)

    def _on_rx_close(self, txid: int) -> None:
        ctx = self.tx_ctx.pop(txid)
        frame = ctx["frame"]
        node = frame.src
        mac = self.mac[node]
        acked = False
        got = ctx.get("downlink")
        if got is not None:
            dl, ok = got
            kind = dl.item.kind if dl.item is not None else "control"
            delay = self.now - (dl.item.enqueued_at if dl.item is not None else ctx["rec"].end)
            self._record_downlink(node, ctx["sf"], kind, "received" if ok else "lost", delay if ok else None)
            if ok and self.alive[node]:
                acked = self._node_receive(node, dl)
            elif dl.item is not None and dl.item.kind == "command" and self.controller is not None:
                pass  # the node will NAK the counter gap on its next downlink
        if not self.alive[node]:
            return
        if frame.urgent:
            self._urgent_done(node, frame, acked)
        elif ctx["rotation"] is not None:
            self._schedule_slot(node, ctx["rotation"] + 1)

    def _node_receive(self, node: NodeId, dl) -> bool:
        mac = self.mac[node]
        missing, dup = detect_gap(mac.last_down_counter, dl.counter)
        if not dup:
            mac.last_down_counter = dl.counter
            if self.scn.mac.nak and missing:
                mac.missing_down.extend(missing)
        parts = dl.parts
        if "delta" in parts:
            clock = self.clocks[node]
            if self.scn.clock.rate_feedback:
                apply_rate_feedback(clock, parts["delta"], self.now, self.scn.clock.rate_gain)
            apply_offset(clock, parts["delta"], self.now)
        if dl.item is not None and dl.item.kind == "command":
            self._apply_command(node, dl.item.body["parent"])
        for c in parts.get("nak", []):
            if c in self.resent[node]:
                continue
            lost = mac.sent_log.get(c)
            if lost is None or lost.kind is not FrameKind.REPORT:
                continue
            if any(u.frame.counter == c or u.frame.body.get("retransmits") == c for u in mac.urgent):
                continue
            self.resent[node].add(c)
            body = dict(lost.body)
            body["retransmits"] = c
            body.pop("nak_down", None)
            body["hb"] = False
            self._start_urgent(node, FrameKind.REPORT, body, lost.payload_bytes)
        return "ack" in parts

    # ------------------------------------------------------------------
    # urgent channel

    def _start_urgent(self, node: NodeId, kind: FrameKind, body: dict, size: int) -> None:
        mac = self.mac[node]
        frame = Frame(src=node, dst=self.root, kind=kind, payload_bytes=size, body=body, urgent=True)
        mac.urgent.append(UrgentState(frame))
        if len(mac.urgent) == 1:
            self.schedule(max(self.now + 1, mac.busy_until + 1), URGENT_TX, node)

    def _schedule_urgent_gen(self, node: NodeId) -> None:
        rate = self.scn.workload.urgent_rate_per_hour / 3_600_000.0
        gap = self.rng["urgent-gen"].exponential(1.0 / rate)
        self.schedule(self.now + max(1, int(gap)), URGENT_GEN, node)

    def _on_urgent_gen(self, node: NodeId) -> None:
        if self.alive[node]:
            self._start_urgent(node, FrameKind.REPORT, {"ts": self.now, "app_urgent": True}, self.scn.workload.report_bytes)
        self._schedule_urgent_gen(node)

    def _on_urgent_tx(self, node: NodeId) -> None:
        mac = self.mac[node]
        if not self.alive[node] or not mac.urgent:
            return
        if mac.busy_until >= self.now:
            self.schedule(mac.busy_until + 1, URGENT_TX, node)
            return
        head = mac.urgent[0]
        head.attempt += 1
        ready = self.now + self.rng["wake"].normal(self.scn.mac.wake_latency_mean_ms, self.scn.mac.wake_latency_sd_ms)
        self.trace.bump("urgent_attempts")
        self._transmit(node, head.frame.kind, dict(head.frame.body), head.frame.payload_bytes, ready,
                       self.urgent_sf, urgent=True, counter=head.frame.counter)
        if head.frame.counter is None:
            head.frame.counter = self.counters.peek(node, UPLINK) - 1

    def _urgent_done(self, node: NodeId, frame: Frame, acked: bool) -> None:
        mac = self.mac[node]
        if not mac.urgent:
            return
        head = mac.urgent[0]
        if acked:
            mac.urgent.popleft()
            self.trace.bump("urgent_delivered")
        elif head.attempt >= self.scn.mac.urgent_max_attempts:
            mac.urgent.popleft()
            self.trace.bump("urgent_exhausted")
            body = dict(head.frame.body)
            body.pop("nak_down", None)
            mac.queue.appendleft((head.frame.kind, body, head.frame.payload_bytes))
        else:
            self.schedule(self.now + urgent_backoff_ms(head.attempt, self.rng["aloha"]), URGENT_TX, node)
            return
        if mac.urgent:
            self.schedule(self.now + 1, URGENT_TX, node)

    # ------------------------------------------------------------------
    # sampling and wrap-up

    def _on_sample(self) -> None:
        graph = self._true_graph()
        optimal = compute_min_tree(graph).cost
        parents = {n: self.ctp[n].parent for n in self.node_ids if self.alive[n]}
        cut, loops = _break_cycles(parents)
        ground = ground_truth_retx(cut, graph)
        belief = {n: self.ctp[n].retx for n in parents}
        self.trace.retx.append(
            RetxSample(
                self.now,
                belief,
                {n: ground[n] for n in parents},
                {n: optimal.get(n, math.inf) for n in parents},
                len(loops),
            )
        )
        self.schedule(self.now + int(round(self.scn.metrics.bucket_s * 1000)), METRICS_SAMPLE)

    def _finish(self) -> None:
        for n in self.node_ids:
            self.trace.alive_ms.setdefault(n, self.end)
        for n, intervals in self.trace.radio.items():
            # clip activity that runs past the end of the run
            lim = self.trace.alive_ms[n]
            clipped = []
            for mode, s, d in intervals:
                if s >= lim:
                    continue
                clipped.append((mode, s, min(d, lim - s)))
            self.trace.radio[n] = clipped
        if self.cp == "loracp":
            pending = len(self.gateway.queue)
            self.trace.counters["downlink_queued_at_end"] = pending
            self.trace.counters["gateway_busy_misses"] = self.gateway.busy_misses
        if self.controller is not None:
            self.trace.counters["recomputes"] = self.controller.recomputes
            self.trace.counters["stale_reports"] = self.controller.graph.stale_reports
        self._check_downlinks()

    def _check_downlinks(self) -> None:
        downs = sorted((r.start, r.end) for r in self.trace.mac if r.direction == "down")
        for (s0, e0), (s1, e1) in zip(downs, downs[1:]):
            if s1 < e0:
                raise SimulationError(f"overlapping downlinks at {s1} ms")


def run(scenario: Scenario | dict):
    """Validate and simulate ``scenario``; returns ``(trace, metrics)``."""
    from .metrics import compute_metrics

    scn = validate_scenario(scenario)
    trace = Simulation(scn).run()
    return trace, compute_metrics(trace, scn)


def inject_node_failure(scenario: Scenario, node: NodeId, at_s: float) -> Scenario:
    """Copy of ``scenario`` in which ``node`` stops at ``at_s`` seconds."""
    from .core import FailureConfig, ScenarioError

    if node == scenario.root.id:
        raise ScenarioError("failures", "the root/controller cannot fail")
    out = copy.deepcopy(scenario)
    out.failures.append(FailureConfig(node=node, at_s=at_s))
    return out
