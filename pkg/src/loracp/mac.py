"""Control-plane MAC: TDMA schedule, Class-A gateway, NAK gaps, ALOHA urgent channel."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import Frame, FrameKind, NodeId


class ScheduleError(ValueError):
    pass


@dataclass
class TdmaSchedule:
    """Round-robin slot ownership per TDMA channel.

    All channels start slot 0 at time 0.  Node ``idx`` of a channel with
    ``k`` owners and slot length ``L`` owns slot ``m * k + idx`` in its
    ``m``-th rotation.
    """

    owners: dict[int, list[NodeId]]
    slot_ms: dict[int, int]
    heartbeat_period: int
    _where: dict[NodeId, tuple[int, int]] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self._where = {}
        for sf, nodes in self.owners.items():
            for idx, n in enumerate(nodes):
                if n in self._where:
                    raise ScheduleError(f"node {n} owns slots in more than one place")
                self._where[n] = (sf, idx)

    def channel_of(self, node: NodeId) -> int:
        return self._where[node][0]

    def index_of(self, node: NodeId) -> int:
        return self._where[node][1]

    def rotation_ms(self, node: NodeId) -> int:
        sf = self.channel_of(node)
        return len(self.owners[sf]) * self.slot_ms[sf]

    def owner(self, sf: int, slot_index: int) -> NodeId:
        nodes = self.owners[sf]
        return nodes[slot_index % len(nodes)]

    def slot_start(self, node: NodeId, rotation: int) -> int:
        sf, idx = self._where[node]
        return (rotation * len(self.owners[sf]) + idx) * self.slot_ms[sf]

    def is_heartbeat(self, node: NodeId, rotation: int) -> bool:
        return (rotation + self.index_of(node)) % self.heartbeat_period == 0

    def liveness_window_ms(self, node: NodeId) -> int:
        return self.heartbeat_period * self.rotation_ms(node)


def build_schedule(
    assignment: dict[NodeId, int],
    slot_lengths_s: dict[int, float],
    heartbeat_period: int,
) -> TdmaSchedule:
    """Group nodes by TDMA channel (ordered by id) into a round-robin schedule."""
    if heartbeat_period < 1:
        raise ScheduleError("heartbeat_period must be >= 1")
    owners: dict[int, list[NodeId]] = {}
    for node in sorted(assignment):
        sf = assignment[node]
        if slot_lengths_s.get(sf) is None:
            raise ScheduleError(f"channel SF{sf} has no slot length")
        owners.setdefault(sf, []).append(node)
    slot_ms = {sf: int(round(slot_lengths_s[sf] * 1000)) for sf in owners}
    for sf, L in slot_ms.items():
        if L <= 0:
            raise ScheduleError(f"channel SF{sf} has an empty slot length")
    return TdmaSchedule(owners, slot_ms, heartbeat_period)


class SlotAction(str, enum.Enum):
    SKIP = "SKIP"
    SEND = "SEND"
    HEARTBEAT = "HEARTBEAT"


@dataclass
class UrgentState:
    frame: Frame
    attempt: int = 0
    waiting_ack: bool = False


@dataclass
class NodeMacState:
    node: NodeId
    sf: int
    # pending uplink payloads, each a (kind, body, payload_bytes) tuple
    queue: deque = field(default_factory=deque)
    last_down_counter: int | None = None
    missing_down: list[int] = field(default_factory=list)
    sent_log: dict[int, Frame] = field(default_factory=dict)
    urgent: deque = field(default_factory=deque)  # UrgentState items, head in flight
    busy_until: int = 0


def node_slot_action(state: NodeMacState, heartbeat: bool):
    """Decide what the node does in one of its slots.

    Returns ``(action, payload)``; ``payload`` is the dequeued report for
    SEND/HEARTBEAT-with-report, else None.
    """
    if state.queue:
        return (SlotAction.HEARTBEAT if heartbeat else SlotAction.SEND), state.queue.popleft()
    if heartbeat:
        return SlotAction.HEARTBEAT, None
    return SlotAction.SKIP, None


def detect_gap(last_counter: int | None, received_counter: int) -> tuple[list[int], bool]:
    """Missing counters between ``last_counter`` and ``received_counter``.

    The flag is True for a duplicate or reordered counter.
    """
    if last_counter is None:
        return list(range(0, received_counter)), False
    if received_counter <= last_counter:
        return [], True
    return list(range(last_counter + 1, received_counter)), False


def urgent_backoff_ms(attempt: int, rng: np.random.Generator) -> int:
    """Uniform backoff in [1, 2**attempt] seconds after the ``attempt``-th failure."""
    return int(round(1000.0 * rng.uniform(1.0, 2.0 ** attempt)))


@dataclass
class QueuedDownlink:
    node: NodeId
    kind: str  # "command", "reply" or "nak"
    body: dict
    payload_bytes: int
    enqueued_at: int
    item_id: int = 0


@dataclass
class Downlink:
    node: NodeId
    start: int
    end: int
    payload_bytes: int
    counter: int
    item: QueuedDownlink | None
    parts: dict


@dataclass
class GatewayState:
    capacity: int = 8
    busy_until: int = 0
    last_up: dict[NodeId, int] = field(default_factory=dict)
    last_down: dict[NodeId, int] = field(default_factory=dict)
    queue: list[QueuedDownlink] = field(default_factory=list)
    drops: int = 0
    busy_misses: int = 0
    sent: list[tuple[int, int, NodeId]] = field(default_factory=list)
    _ids: int = 0

    def enqueue(self, item: QueuedDownlink) -> bool:
        """Add a downlink item; a newer command replaces the node's older one.

        Returns False (and counts a drop) when the queue is full.
        """
        self._ids += 1
        item.item_id = self._ids
        if item.kind == "command":
            for k, old in enumerate(self.queue):
                if old.node == item.node and old.kind == "command":
                    self.queue[k] = item
                    return True
        if len(self.queue) >= self.capacity:
            self.drops += 1
            return False
        self.queue.append(item)
        return True

    def head_for(self, node: NodeId) -> QueuedDownlink | None:
        for item in self.queue:
            if item.node == node:
                return item
        return None

    def purge(self, node: NodeId) -> list[QueuedDownlink]:
        gone = [q for q in self.queue if q.node == node]
        self.queue = [q for q in self.queue if q.node != node]
        return gone


def downlink_size(parts: dict, item: QueuedDownlink | None, ack_bytes: int) -> int:
    sizes = []
    if parts.get("ack") is not None or parts.get("delta") is not None:
        sizes.append(ack_bytes)
    if parts.get("nak"):
        sizes.append(ack_bytes + 2 * len(parts["nak"]))
    if item is not None:
        sizes.append(item.payload_bytes)
    return max(sizes) if sizes else 0


def gateway_on_uplink(
    gw: GatewayState,
    node: NodeId,
    rx1_at: int,
    parts: dict,
    airtime_ms,
    ack_bytes: int = 5,
) -> tuple[Downlink | None, str]:
    """Arbitrate the single downlink resource at an uplink's RX1 instant.

    ``parts`` holds the per-uplink extras (clock ``delta``, ``ack`` of an
    urgent frame, uplink ``nak`` list).  At most one queued item for the
    node rides along.  Returns ``(downlink, status)`` with status
    ``"sent"``, ``"idle"`` (nothing to say) or ``"busy"``.
    """
    parts = {k: v for k, v in parts.items() if v is not None and v != []}
    item = gw.head_for(node)
    if item is None and not parts:
        return None, "idle"
    if rx1_at < gw.busy_until:
        gw.busy_misses += 1
        return None, "busy"
    size = downlink_size(parts, item, ack_bytes)
    end = rx1_at + max(1, int(round(airtime_ms(size))))
    counter = gw.last_down.get(node, -1) + 1
    gw.last_down[node] = counter
    if item is not None:
        gw.queue.remove(item)
    gw.busy_until = end
    gw.sent.append((rx1_at, end, node))
    return Downlink(node, rx1_at, end, size, counter, item, parts), "sent"


# --------------------------------------------------------------------------
# trace audit


@dataclass
class TxRecord:
    direction: str
    node: NodeId
    sf: int
    kind: str
    start: int
    end: int
    outcome: str
    counter: int | None = None
    urgent: bool = False
    payload_bytes: int = 0
    sync_error_ms: float = 0.0
    trigger_end: int | None = None  # downlinks: end of the uplink that opened RX1


@dataclass
class AuditResult:
    unsolicited_downlinks: int = 0
    overlapping_downlinks: int = 0
    tdma_overlaps: int = 0
    tdma_overlaps_synced: int = 0

    @property
    def ok(self) -> bool:
        return self.unsolicited_downlinks == 0 and self.overlapping_downlinks == 0 and self.tdma_overlaps_synced == 0


def audit_mac_trace(records: list[TxRecord], wait_ms: int, guard_ms: float) -> AuditResult:
    """Check Class-A causality, single-downlink and TDMA exclusivity on a trace."""
    res = AuditResult()
    up_ends = {(r.node, r.end) for r in records if r.direction == "up"}
    downs = sorted((r for r in records if r.direction == "down"), key=lambda r: (r.start, r.end))
    for r in downs:
        if r.trigger_end is None or (r.node, r.trigger_end) not in up_ends or r.start != r.trigger_end + wait_ms:
            res.unsolicited_downlinks += 1
    last_end = None
    for r in downs:
        if last_end is not None and r.start < last_end:
            res.overlapping_downlinks += 1
        last_end = r.end if last_end is None else max(last_end, r.end)
    by_sf: dict[int, list[TxRecord]] = {}
    for r in records:
        if r.direction == "up" and not r.urgent:
            by_sf.setdefault(r.sf, []).append(r)
    for recs in by_sf.values():
        recs.sort(key=lambda r: r.start)
        prev = None
        for r in recs:
            if prev is not None and r.start < prev.end:
                res.tdma_overlaps += 1
                if max(abs(prev.sync_error_ms), abs(r.sync_error_ms)) < guard_ms:
                    res.tdma_overlaps_synced += 1
            if prev is None or r.end > prev.end:
                prev = r
    return res
