"""Distributed collection-tree routing: link estimation, beacons, parent choice, forwarding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import BROADCAST, Frame, FrameKind, NodeId

INF = math.inf


@dataclass
class NeighborEntry:
    neighbor: NodeId
    etx_estimate: float | None = None  # None until a second beacon gives a sample
    advertised_retx: float = INF
    last_beacon: int = 0
    last_seq: int | None = None


@dataclass
class CtpNodeState:
    id: NodeId
    is_root: bool = False
    parent: NodeId | None = None
    retx: float = INF
    neighbors: dict[NodeId, NeighborEntry] = field(default_factory=dict)
    beacon_interval: float = 8.0
    beacon_seq: int = 0
    loop_excluded: dict[NodeId, float] = field(default_factory=dict)
    seen: set[tuple[int, int]] = field(default_factory=set)

    def __post_init__(self) -> None:
        if self.is_root:
            self.parent = None
            self.retx = 0.0


def update_etx_estimate(
    entry: NeighborEntry,
    tx_attempts: int,
    successes: int,
    alpha: float = 0.9,
    etx_max: float = 20.0,
    epsilon: float = 0.05,
) -> float:
    """EWMA of the attempts-per-success ratio, clamped to ``[1, etx_max]``."""
    if tx_attempts < 1 or not 0 <= successes <= tx_attempts:
        raise ValueError("need tx_attempts >= 1 and 0 <= successes <= tx_attempts")
    sample = tx_attempts / max(successes, epsilon)
    old = entry.etx_estimate
    new = sample if old is None else alpha * old + (1.0 - alpha) * sample
    entry.etx_estimate = min(max(new, 1.0), etx_max)
    return entry.etx_estimate


def _candidates(state: CtpNodeState, now: int, staleness_ms: int | None, etx_max: float):
    for j, e in state.neighbors.items():
        if e.etx_estimate is None or e.etx_estimate >= etx_max:
            continue
        if not math.isfinite(e.advertised_retx):
            continue
        if staleness_ms is not None and now - e.last_beacon > staleness_ms:
            continue
        if j in state.loop_excluded and e.advertised_retx >= state.loop_excluded[j]:
            continue
        yield j, e.etx_estimate + e.advertised_retx


def select_parent(
    state: CtpNodeState,
    now: int = 0,
    staleness_ms: int | None = None,
    etx_max: float = 20.0,
) -> NodeId | None:
    """argmin over usable neighbours of ETX_ij + RETX_j; lower id wins ties."""
    if state.is_root:
        return None
    best: tuple[float, NodeId] | None = None
    for j, cost in _candidates(state, now, staleness_ms, etx_max):
        if best is None or (cost, j) < best:
            best = (cost, j)
    return None if best is None else best[1]


def route_cost(state: CtpNodeState, parent: NodeId | None) -> float:
    if state.is_root:
        return 0.0
    if parent is None or parent not in state.neighbors:
        return INF
    e = state.neighbors[parent]
    if e.etx_estimate is None:
        return INF
    return e.etx_estimate + e.advertised_retx


def recompute_route(state: CtpNodeState, now: int, staleness_ms: int | None, etx_max: float) -> bool:
    """Re-run parent selection; returns True when the parent changed."""
    if state.is_root:
        state.retx = 0.0
        return False
    new = select_parent(state, now, staleness_ms, etx_max)
    changed = new != state.parent
    state.parent = new
    state.retx = route_cost(state, new)
    return changed


def refresh_cost(state: CtpNodeState) -> None:
    """Recompute retx for a fixed parent (used when the parent is commanded)."""
    state.retx = route_cost(state, state.parent)


def emit_beacon(state: CtpNodeState) -> Frame:
    frame = Frame(
        src=state.id,
        dst=BROADCAST,
        kind=FrameKind.BEACON,
        payload_bytes=8,
        counter=state.beacon_seq,
        body={"retx": 0.0 if state.is_root else state.retx, "seq": state.beacon_seq},
    )
    state.beacon_seq += 1
    return frame


def beacon_delay_ms(interval_s: float, jitter: float, rng: np.random.Generator) -> int:
    return max(1, int(round(interval_s * 1000.0 * (1.0 + jitter * (2.0 * rng.random() - 1.0)))))


def receive_beacon(
    state: CtpNodeState,
    frame: Frame,
    now: int,
    alpha: float,
    etx_max: float,
    epsilon: float,
) -> NeighborEntry:
    """Update the neighbour table from a received beacon.

    The sequence gap since the previous beacon heard from the sender is an
    attempts-per-success sample of the (bidirectional) link.
    """
    j = frame.src
    entry = state.neighbors.get(j)
    if entry is None:
        entry = state.neighbors[j] = NeighborEntry(neighbor=j)
    seq = frame.body["seq"]
    if entry.last_seq is not None and seq > entry.last_seq:
        update_etx_estimate(entry, seq - entry.last_seq, 1, alpha, etx_max, epsilon)
    entry.last_seq = seq
    entry.last_beacon = now
    old_adv = entry.advertised_retx
    entry.advertised_retx = frame.body["retx"]
    if j in state.loop_excluded and entry.advertised_retx < min(old_adv, state.loop_excluded[j]):
        del state.loop_excluded[j]
    return entry


@dataclass
class ForwardResult:
    next_hop: NodeId | None
    attempts: int
    received: bool  # the next hop got at least one copy
    acked: bool  # the sender saw an acknowledgement
    reason: str | None = None


def forward_data(
    state: CtpNodeState,
    frame: Frame,
    link_etx: float | None,
    rng: np.random.Generator,
    max_attempts: int = 5,
) -> ForwardResult:
    """Unicast one data frame to the current parent with link-layer retries.

    Each attempt delivers the frame with probability 1/sqrt(ETX) and its
    acknowledgement with the same probability, so an attempt completes
    with probability 1/ETX.
    """
    if frame.kind is not FrameKind.DATA:
        raise ValueError("forward_data handles DATA frames only")
    if state.parent is None:
        return ForwardResult(None, 0, False, False, "no_route")
    if link_etx is None:
        # no physical link to the chosen parent: every attempt is lost
        return ForwardResult(state.parent, max_attempts, False, False, "retries")
    q = 1.0 / math.sqrt(link_etx)
    received = False
    for attempt in range(1, max_attempts + 1):
        if rng.random() < q:
            received = True
            if rng.random() < q:
                return ForwardResult(state.parent, attempt, True, True)
    return ForwardResult(state.parent, max_attempts, received, False, None if received else "retries")


def accept_data(state: CtpNodeState, origin: NodeId, seq: int) -> bool:
    """Duplicate suppression by (origin, sequence); True if the frame is new here."""
    key = (origin, seq)
    if key in state.seen:
        return False
    state.seen.add(key)
    return True
