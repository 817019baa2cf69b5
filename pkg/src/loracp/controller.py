"""Centralized routing control: link-cost graph, minimum-cost trees, parent commands."""

from __future__ import annotations

import hashlib
import heapq
import json
import math
from dataclasses import dataclass, field

from .core import NodeId

INF = math.inf


class RoutingLoopError(RuntimeError):
    pass


@dataclass
class TopologyGraph:
    root: NodeId
    edges: dict[tuple[NodeId, NodeId], tuple[float, int]] = field(default_factory=dict)
    etx_max: float = 20.0
    stale_reports: int = 0
    dead: set[NodeId] = field(default_factory=set)

    def cost(self, i: NodeId, j: NodeId) -> float | None:
        e = self.edges.get((i, j))
        return None if e is None else e[0]

    def usable(self):
        for (i, j), (etx, _) in self.edges.items():
            if etx >= self.etx_max or i in self.dead or j in self.dead:
                continue
            yield i, j, etx

    def remove_node(self, node: NodeId) -> None:
        self.dead.add(node)

    def nodes(self) -> set[NodeId]:
        out = {self.root}
        for i, j in self.edges:
            out.add(i)
            out.add(j)
        return out


@dataclass
class Report:
    src: NodeId
    neighbor: NodeId
    etx: float
    timestamp: int


def ingest_report(graph: TopologyGraph, report: Report, threshold: float = 0.1) -> bool:
    """Apply one ETX report; returns the recompute flag.

    Older-timestamp reports are ignored and counted in ``graph.stale_reports``.
    """
    key = (report.src, report.neighbor)
    old = graph.edges.get(key)
    if old is not None and report.timestamp < old[1]:
        graph.stale_reports += 1
        return False
    etx = max(1.0, report.etx)
    graph.edges[key] = (etx, report.timestamp)
    if old is None:
        return True
    return abs(etx - old[0]) > threshold


@dataclass
class RoutingTree:
    root: NodeId
    parent: dict[NodeId, NodeId] = field(default_factory=dict)
    cost: dict[NodeId, float] = field(default_factory=dict)

    def digest(self) -> str:
        blob = json.dumps(sorted(self.parent.items())).encode()
        return hashlib.sha1(blob).hexdigest()[:12]


def compute_min_tree(graph: TopologyGraph) -> RoutingTree:
    """Dijkstra towards the root over directed edges (i -> j costs ETX_ij).

    Equal-cost alternatives resolve to the lower parent id.
    """
    incoming: dict[NodeId, list[tuple[NodeId, float]]] = {}
    for i, j, etx in graph.usable():
        incoming.setdefault(j, []).append((i, etx))
    cost: dict[NodeId, float] = {graph.root: 0.0}
    parent: dict[NodeId, NodeId] = {}
    done: set[NodeId] = set()
    heap: list[tuple[float, NodeId]] = [(0.0, graph.root)]
    while heap:
        c, j = heapq.heappop(heap)
        if j in done:
            continue
        done.add(j)
        for i, etx in incoming.get(j, ()):
            if i in done or i == graph.root:
                continue
            new = etx + c
            old = cost.get(i, INF)
            if new < old or (new == old and j < parent[i]):
                cost[i] = new
                parent[i] = j
                heapq.heappush(heap, (new, i))
    return RoutingTree(graph.root, parent, cost)


def diff_commands(old: RoutingTree, new: RoutingTree) -> list[tuple[NodeId, NodeId | None]]:
    nodes = sorted(set(old.parent) | set(new.parent))
    out = []
    for n in nodes:
        p_new = new.parent.get(n)
        if old.parent.get(n) != p_new:
            out.append((n, p_new))
    return out


def apply_commands(parents: dict[NodeId, NodeId], commands) -> dict[NodeId, NodeId]:
    out = dict(parents)
    for node, p in commands:
        if p is None:
            out.pop(node, None)
        else:
            out[node] = p
    return out


def ground_truth_retx(parent_map: dict[NodeId, NodeId | None], graph: TopologyGraph) -> dict[NodeId, float]:
    """Cost of each node's actual route, summed from the graph's latest ETXs.

    A missing, capped or dead link makes the route (and those through it)
    ``inf``.  A parent cycle raises ``RoutingLoopError``.
    """
    out: dict[NodeId, float] = {graph.root: 0.0}

    def resolve(n: NodeId) -> float:
        path = []
        on_path = set()
        cur = n
        while cur not in out:
            if cur in on_path:
                raise RoutingLoopError(f"routing loop through node {cur}: {path}")
            on_path.add(cur)
            path.append(cur)
            p = parent_map.get(cur)
            if p is None:
                out[cur] = INF
                path.pop()
                break
            cur = p
        for node in reversed(path):
            p = parent_map[node]
            link = graph.cost(node, p)
            if link is None or link >= graph.etx_max or node in graph.dead or p in graph.dead:
                out[node] = INF
            else:
                out[node] = link + out[p]
        return out[n]

    for n in sorted(parent_map):
        resolve(n)
    return out


class Controller:
    """Sequential controller state machine used by the engine.

    ``believed`` is the parent the controller last commanded to each node;
    a command is emitted whenever the freshly computed tree disagrees with
    it.  ``forget`` invalidates a belief after a lost or dropped command.
    """

    def __init__(self, root: NodeId, etx_max: float, threshold: float, active: bool):
        self.graph = TopologyGraph(root=root, etx_max=etx_max)
        self.threshold = threshold
        self.active = active
        self.tree = RoutingTree(root)
        self.believed: dict[NodeId, NodeId | None] = {}
        self.dirty = False
        self.recomputes = 0
        self.conflicts = 0
        self.log: list[dict] = []

    def ingest(self, src: NodeId, entries, timestamp: int) -> bool:
        flag = False
        for neighbor, etx in entries:
            flag |= ingest_report(self.graph, Report(src, neighbor, etx, timestamp), self.threshold)
        self.dirty |= flag
        return flag

    def mark_dead(self, node: NodeId) -> None:
        if node not in self.graph.dead:
            self.graph.remove_node(node)
            self.dirty = True

    def mark_alive(self, node: NodeId) -> None:
        if node in self.graph.dead:
            self.graph.dead.discard(node)
            self.dirty = True

    def recompute(self, now: int, trigger: str) -> list[tuple[NodeId, NodeId | None]]:
        self.dirty = False
        self.recomputes += 1
        new = compute_min_tree(self.graph)
        self.tree = new
        commands: list[tuple[NodeId, NodeId | None]] = []
        if self.active:
            known = (set(self.believed) | set(new.parent) | self.graph.nodes()) - self.graph.dead
            for n in sorted(known):
                if n == self.graph.root:
                    continue
                want = new.parent.get(n)
                if n not in self.believed and want is None:
                    continue
                if self.believed.get(n, "unset") != want:
                    commands.append((n, want))
                    self.believed[n] = want
        self.log.append(
            {"t": now, "trigger": trigger, "tree": new.digest(), "commands": [[n, p] for n, p in commands]}
        )
        return commands

    def forget(self, node: NodeId) -> None:
        """A command to ``node`` may not have arrived; resend on the next recompute."""
        self.believed.pop(node, None)
        self.dirty = True
