import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import ABSENT, bellman_ford, exhaustive_costs, graph_classes, random_graph, to_graph

from loracp.controller import (
    Controller,
    Report,
    RoutingLoopError,
    RoutingTree,
    TopologyGraph,
    apply_commands,
    compute_min_tree,
    diff_commands,
    ground_truth_retx,
    ingest_report,
)
from loracp.core import rng_stream


def test_ingest_new_edge_sets_flag():
    g = TopologyGraph(root=0)
    assert ingest_report(g, Report(1, 0, 1.5, 10))
    assert g.cost(1, 0) == 1.5


def test_ingest_repeat_is_idempotent():
    g = TopologyGraph(root=0)
    ingest_report(g, Report(1, 0, 1.5, 10))
    assert not ingest_report(g, Report(1, 0, 1.5, 20))
    assert not ingest_report(g, Report(1, 0, 1.55, 30))
    assert ingest_report(g, Report(1, 0, 1.8, 40))


def test_ingest_older_report_ignored():
    g = TopologyGraph(root=0)
    ingest_report(g, Report(1, 0, 2.0, 100))
    before = dict(g.edges)
    assert not ingest_report(g, Report(1, 0, 9.0, 50))
    assert g.edges == before and g.stale_reports == 1


def test_ingest_clamps_below_one():
    g = TopologyGraph(root=0)
    ingest_report(g, Report(1, 0, 0.4, 1))
    assert g.cost(1, 0) == 1.0


def test_triangle():
    g = to_graph({(1, 0): 1.0, (2, 0): 3.0, (2, 1): 1.5})
    t = compute_min_tree(g)
    assert t.parent == {1: 0, 2: 1}
    assert t.cost[2] == pytest.approx(2.5)


def test_root_only():
    t = compute_min_tree(TopologyGraph(root=0))
    assert t.parent == {} and t.cost == {0: 0.0}


def test_capped_and_dead_edges_are_unusable():
    g = to_graph({(1, 0): 20.0, (2, 0): 1.0, (1, 2): 1.0})
    t = compute_min_tree(g)
    assert t.parent[1] == 2
    g.remove_node(2)
    assert 1 not in compute_min_tree(g).parent


def test_tie_break_lower_parent():
    g = to_graph({(1, 0): 1.0, (2, 0): 1.0, (3, 1): 1.0, (3, 2): 1.0})
    assert compute_min_tree(g).parent[3] == 1


@pytest.mark.parametrize("seed", range(100))
def test_dijkstra_equals_bellman_ford(seed):
    rng = rng_stream(seed, "graph")
    n = int(rng.integers(2, 9))
    edges = random_graph(rng, n)
    usable = {k: v for k, v in edges.items() if v < 20.0}
    oracle = bellman_ford(n, 0, usable)
    tree = compute_min_tree(to_graph(edges))
    for v in range(n):
        assert tree.cost.get(v, math.inf) == oracle[v]


def _check_enumeration(n, values):
    pairs, combos = graph_classes(n, values)
    oracle = exhaustive_costs(n, pairs, combos)
    for g_idx, row in enumerate(combos):
        edges = {}
        for (a, b), c in zip(pairs, row):
            if c < ABSENT:
                edges[(a, b)] = edges[(b, a)] = float(c)
        tree = compute_min_tree(to_graph(edges))
        for v in range(1, n):
            assert tree.cost.get(v, math.inf) == oracle[v][g_idx]


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_dijkstra_exhaustive_small_graphs(n):
    # every pair is absent or costs 1, 2 or 3; one graph per relabelling class
    _check_enumeration(n, [1.0, 2.0, 3.0, ABSENT])


@given(st.integers(0, 10_000))
def test_tree_cost_consistent_with_ground_truth(seed):
    rng = rng_stream(seed, "g")
    n = int(rng.integers(2, 9))
    g = to_graph(random_graph(rng, n))
    tree = compute_min_tree(g)
    truth = ground_truth_retx(tree.parent, g)
    for v, c in tree.cost.items():
        assert truth[v] == pytest.approx(c)


def test_diff_identical_and_single_flip():
    a = RoutingTree(0, {1: 0, 2: 1, 3: 1})
    assert diff_commands(a, RoutingTree(0, dict(a.parent))) == []
    b = RoutingTree(0, {1: 0, 2: 0, 3: 1})
    assert diff_commands(a, b) == [(2, 0)]
    c = RoutingTree(0, {1: 0, 2: 1})
    assert diff_commands(a, c) == [(3, None)]


@given(
    st.dictionaries(st.integers(1, 12), st.integers(0, 12), max_size=10),
    st.dictionaries(st.integers(1, 12), st.integers(0, 12), max_size=10),
)
def test_apply_diff_reaches_new_tree(old, new):
    cmds = diff_commands(RoutingTree(0, old), RoutingTree(0, new))
    assert apply_commands(old, cmds) == new
    # applying twice changes nothing
    assert apply_commands(apply_commands(old, cmds), cmds) == new


def test_ground_truth_sum_and_breaks():
    g = to_graph({(2, 1): 2.5, (1, 0): 1.0})
    assert ground_truth_retx({1: 0, 2: 1}, g)[2] == pytest.approx(3.5)
    assert math.isinf(ground_truth_retx({1: 0, 2: 3, 3: 0}, g)[2])
    g.remove_node(1)
    assert math.isinf(ground_truth_retx({1: 0, 2: 1}, g)[2])


def test_ground_truth_detects_loops():
    g = to_graph({(1, 2): 1.0, (2, 1): 1.0})
    with pytest.raises(RoutingLoopError):
        ground_truth_retx({1: 2, 2: 1}, g)


def test_any_tree_costs_at_least_optimal():
    rng = rng_stream(3, "dominance")
    for _ in range(200):
        n = int(rng.integers(3, 9))
        g = to_graph(random_graph(rng, n, 0.7))
        best = compute_min_tree(g).cost
        # a random loop-free parent map: each node points to a lower id
        parent = {v: int(rng.integers(0, v)) for v in range(1, n)}
        truth = ground_truth_retx(parent, g)
        for v in range(1, n):
            assert truth[v] >= best.get(v, math.inf) - 1e-12 or math.isinf(best.get(v, math.inf))


def test_controller_commands_only_on_change():
    c = Controller(root=0, etx_max=20.0, threshold=0.1, active=True)
    c.ingest(1, [(0, 1.0)], 0)
    c.ingest(2, [(0, 3.0), (1, 1.0)], 0)
    assert c.recompute(0, "report") == [(1, 0), (2, 1)]
    assert c.recompute(1, "report") == []
    c.ingest(2, [(1, 5.0)], 10)
    assert c.recompute(10, "report") == [(2, 0)]
    c.forget(2)
    assert c.recompute(11, "nak") == [(2, 0)]
    assert len(c.log) == 4 and c.recomputes == 4


def test_controller_dead_node():
    c = Controller(root=0, etx_max=20.0, threshold=0.1, active=True)
    c.ingest(1, [(0, 1.0)], 0)
    c.ingest(2, [(1, 1.0)], 0)
    c.recompute(0, "report")
    c.mark_dead(1)
    assert c.dirty
    assert c.recompute(5, "liveness") == [(2, None)]


def test_passive_controller_never_commands():
    c = Controller(root=0, etx_max=20.0, threshold=0.1, active=False)
    c.ingest(1, [(0, 1.0)], 0)
    assert c.recompute(0, "report") == []
    assert c.tree.parent == {1: 0}


def test_digest_stable():
    a = RoutingTree(0, {2: 1, 1: 0})
    b = RoutingTree(0, {1: 0, 2: 1})
    assert a.digest() == b.digest()
