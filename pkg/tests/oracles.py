"""Reference implementations used only by the tests."""

import itertools
import math

import numpy as np

from loracp.controller import TopologyGraph

ABSENT = 1e9


def bellman_ford(n_nodes, root, edges):
    """Shortest cost from every node to ``root`` over directed ``edges`` {(i, j): cost}."""
    dist = {v: math.inf for v in range(n_nodes)}
    dist[root] = 0.0
    for _ in range(n_nodes - 1):
        changed = False
        for (i, j), c in edges.items():
            if dist[j] + c < dist[i]:
                dist[i] = dist[j] + c
                changed = True
        if not changed:
            break
    return dist


def random_graph(rng, n_nodes, p_edge=0.5, etx_max=20.0):
    edges = {}
    for i in range(n_nodes):
        for j in range(n_nodes):
            if i != j and rng.random() < p_edge:
                edges[(i, j)] = float(rng.uniform(1.0, etx_max * 1.2))
    return edges


def to_graph(edges, root=0, etx_max=20.0):
    return TopologyGraph(root=root, edges={k: (v, 0) for k, v in edges.items()}, etx_max=etx_max)


def simple_paths_to_root(n_nodes, root=0):
    """Every simple path from each non-root node to ``root``, as lists of undirected edges."""
    others = [v for v in range(n_nodes) if v != root]
    out = {v: [] for v in others}
    for v in others:
        rest = [u for u in others if u != v]
        for k in range(len(rest) + 1):
            for mid in itertools.permutations(rest, k):
                nodes = [v, *mid, root]
                out[v].append([tuple(sorted(e)) for e in zip(nodes, nodes[1:])])
    return out


def exhaustive_costs(n_nodes, pairs, cost_matrix, root=0):
    """Vectorised min over simple paths; ``cost_matrix`` is (graphs, len(pairs))."""
    col = {p: k for k, p in enumerate(pairs)}
    paths = simple_paths_to_root(n_nodes, root)
    result = {}
    for v, plist in paths.items():
        inc = np.zeros((len(plist), len(pairs)))
        for r, path in enumerate(plist):
            for e in path:
                inc[r, col[e]] += 1
        totals = cost_matrix @ inc.T
        best = totals.min(axis=1)
        best[best >= ABSENT] = math.inf
        result[v] = best
    return result


def graph_classes(n_nodes, values, root=0):
    """One cost row per isomorphism class (relabelling non-root nodes) of undirected graphs.

    Each node pair independently takes one entry of ``values``.
    """
    pairs = list(itertools.combinations(range(n_nodes), 2))
    k = len(values)
    weights = k ** np.arange(len(pairs) - 1, -1, -1, dtype=np.int64)
    codes = np.arange(k ** len(pairs), dtype=np.int64)
    digits = (codes[:, None] // weights) % k
    fdigits = digits.astype(float)  # float matmul is exact here and much faster
    canon = codes.copy()
    others = [v for v in range(n_nodes) if v != root]
    col = {p: c for c, p in enumerate(pairs)}
    for perm in itertools.permutations(others):
        relabel = {root: root, **dict(zip(others, perm))}
        order = [col[tuple(sorted((relabel[a], relabel[b])))] for a, b in pairs]
        canon = np.minimum(canon, (fdigits @ weights[order].astype(float)).astype(np.int64))
    keep = codes == canon
    return pairs, np.asarray(values, dtype=float)[digits[keep]]
