"""Shared fixtures and instance generators for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from gridtopo import (
    FEEDER_LOOPY,
    FEEDER_TREE,
    GridGraph,
    Line,
    load_bundled_grid,
    operational_tree,
)
from gridtopo.grid import edge_key


def make_grid(n, edges, open_edges=(), seed=0):
    """GridGraph on nodes 0..n-1 (substation 0) with deterministic impedances."""
    gen = np.random.default_rng(seed)
    lines = [
        Line(*edge_key(a, b), round(float(gen.uniform(0.01, 0.06)), 6),
             round(float(gen.uniform(0.02, 0.10)), 6), "operational")
        for (a, b) in sorted(edge_key(*e) for e in edges)
    ]
    lines += [
        Line(*edge_key(a, b), round(float(gen.uniform(0.01, 0.06)), 6),
             round(float(gen.uniform(0.02, 0.10)), 6), "open")
        for (a, b) in sorted(edge_key(*e) for e in open_edges)
    ]
    return GridGraph(range(n), 0, lines)


def path_grid(n, open_edges=(), seed=0):
    """Path 0-1-...-(n-1) with node 0 as substation."""
    return make_grid(n, [(i, i + 1) for i in range(n - 1)], open_edges, seed)


def random_tree_grid(seed, n_lo=5, n_hi=14, min_depth=None):
    """Random radial grid: root 0 with one child, random attachment tree."""
    gen = np.random.default_rng(seed)
    while True:
        n = int(gen.integers(n_lo, n_hi + 1))
        parent = {1: 0}
        for i in range(2, n):
            parent[i] = int(gen.integers(1, i))
        g = make_grid(n, [(p, c) for c, p in parent.items()],
                      seed=int(gen.integers(0, 2**31)))
        if min_depth is None or operational_tree(g).depth > min_depth:
            return g


def _nonleaf_load_nodes(t):
    load = set(t.load_nodes)
    return sorted(
        v for v in load if len([u for u in t.adjacency[v] if u in load]) >= 2
    )


def _swap_ambiguous(g, t):
    """True for the one unlearnable family: exactly two non-leaf load nodes
    where the spurious lines make the swapped leaf assignment candidate-
    consistent too, so no conditional-independence method can pick a side."""
    nonleaf = _nonleaf_load_nodes(t)
    if len(nonleaf) != 2:
        return False
    a, b = nonleaf
    load = set(t.load_nodes)
    side_a = [l for l in load - {a, b} if a in t.adjacency[l]]
    side_b = [l for l in load - {a, b} if b in t.adjacency[l]]
    return all(b in g.adjacency[l] for l in side_a) and all(
        a in g.adjacency[l] for l in side_b
    )


def random_learning_instance(seed, n_lo=6, n_hi=14):
    """Random depth>3 tree plus up to n random open candidate lines,
    resampled past provably side-ambiguous configurations."""
    gen = np.random.default_rng(seed)
    while True:
        n = int(gen.integers(n_lo, n_hi + 1))
        parent = {1: 0}
        for i in range(2, n):
            parent[i] = int(gen.integers(1, i))
        edges = [edge_key(p, c) for c, p in parent.items()]
        lines = [
            Line(a, b, float(gen.uniform(0.01, 0.06)),
                 float(gen.uniform(0.02, 0.10)), "operational")
            for a, b in sorted(edges)
        ]
        g0 = GridGraph(range(n), 0, lines)
        t = operational_tree(g0)
        if t.depth <= 3:
            continue
        load = list(range(1, n))
        non = [
            (u, v)
            for i, u in enumerate(load)
            for v in load[i + 1 :]
            if edge_key(u, v) not in g0.line_by_key
        ]
        k = int(gen.integers(0, min(n, len(non)) + 1))
        pick = (
            [non[i] for i in gen.choice(len(non), size=k, replace=False)]
            if k
            else []
        )
        lines2 = lines + [
            Line(a, b, float(gen.uniform(0.01, 0.06)),
                 float(gen.uniform(0.02, 0.10)), "open")
            for a, b in sorted(pick)
        ]
        g = GridGraph(range(n), 0, lines2)
        if not _swap_ambiguous(g, t):
            return g, t


@pytest.fixture(scope="session")
def feeder_tree():
    return load_bundled_grid(FEEDER_TREE)


@pytest.fixture(scope="session")
def feeder_loopy():
    return load_bundled_grid(FEEDER_LOOPY)
