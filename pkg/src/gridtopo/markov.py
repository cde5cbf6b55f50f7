"""Markov graph of load-node voltages and its Gaussian precision structure.

For an operational tree the voltage variables form an undirected graphical
model whose edges are the tree edges among load nodes plus an edge between
every pair of distinct neighbors of each node. The substation is excluded
(its voltage is the fixed reference, not a random variable); it still acts
as a shared neighbor when forming two-hop edges among load nodes.

The resulting graph is chordal, and graph separation in it is the exact
conditional-independence oracle the topology learner is built on. Under
the dc model with independent Gaussian injections the precision matrix of
the phase angles realizes exactly this support.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridValidationError, ParameterError
from .grid import OperationalTree, edge_key
from .powerflow import LineParams, _laplacian_matrix


class MarkovGraph:
    """Undirected graph over load nodes with a provenance tag."""

    def __init__(self, vertices, edges, provenance: str = "constructed-from-tree"):
        self.vertices = tuple(sorted(vertices))
        vset = set(self.vertices)
        norm = set()
        for (u, v) in edges:
            if u == v or u not in vset or v not in vset:
                raise GridValidationError(f"bad markov edge ({u},{v})")
            norm.add(edge_key(u, v))
        self.edges = frozenset(norm)
        self.provenance = provenance
        adj: dict[int, set[int]] = {v: set() for v in self.vertices}
        for (u, v) in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        self.adjacency = {v: frozenset(s) for v, s in adj.items()}

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)


def voltage_markov_graph(t: OperationalTree) -> MarkovGraph:
    """Tree edges among load nodes plus all pairs of neighbors of a common
    node: one clique per non-leaf node and its immediate neighbors."""
    load = set(t.load_nodes)
    edges: set[tuple[int, int]] = set()
    for (u, v) in t.edges:
        if u in load and v in load:
            edges.add(edge_key(u, v))
    for v in t.order:
        nbrs = sorted(n for n in t.adjacency[v] if n in load)
        for i in range(len(nbrs)):
            for j in range(i + 1, len(nbrs)):
                edges.add(edge_key(nbrs[i], nbrs[j]))
    return MarkovGraph(t.load_nodes, edges, "constructed-from-tree")


def is_chordal(g: MarkovGraph) -> bool:
    """Maximum-cardinality search followed by a perfect-elimination check."""
    order: list[int] = []
    weight = {v: 0 for v in g.vertices}
    unnumbered = set(g.vertices)
    while unnumbered:
        v = max(sorted(unnumbered), key=lambda u: weight[u])
        order.append(v)
        unnumbered.discard(v)
        for u in g.adjacency[v]:
            if u in unnumbered:
                weight[u] += 1
    # reversed MCS order is a candidate perfect elimination ordering
    pos = {v: i for i, v in enumerate(reversed(order))}
    for v in g.vertices:
        later = [u for u in g.adjacency[v] if pos[u] > pos[v]]
        if not later:
            continue
        pivot = min(later, key=lambda u: pos[u])
        for u in later:
            if u != pivot and u not in g.adjacency[pivot]:
                return False
    return True


def separates(g: MarkovGraph, cut: tuple[int, int], c: int, d: int) -> bool:
    """True iff removing the two cut nodes disconnects c from d."""
    a, b = cut
    if len({a, b, c, d}) != 4:
        raise ParameterError("cut nodes and tested nodes must all be distinct")
    for v in (a, b, c, d):
        if v not in g.adjacency:
            raise GridValidationError(f"unknown vertex {v}")
    blocked = {a, b}
    seen = {c}
    stack = [c]
    while stack:
        u = stack.pop()
        if u == d:
            return False
        for w in g.adjacency[u]:
            if w not in seen and w not in blocked:
                seen.add(w)
                stack.append(w)
    return True


@dataclass(frozen=True)
class PrecisionMatrix:
    matrix: np.ndarray
    nodes: tuple[int, ...]


def phase_precision_matrix(t: OperationalTree, lp: LineParams,
                           variances) -> PrecisionMatrix:
    """Exact precision of dc phase angles for independent injections:
    H diag(1/variance) H with H the susceptance-weighted reduced Laplacian."""
    n = len(t.load_nodes)
    var = np.asarray(variances, dtype=float)
    if var.ndim == 0:
        var = np.full(n, float(var))
    if var.shape != (n,):
        raise ParameterError(f"expected {n} injection variances, got {var.shape}")
    if not (var > 0).all():
        raise ParameterError("injection variances must be > 0")
    H = _laplacian_matrix(t, lp.susceptance, require_positive=True)
    return PrecisionMatrix((H * (1.0 / var)) @ H, t.load_nodes)


def precision_support_graph(pm: PrecisionMatrix, tol: float) -> MarkovGraph:
    """Thresholded off-diagonal support: edge (a,b) iff |entry| exceeds
    tol times the largest off-diagonal magnitude."""
    if not (0.0 < tol < 1.0):
        raise ParameterError(f"tol must be in (0,1), got {tol}")
    A = np.abs(pm.matrix.copy())
    np.fill_diagonal(A, 0.0)
    scale = A.max()
    edges = set()
    if scale > 0.0:
        n = len(pm.nodes)
        for i in range(n):
            for j in range(i + 1, n):
                if A[i, j] > tol * scale:
                    edges.add((pm.nodes[i], pm.nodes[j]))
    return MarkovGraph(pm.nodes, edges, "thresholded-from-precision")


def exact_zero_support_graph(pm: PrecisionMatrix) -> MarkovGraph:
    """Support with no threshold at all: edge iff the entry is not exactly 0."""
    n = len(pm.nodes)
    edges = {
        (pm.nodes[i], pm.nodes[j])
        for i in range(n)
        for j in range(i + 1, n)
        if pm.matrix[i, j] != 0.0
    }
    return MarkovGraph(pm.nodes, edges, "thresholded-from-precision")


def empirical_precision(samples: np.ndarray, nodes) -> PrecisionMatrix:
    """Inverse sample covariance; a ridge of 1e-8 * trace / n is added when
    the covariance is too ill-conditioned to invert reliably."""
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(tuple(nodes)):
        raise ParameterError("samples must be (m, n_nodes)")
    cov = np.cov(X, rowvar=False)
    cov = np.atleast_2d(cov)
    n = cov.shape[0]
    if np.linalg.cond(cov) > 1e12:
        cov = cov + np.eye(n) * (1e-8 * np.trace(cov) / n)
    return PrecisionMatrix(np.linalg.inv(cov), tuple(nodes))


def edges_to_text(g: MarkovGraph) -> str:
    """One 'u v' pair per line, for external graph tools."""
    return "\n".join(f"{u} {v}" for u, v in g.sorted_edges()) + "\n"
