"""Candidate grid graph, its operational radial tree, and neighborhood queries.

The grid-description format is line oriented (UTF-8, ``#`` starts a comment):

    node <id> [substation]
    edge <a> <b> r=<float> x=<float> status=<operational|open>

Node ids are non-negative integers; exactly one node is the substation.
Edges are simple (no self-loops, no parallel edges) and every edge needs a
strictly positive reactance so the derived line weights stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import (
    GridParseError,
    GridValidationError,
    NotRadialError,
    RootEdgeError,
)

OPERATIONAL = "operational"
OPEN = "open"


def edge_key(a: int, b: int) -> tuple[int, int]:
    """Canonical unordered form of an edge."""
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class Line:
    a: int
    b: int
    r: float
    x: float
    status: str

    @property
    def key(self) -> tuple[int, int]:
        return edge_key(self.a, self.b)


class GridGraph:
    """Immutable candidate network: all lines, operational or open."""

    def __init__(self, nodes, substation: int, lines):
        self.nodes = tuple(sorted(nodes))
        self.substation = int(substation)
        self.lines = tuple(
            sorted(lines, key=lambda ln: ln.key)
        )
        self._validate()
        self.load_nodes = tuple(n for n in self.nodes if n != self.substation)
        self.adjacency: dict[int, frozenset[int]] = {}
        adj: dict[int, set[int]] = {n: set() for n in self.nodes}
        for ln in self.lines:
            adj[ln.a].add(ln.b)
            adj[ln.b].add(ln.a)
        self.adjacency = {n: frozenset(s) for n, s in adj.items()}
        self.line_by_key = {ln.key: ln for ln in self.lines}

    def _validate(self) -> None:
        if len(set(self.nodes)) != len(self.nodes):
            raise GridValidationError("duplicate node ids")
        if any(n < 0 for n in self.nodes):
            raise GridValidationError("node ids must be non-negative")
        node_set = set(self.nodes)
        if self.substation not in node_set:
            raise GridValidationError("substation id is not a declared node")
        seen: set[tuple[int, int]] = set()
        for ln in self.lines:
            if ln.a == ln.b:
                raise GridValidationError(f"self-loop at node {ln.a}")
            if ln.a not in node_set or ln.b not in node_set:
                raise GridValidationError(f"edge ({ln.a},{ln.b}) references unknown node")
            if ln.key in seen:
                raise GridValidationError(f"parallel edge ({ln.key[0]},{ln.key[1]})")
            seen.add(ln.key)
            if not (ln.x > 0.0):
                raise GridValidationError(
                    f"edge ({ln.a},{ln.b}) needs reactance x > 0, got {ln.x}"
                )
            if ln.r < 0.0:
                raise GridValidationError(
                    f"edge ({ln.a},{ln.b}) needs resistance r >= 0, got {ln.r}"
                )
            if ln.status not in (OPERATIONAL, OPEN):
                raise GridValidationError(f"unknown status {ln.status!r}")

    @property
    def operational_lines(self) -> tuple[Line, ...]:
        return tuple(ln for ln in self.lines if ln.status == OPERATIONAL)

    def degree(self, n: int) -> int:
        return len(self.adjacency[n])


def parse_grid(text: str) -> GridGraph:
    """Parse a grid-description document into a validated GridGraph."""
    nodes: list[int] = []
    substations: list[int] = []
    lines: list[Line] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        tokens = body.split()
        kind = tokens[0]
        if kind == "node":
            if len(tokens) not in (2, 3):
                raise GridParseError("expected 'node <id> [substation]'", line_no)
            try:
                nid = int(tokens[1])
            except ValueError:
                raise GridParseError(f"bad node id {tokens[1]!r}", line_no) from None
            if len(tokens) == 3:
                if tokens[2] != "substation":
                    raise GridParseError(f"unexpected token {tokens[2]!r}", line_no)
                substations.append(nid)
            nodes.append(nid)
        elif kind == "edge":
            if len(tokens) != 6:
                raise GridParseError(
                    "expected 'edge <a> <b> r=<f> x=<f> status=<s>'", line_no
                )
            try:
                a, b = int(tokens[1]), int(tokens[2])
            except ValueError:
                raise GridParseError("bad edge endpoints", line_no) from None
            vals = {}
            for tok, key in zip(tokens[3:], ("r", "x", "status")):
                if not tok.startswith(key + "="):
                    raise GridParseError(f"expected {key}=..., got {tok!r}", line_no)
                vals[key] = tok[len(key) + 1 :]
            try:
                r, x = float(vals["r"]), float(vals["x"])
            except ValueError:
                raise GridParseError("bad impedance value", line_no) from None
            lines.append(Line(a, b, r, x, vals["status"]))
        else:
            raise GridParseError(f"unknown directive {kind!r}", line_no)
    if len(substations) != 1:
        raise GridValidationError(
            f"exactly one substation required, found {len(substations)}"
        )
    return GridGraph(nodes, substations[0], lines)


def grid_to_text(g: GridGraph) -> str:
    """Serialize a GridGraph back to the line-oriented document format."""
    out = []
    for n in g.nodes:
        out.append(f"node {n} substation" if n == g.substation else f"node {n}")
    for ln in g.lines:
        a, b = ln.key
        out.append(f"edge {a} {b} r={ln.r:.17g} x={ln.x:.17g} status={ln.status}")
    return "\n".join(out) + "\n"


class OperationalTree:
    """The radial operational topology rooted at the substation."""

    def __init__(self, grid: GridGraph, root: int, parent: dict[int, int],
                 adjacency: dict[int, frozenset[int]], depth: int,
                 order: tuple[int, ...]):
        self.grid = grid
        self.root = root
        self.parent = parent
        self.adjacency = adjacency
        self.depth = depth
        #: nodes in BFS order from the root (root first)
        self.order = order
        self.load_nodes = tuple(n for n in order if n != root)
        self.index = {n: i for i, n in enumerate(self.load_nodes)}
        self.edges = frozenset(edge_key(n, p) for n, p in parent.items())
        self.children: dict[int, tuple[int, ...]] = {n: () for n in order}
        kids: dict[int, list[int]] = {n: [] for n in order}
        for n in order:
            if n != root:
                kids[parent[n]].append(n)
        self.children = {n: tuple(sorted(c)) for n, c in kids.items()}


def operational_tree(g: GridGraph) -> OperationalTree:
    """Extract and validate the radial tree induced by operational lines."""
    adj: dict[int, set[int]] = {n: set() for n in g.nodes}
    n_edges = 0
    for ln in g.operational_lines:
        adj[ln.a].add(ln.b)
        adj[ln.b].add(ln.a)
        n_edges += 1
    root = g.substation
    if len(adj[root]) != 1:
        raise RootEdgeError(
            f"substation must have exactly one operational edge, has {len(adj[root])}"
        )
    parent: dict[int, int] = {}
    dist = {root: 0}
    order = [root]
    frontier = [root]
    while frontier:
        nxt: list[int] = []
        for u in frontier:
            for v in sorted(adj[u]):
                if v not in dist:
                    dist[v] = dist[u] + 1
                    parent[v] = u
                    order.append(v)
                    nxt.append(v)
        frontier = nxt
    if len(order) != len(g.nodes):
        missing = sorted(set(g.nodes) - set(order))
        raise NotRadialError(f"operational edges do not reach nodes {missing}")
    if n_edges != len(g.nodes) - 1:
        raise NotRadialError("operational edges contain a cycle")
    depth = max(dist.values())
    return OperationalTree(
        g, root, parent,
        {n: frozenset(s) for n, s in adj.items()},
        depth, tuple(order),
    )


def tree_to_grid(t: OperationalTree) -> GridGraph:
    """GridGraph containing only the tree's operational lines."""
    lines = [t.grid.line_by_key[e] for e in sorted(t.edges)]
    return GridGraph(t.order, t.root, lines)


def two_hop_neighborhood(t: OperationalTree, a: int) -> set[int]:
    """All nodes at tree distance 1 or 2 from ``a``, excluding ``a``."""
    if a not in t.adjacency:
        raise GridValidationError(f"unknown node id {a}")
    out: set[int] = set()
    for b in t.adjacency[a]:
        out.add(b)
        out.update(t.adjacency[b])
    out.discard(a)
    return out


def candidate_quartets(g: GridGraph, ab: tuple[int, int]) -> list[tuple[int, int]]:
    """Conditioning-pair witnesses for edge ``ab``: unordered (c, d) with
    (a,c) and (b,d) candidate lines and c, d distinct from a, b and each other.
    """
    a, b = ab
    if edge_key(a, b) not in g.line_by_key:
        raise GridValidationError(f"({a},{b}) is not a candidate line")
    excl = {a, b}
    cs = sorted(g.adjacency[a] - excl)
    ds = sorted(g.adjacency[b] - excl)
    pairs = {edge_key(c, d) for c in cs for d in ds if c != d}
    return sorted(pairs)


def max_degree(g: GridGraph) -> int:
    """Largest node degree in the candidate line set."""
    return max((len(v) for v in g.adjacency.values()), default=0)
