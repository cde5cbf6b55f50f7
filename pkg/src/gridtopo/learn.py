"""Two-stage topology learner driven by quartet conditional-independence tests.

Stage one scans every candidate line (a,b): if some witness pair (c,d) with
(a,c) and (b,d) candidate lines tests conditionally independent given the
voltages at a and b, the line is operational and joins two non-leaf nodes.
Stage two peels the discovered non-leaf set from its fringe inward: a
pending node ``a`` with a single pending neighbor is processed by testing
every unattached candidate leaf l against a witness c two recovered hops
away, conditioning on (a, b).

The substation's known line to its child is excluded from the candidate set
(and from error metrics); the learner works entirely on load nodes.

Testers share one interface (``test(mm, c, d, a, b)`` plus a test counter).
Finite-sample testers read measurement columns; the graph-separation and
population-covariance oracles ignore the measurements and answer from the
ground-truth structure, which makes them the reference implementations the
finite-sample path is validated against.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import citest
from .citest import CITestResult, KernelParams, QuartetData
from .errors import (
    DepthAssumptionError,
    GridValidationError,
    MeasurementFormatError,
    NotRadialError,
    ParameterError,
    RootEdgeError,
    StructuralFailureError,
)
from .grid import GridGraph, OperationalTree, edge_key, operational_tree
from .markov import MarkovGraph, separates
from .powerflow import LineParams, _laplacian_matrix
from .rng import hash64
from .sampling import MeasurementMatrix

#: component tested at the two probed nodes, per model (conditioning always
#: uses every measured component of the two conditioning nodes)
PRIMARY_COMPONENT = {"dc": "theta", "lc": "eps", "lindistflow": "phi"}


@dataclass(frozen=True)
class Evidence:
    """The quartet and statistic that triggered one recovered edge."""

    quartet: tuple[int, int] | None
    statistic: float
    method: str


@dataclass(frozen=True)
class TopologyMetrics:
    false_positives: int
    false_negatives: int
    errors: int
    relative_error: float


@dataclass(frozen=True)
class LearnedTopology:
    edges: frozenset
    nonleaf_nodes: frozenset
    leaf_nodes: frozenset  # residual: load nodes never attached anywhere
    evidence: dict
    structural_failure: str | None
    test_count: int


class QuartetTester:
    """Base: counts invocations; subclasses decide one quartet."""

    method = "?"
    needs_measurements = True

    def __init__(self):
        self.count = 0

    def test(self, mm: MeasurementMatrix | None, c: int, d: int,
             a: int, b: int) -> CITestResult:
        self.count += 1
        return self._decide(mm, c, d, a, b)

    def _decide(self, mm, c, d, a, b) -> CITestResult:
        raise NotImplementedError


class SeparationOracleTester(QuartetTester):
    """Exact oracle: graph separation in the true voltage Markov graph."""

    method = "oracle"
    needs_measurements = False

    def __init__(self, gm: MarkovGraph):
        super().__init__()
        self.gm = gm

    def _decide(self, mm, c, d, a, b):
        sep = separates(self.gm, (a, b), c, d)
        return CITestResult(0.0 if sep else 1.0, 0.5, None, sep, self.method)


class ExactPartialCorrTester(QuartetTester):
    """Population-covariance Gaussian oracle over one scalar per node."""

    method = "pcorr-exact"
    needs_measurements = False

    def __init__(self, covariance: np.ndarray, nodes):
        super().__init__()
        self.cov = np.asarray(covariance, dtype=float)
        self.nodes = tuple(nodes)
        self.index = {n: i for i, n in enumerate(self.nodes)}

    @classmethod
    def from_dc_tree(cls, t: OperationalTree, lp: LineParams, variances):
        """Population phase covariance of the dc model with independent
        injections of the given variances."""
        n = len(t.load_nodes)
        var = np.asarray(variances, dtype=float)
        if var.ndim == 0:
            var = np.full(n, float(var))
        H = _laplacian_matrix(t, lp.susceptance, require_positive=True)
        hinv = np.linalg.inv(H)
        return cls(hinv @ np.diag(var) @ hinv, t.load_nodes)

    def _decide(self, mm, c, d, a, b):
        return citest.partial_corr_ci(
            self.cov, self.index[c], self.index[d],
            [self.index[a], self.index[b]], exact=True,
        )


class PartialCorrTester(QuartetTester):
    """Finite-sample Fisher-z partial correlation on measurement columns."""

    method = "pcorr"

    def __init__(self, alpha: float = 0.05):
        super().__init__()
        self.alpha = alpha

    def _decide(self, mm, c, d, a, b):
        comp = PRIMARY_COMPONENT[mm.model]
        cols = [mm.column(c, comp), mm.column(d, comp)]
        data = np.column_stack(cols + [mm.node_block(a), mm.node_block(b)])
        cond = list(range(2, data.shape[1]))
        return citest.partial_corr_ci(data, 0, 1, cond, alpha=self.alpha)


class KernelCITester(QuartetTester):
    """Kernel conditional-independence test on measurement columns.

    The scalar reduction tests one component at the probed nodes given all
    measured components of the conditioning nodes (six real variables under
    the lc model); ``full_complex`` switches the probed nodes to all of
    their components too. Permutation seeds derive from the base seed and
    the quartet ids so parallel execution stays deterministic.
    """

    method = "kci"

    def __init__(self, params: KernelParams, base_seed: int = 0,
                 full_complex: bool = False):
        super().__init__()
        params.validate()
        self.params = params
        self.base_seed = base_seed
        self.full_complex = full_complex

    def _decide(self, mm, c, d, a, b):
        if self.full_complex:
            left, right = mm.node_block(c), mm.node_block(d)
        else:
            comp = PRIMARY_COMPONENT[mm.model]
            left, right = mm.column(c, comp), mm.column(d, comp)
        cond = np.column_stack([mm.node_block(a), mm.node_block(b)])
        q = QuartetData(left, right, cond)
        seed = hash64(hash64(self.base_seed, a, b), c, d)
        return citest.kci_test(q, self.params, seed=seed)


@dataclass(frozen=True)
class CandidateSet:
    """Candidate lines among load nodes (substation lines excluded)."""

    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    adjacency: dict


def candidate_set(g: GridGraph) -> CandidateSet:
    nodes = g.load_nodes
    edges = tuple(sorted(ln.key for ln in g.lines if g.substation not in ln.key))
    adj: dict[int, set[int]] = {n: set() for n in nodes}
    for (u, v) in edges:
        adj[u].add(v)
        adj[v].add(u)
    return CandidateSet(nodes, edges, adj)


def _quartets(adj: dict, a: int, b: int) -> list[tuple[int, int]]:
    excl = {a, b}
    pairs = {
        edge_key(c, d)
        for c in adj[a] - excl
        for d in adj[b] - excl
        if c != d
    }
    return sorted(pairs)


def quartet_test_bound(g: GridGraph) -> int:
    """Budget on CI tests: sum of per-edge witness pairs for the non-leaf
    stage plus |load nodes| * max candidate degree for the leaf stage."""
    cand = candidate_set(g)
    total = sum(len(_quartets(cand.adjacency, a, b)) for (a, b) in cand.edges)
    dmax = max((len(s) for s in cand.adjacency.values()), default=0)
    return total + len(cand.nodes) * dmax


def _check_measurements(mm, g: GridGraph, tester: QuartetTester) -> None:
    if not tester.needs_measurements:
        return
    if mm is None:
        raise ParameterError(f"{tester.method} tester requires measurements")
    missing = set(g.load_nodes) - set(mm.nodes)
    if missing:
        raise MeasurementFormatError(
            f"measurements missing load nodes {sorted(missing)}"
        )


def learn_nonleaf_edges(mm: MeasurementMatrix | None, g: GridGraph,
                        tester: QuartetTester):
    """Stage one: recover operational lines between non-leaf nodes.

    For every candidate line, witness pairs are tried in sorted order and
    the first conditionally-independent verdict adds the line (the search
    for that line then stops). Returns (edges, nonleaf nodes, evidence).
    """
    cand = candidate_set(g)
    if not cand.edges:
        raise GridValidationError("empty candidate set: no lines among load nodes")
    _check_measurements(mm, g, tester)
    edges: list[tuple[int, int]] = []
    vp: set[int] = set()
    evidence: dict = {}
    for (a, b) in cand.edges:
        for (c, d) in _quartets(cand.adjacency, a, b):
            res = tester.test(mm, c, d, a, b)
            if res.independent:
                edges.append((a, b))
                vp.update((a, b))
                evidence[(a, b)] = Evidence((c, d), res.statistic, res.method)
                break
    return edges, vp, evidence


def _find_chain(a: int, remaining: set, rec_adj: dict):
    """Conditioning partner b and witness c for leaf tests at ``a``.

    While ``a`` still has a pending recovered neighbor, conditioning must go
    through it: everything not yet attached then hangs on the far side of
    (a, b), so a positive verdict can only mean the tested leaf is a's
    child. Only a node with no pending neighbors (the last of its subtree)
    may condition through an already-processed neighbor, whose side is
    fully attached by then. The witness c is any third node with a
    recovered edge to b.
    """
    nbrs = sorted(rec_adj.get(a, ()))
    pending = [b for b in nbrs if b in remaining]
    for b in pending if pending else nbrs:
        cs = sorted(rec_adj.get(b, set()) - {a})
        if cs:
            return b, cs[0]
    return None


def attach_leaves(nonleaf_edges, vp: set, mm: MeasurementMatrix | None,
                  g: GridGraph, tester: QuartetTester):
    """Stage two: attach leaf nodes to the discovered non-leaf set.

    Pending non-leaf nodes are processed in peeling order (fringe first:
    at most one recovered edge into the still-pending set). A candidate
    leaf l with a candidate line to ``a`` is attached when the voltages at
    l and at the witness c separate given (a, b).

    When the non-leaf stage found exactly one edge there is no two-edge
    chain yet; the two pending parents are then handled together by
    classifying all leaves into the two conditional-independence sides and
    matching sides to parents through the candidate lines (raising a
    structural failure if that matching is not unique).

    On structural failure the partially recovered state is attached to the
    raised error so callers can salvage it.
    """
    if not vp:
        raise StructuralFailureError("no non-leaf nodes were discovered")
    cand = candidate_set(g)
    _check_measurements(mm, g, tester)
    nonleaf_edges = [edge_key(*e) for e in nonleaf_edges]
    edges: set[tuple[int, int]] = set(nonleaf_edges)
    evidence: dict = {}
    vleaf = set(cand.nodes) - set(vp)
    rec_adj: dict[int, set[int]] = {n: set() for n in cand.nodes}
    for (u, v) in nonleaf_edges:
        rec_adj[u].add(v)
        rec_adj[v].add(u)
    nl_adj = {n: frozenset(s) for n, s in rec_adj.items()}
    remaining = set(vp)

    def fail(msg: str):
        err = StructuralFailureError(msg)
        err.partial = (set(edges), dict(evidence), set(vleaf))
        return err

    def attach(parent: int, leaf: int, ev: Evidence) -> None:
        e = edge_key(parent, leaf)
        edges.add(e)
        evidence[e] = ev
        rec_adj[parent].add(leaf)
        rec_adj[leaf].add(parent)
        vleaf.discard(leaf)

    while remaining:
        deg = {n: len(nl_adj[n] & remaining) for n in remaining}
        peelable = [n for n in sorted(remaining) if deg[n] <= 1]
        picked = None
        for a in sorted(peelable, key=lambda n: (-deg[n], n)):
            chain = _find_chain(a, remaining, rec_adj)
            if chain is not None:
                picked = (a, chain)
                break
        if picked is None:
            if not peelable:
                raise fail("recovered non-leaf edges contain a cycle")
            if len(remaining) == 2 and len(edges) == 1:
                _attach_two_parent_bootstrap(
                    sorted(remaining), vleaf, cand, mm, tester, attach, fail
                )
                return set(edges), evidence, set(vleaf), None
            raise fail(
                f"no conditioning chain for pending non-leaf nodes {sorted(remaining)}"
            )
        a, (b, c) = picked
        for l in sorted(vleaf & cand.adjacency[a]):
            res = tester.test(mm, l, c, a, b)
            if res.independent:
                attach(a, l, Evidence((l, c), res.statistic, res.method))
        remaining.discard(a)
    return set(edges), evidence, set(vleaf), None


def _attach_two_parent_bootstrap(parents, vleaf, cand, mm, tester, attach, fail):
    """Leaf attachment when only one non-leaf edge exists: split the leaves
    into the two sides separated by the parents, then assign each side to
    the unique parent consistent with the candidate lines."""
    a, b = parents
    leaves = sorted(vleaf)
    ref = leaves[0]
    same: list[int] = [ref]
    other: list[int] = []
    results: dict[int, CITestResult] = {}
    for l in leaves[1:]:
        res = tester.test(mm, l, ref, a, b)
        results[l] = res
        (other if res.independent else same).append(l)
    if not other:
        raise fail("bootstrap could not split leaves into two sides")

    def fits(side, parent):
        return all(parent in cand.adjacency[l] for l in side)

    ways = []
    if fits(same, a) and fits(other, b):
        ways.append((a, b))
    if fits(same, b) and fits(other, a):
        ways.append((b, a))
    if len(ways) != 1:
        raise fail(
            "leaf sides cannot be uniquely matched to the two parent nodes"
        )
    p_same, p_other = ways[0]
    ref_res = results[other[0]]
    attach(p_same, ref, Evidence((ref, other[0]), ref_res.statistic, ref_res.method))
    for l in leaves[1:]:
        res = results[l]
        parent = p_other if res.independent else p_same
        witness = ref if res.independent else other[0]
        attach(parent, l, Evidence((l, witness), res.statistic, res.method))


def _tree_depth_or_none(g: GridGraph):
    try:
        return operational_tree(g).depth
    except (NotRadialError, RootEdgeError):
        return None


def learn_topology(mm: MeasurementMatrix | None, g: GridGraph,
                   tester: QuartetTester, *, check_depth: bool = True,
                   strict: bool = True,
                   prune_to_tree: bool = False) -> LearnedTopology:
    """Run both stages and collect evidence.

    The depth guard uses the ground-truth operational statuses when they
    form a valid tree (simulation mode); otherwise it warns and proceeds,
    since the depth of an unknown tree is not observable. With
    ``strict=False`` a leaf-stage structural failure is recorded on the
    result instead of raised, keeping the recovered partial edge set.
    """
    if check_depth:
        depth = _tree_depth_or_none(g)
        if depth is None:
            warnings.warn(
                "operational statuses do not form a radial tree; "
                "depth assumption cannot be verified", stacklevel=2,
            )
        elif depth <= 3:
            raise DepthAssumptionError(
                f"operational tree depth {depth} <= 3: leaf sets are not "
                "distinguishable by quartet tests"
            )
    start_count = tester.count
    nl_edges, vp, nl_evidence = learn_nonleaf_edges(mm, g, tester)
    failure = None
    if vp:
        try:
            edges, leaf_evidence, vleaf, failure = attach_leaves(
                nl_edges, vp, mm, g, tester
            )
        except StructuralFailureError as err:
            if strict:
                raise
            failure = str(err)
            edges, leaf_evidence, vleaf = getattr(
                err, "partial", (set(nl_edges), {}, set(g.load_nodes) - vp)
            )
    else:
        failure = "no non-leaf edges were discovered"
        if strict:
            raise StructuralFailureError(failure)
        edges, leaf_evidence, vleaf = set(), {}, set(g.load_nodes)
    evidence = {**nl_evidence, **leaf_evidence}
    if prune_to_tree:
        edges = _prune_to_tree(edges, evidence)
    return LearnedTopology(
        edges=frozenset(edges),
        nonleaf_nodes=frozenset(vp),
        leaf_nodes=frozenset(vleaf),
        evidence=evidence,
        structural_failure=failure,
        test_count=tester.count - start_count,
    )


def _find_cycle(edges: set) -> list | None:
    adj: dict[int, set[int]] = {}
    for (u, v) in edges:
        adj.setdefault(u, set()).add(v)
        adj.setdefault(v, set()).add(u)
    parent_of: dict[int, int | None] = {}
    for start in sorted(adj):
        if start in parent_of:
            continue
        parent_of[start] = None
        stack = [(start, iter(sorted(adj[start])))]
        while stack:
            u, it = stack[-1]
            for w in it:
                if w == parent_of[u]:
                    continue
                if w not in parent_of:
                    parent_of[w] = u
                    stack.append((w, iter(sorted(adj[w]))))
                    break
                # back edge to an ancestor: walk up from u to w
                cyc = [edge_key(u, w)]
                node = u
                while node != w:
                    cyc.append(edge_key(node, parent_of[node]))
                    node = parent_of[node]
                return cyc
            else:
                stack.pop()
    return None


def _prune_to_tree(edges: set, evidence: dict) -> set:
    """Break cycles by repeatedly deleting the in-cycle edge whose
    triggering statistic is largest (weakest independence evidence)."""
    edges = set(edges)
    while True:
        cyc = _find_cycle(edges)
        if cyc is None:
            return edges
        worst = max(
            cyc, key=lambda e: (evidence[e].statistic if e in evidence else 0.0, e)
        )
        edges.discard(worst)


def evaluate_topology(learned: LearnedTopology, truth: OperationalTree
                      ) -> TopologyMetrics:
    """Edge-set errors relative to the true operational tree; the known
    substation line is excluded from both sides."""
    truth_edges = {e for e in truth.edges if truth.root not in e}
    load = set(truth.load_nodes)
    for (u, v) in learned.edges:
        if u not in load or v not in load:
            raise GridValidationError(
                f"learned edge ({u},{v}) is outside the load-node universe"
            )
    fp = len(learned.edges - truth_edges)
    fn = len(truth_edges - learned.edges)
    return TopologyMetrics(fp, fn, fp + fn, (fp + fn) / len(truth_edges))


def export_topology(learned: LearnedTopology,
                    metrics: TopologyMetrics | None = None) -> str:
    """Edge list 'u v statistic' plus a summary block."""
    out = []
    for (u, v) in sorted(learned.edges):
        ev = learned.evidence.get((u, v))
        stat = ev.statistic if ev is not None else 0.0
        out.append(f"{u} {v} {stat:.17g}")
    if learned.structural_failure:
        out.append(f"# structural-failure: {learned.structural_failure}")
    if metrics is not None:
        out.append(
            f"# summary fp={metrics.false_positives} fn={metrics.false_negatives} "
            f"errors={metrics.errors} relative_error={metrics.relative_error:.17g}"
        )
    else:
        out.append("# summary unavailable (no ground truth)")
    return "\n".join(out) + "\n"
