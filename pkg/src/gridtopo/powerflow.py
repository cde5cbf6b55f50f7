"""Lossless linearized power-flow solvers on the operational tree.

Three forward models map nodal injections to nodal voltages:

* ``dc`` -- active injections to phase angles through the susceptance-weighted
  reduced Laplacian (purely inductive lines, unit magnitudes).
* ``lc`` -- active and reactive injections jointly to (phase, magnitude
  deviation) through the coupled susceptance/conductance system.
* ``lindistflow`` -- injections to squared voltage magnitudes via directed
  line flows accumulated leaf-to-root.

Sign convention: ``InjectionVector`` always stores *net* injection
(generation minus consumption). The lindistflow solver converts to
consumption internally because its flow recursion aggregates demand.
Reference values at the substation are phase 0, magnitude 1, squared
magnitude 1; stored vectors cover load nodes only, in ``tree.load_nodes``
order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridValidationError, ModelMismatchError, ParameterError
from .grid import GridGraph, OperationalTree, edge_key

MODELS = ("dc", "lc", "lindistflow")

#: measured voltage components per model, in measurement-column order
MODEL_COMPONENTS = {"dc": ("theta",), "lc": ("theta", "eps"), "lindistflow": ("phi",)}


class LineParams:
    """Per-line weights derived from impedance z = r + ix:

    susceptance-like  x / (x^2 + r^2)   (always > 0)
    conductance-like  r / (x^2 + r^2)   (>= 0)
    """

    def __init__(self, grid: GridGraph):
        self.susceptance: dict[tuple[int, int], float] = {}
        self.conductance: dict[tuple[int, int], float] = {}
        for ln in grid.lines:
            denom = ln.x * ln.x + ln.r * ln.r
            self.susceptance[ln.key] = ln.x / denom
            self.conductance[ln.key] = ln.r / denom


@dataclass(frozen=True)
class InjectionVector:
    """Net per-load-node injections, ordered like ``tree.load_nodes``."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        if p.shape != q.shape or p.ndim != 1:
            raise ParameterError("p and q must be 1-d arrays of equal length")
        if not (np.isfinite(p).all() and np.isfinite(q).all()):
            raise ParameterError("injections must be finite")


@dataclass(frozen=True)
class LineFlows:
    """Directed flows on tree edges, keyed (parent, child)."""

    p: dict[tuple[int, int], float]
    q: dict[tuple[int, int], float]


@dataclass(frozen=True)
class ReducedLaplacian:
    """Weighted tree Laplacian with the substation row/column removed."""

    matrix: np.ndarray
    nodes: tuple[int, ...]
    kind: str = "generic"


def reduced_laplacian(t: OperationalTree, weights: dict, kind: str = "generic"
                      ) -> ReducedLaplacian:
    """Build the reduced weighted Laplacian over load nodes.

    ``weights`` must assign a strictly positive value to every tree edge
    (root edge included; it contributes only to the diagonal of the root's
    child). The result is symmetric positive definite.
    """
    return ReducedLaplacian(
        _laplacian_matrix(t, weights, require_positive=True), t.load_nodes, kind
    )


def _laplacian_matrix(t: OperationalTree, weights: dict,
                      require_positive: bool) -> np.ndarray:
    n = len(t.load_nodes)
    H = np.zeros((n, n))
    for e in t.edges:
        if e not in weights:
            raise ParameterError(f"missing weight for tree edge {e}")
        w = float(weights[e])
        if require_positive and not (w > 0.0):
            raise ParameterError(f"weight for edge {e} must be > 0, got {w}")
        if w < 0.0:
            raise ParameterError(f"weight for edge {e} must be >= 0, got {w}")
        a, b = e
        ia = t.index.get(a)
        ib = t.index.get(b)
        if ia is not None:
            H[ia, ia] += w
        if ib is not None:
            H[ib, ib] += w
        if ia is not None and ib is not None:
            H[ia, ib] -= w
            H[ib, ia] -= w
    return H


def _tree_edge_weights(t: OperationalTree, weights: dict) -> dict:
    missing = [e for e in t.edges if e not in weights]
    if missing:
        raise ParameterError(f"missing weights for tree edges {sorted(missing)}")
    return {e: float(weights[e]) for e in t.edges}


def solve_dc(t: OperationalTree, lp: LineParams, p) -> np.ndarray:
    """Phase angles from active injections, by two O(n) tree traversals.

    Leaf-to-root pass accumulates the net injection of every subtree (the
    flow entering it from its parent edge); root-to-leaf pass integrates
    angle steps flow / susceptance, with the substation pinned at 0.
    """
    p = np.asarray(p, dtype=float)
    n = len(t.load_nodes)
    if p.shape != (n,):
        raise ParameterError(f"expected {n} active injections, got shape {p.shape}")
    beta = _tree_edge_weights(t, lp.susceptance)
    subtree = {}
    for v in reversed(t.order):
        if v == t.root:
            continue
        s = p[t.index[v]]
        for c in t.children[v]:
            s += subtree[c]
        subtree[v] = s
    theta = np.zeros(n)
    for v in t.order:
        if v == t.root:
            continue
        u = t.parent[v]
        base = 0.0 if u == t.root else theta[t.index[u]]
        theta[t.index[v]] = base + subtree[v] / beta[edge_key(u, v)]
    return theta


def _lc_blocks(t: OperationalTree, lp: LineParams) -> tuple[np.ndarray, np.ndarray]:
    hb = _laplacian_matrix(t, lp.susceptance, require_positive=True)
    hg = _laplacian_matrix(t, lp.conductance, require_positive=False)
    return hb, hg


def solve_lc(t: OperationalTree, lp: LineParams, inj: InjectionVector
             ) -> tuple[np.ndarray, np.ndarray]:
    """Jointly solve for (phase, magnitude deviation) under the coupled model.

    Solves the real 2n x 2n block system

        [ Hb  Hg ] [theta]   [p]
        [-Hg  Hb ] [eps  ] = [q]

    which is nonsingular whenever Hb is positive definite.
    """
    n = len(t.load_nodes)
    if inj.p.shape != (n,):
        raise ParameterError(f"expected {n} injections, got {inj.p.shape}")
    hb, hg = _lc_blocks(t, lp)
    M = np.block([[hb, hg], [-hg, hb]])
    rhs = np.concatenate([inj.p, inj.q])
    sol = np.linalg.solve(M, rhs)
    return sol[:n], sol[n:]


def solve_lindistflow(t: OperationalTree, g: GridGraph, inj: InjectionVector
                      ) -> tuple[np.ndarray, LineFlows]:
    """Squared voltage magnitudes and directed line flows.

    Converts net injections to consumptions, accumulates flows leaf-to-root
    (flow into a node equals its consumption plus all downstream flows) and
    then propagates squared magnitudes root-to-leaf:

        phi_child = phi_parent - 2 (r * p_flow + x * q_flow),  phi_root = 1.
    """
    n = len(t.load_nodes)
    if inj.p.shape != (n,):
        raise ParameterError(f"expected {n} injections, got {inj.p.shape}")
    cons_p = -inj.p
    cons_q = -inj.q
    pf: dict[tuple[int, int], float] = {}
    qf: dict[tuple[int, int], float] = {}
    for v in reversed(t.order):
        if v == t.root:
            continue
        sp = cons_p[t.index[v]]
        sq = cons_q[t.index[v]]
        for c in t.children[v]:
            sp += pf[(v, c)]
            sq += qf[(v, c)]
        pf[(t.parent[v], v)] = sp
        qf[(t.parent[v], v)] = sq
    phi = np.ones(n)
    for v in t.order:
        if v == t.root:
            continue
        u = t.parent[v]
        ln = g.line_by_key[edge_key(u, v)]
        base = 1.0 if u == t.root else phi[t.index[u]]
        phi[t.index[v]] = base - 2.0 * (ln.r * pf[(u, v)] + ln.x * qf[(u, v)])
    return phi, LineFlows(pf, qf)


def recover_injections(t: OperationalTree, lp_or_grid, voltages, model: str
                       ) -> InjectionVector:
    """Invert a forward solve: voltages (as returned by the matching solver)
    back to net injections.

    * ``dc``: voltages is the theta array; p = Hb theta, q = 0.
    * ``lc``: voltages is (theta, eps); block multiply.
    * ``lindistflow``: voltages is (phi, LineFlows); injections are read off
      the flow balance at each node (the squared magnitudes alone do not
      determine both p and q).
    """
    n = len(t.load_nodes)
    if model == "dc":
        theta = np.asarray(voltages, dtype=float)
        if theta.shape != (n,):
            raise ModelMismatchError("dc voltages must be a theta vector")
        hb = _laplacian_matrix(t, lp_or_grid.susceptance, require_positive=True)
        return InjectionVector(hb @ theta, np.zeros(n))
    if model == "lc":
        try:
            theta, eps = voltages
        except (TypeError, ValueError):
            raise ModelMismatchError("lc voltages must be a (theta, eps) pair") from None
        theta = np.asarray(theta, dtype=float)
        eps = np.asarray(eps, dtype=float)
        if theta.shape != (n,) or eps.shape != (n,):
            raise ModelMismatchError("lc voltage components have wrong length")
        hb, hg = _lc_blocks(t, lp_or_grid)
        return InjectionVector(hb @ theta + hg @ eps, -hg @ theta + hb @ eps)
    if model == "lindistflow":
        try:
            _phi, flows = voltages
            pf, qf = flows.p, flows.q
        except (TypeError, ValueError, AttributeError):
            raise ModelMismatchError(
                "lindistflow voltages must be a (phi, LineFlows) pair"
            ) from None
        p = np.zeros(n)
        q = np.zeros(n)
        for v in t.load_nodes:
            iv = t.index[v]
            cp = pf[(t.parent[v], v)]
            cq = qf[(t.parent[v], v)]
            for c in t.children[v]:
                cp -= pf[(v, c)]
                cq -= qf[(v, c)]
            p[iv] = -cp
            q[iv] = -cq
        return InjectionVector(p, q)
    raise ModelMismatchError(f"unknown model {model!r}")
