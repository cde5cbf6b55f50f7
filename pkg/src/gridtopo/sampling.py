"""I.i.d. measurement generation: independent injections pushed through a solver.

Per-node injection streams are counter based (see :mod:`gridtopo.rng`):
the stream id of node ``n`` is ``2 n`` for active and ``2 n + 1`` for
reactive power, so marginals do not depend on which other nodes exist and
rows can be generated in any order. No measurement noise is added; rows
are exact model outputs.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import MeasurementFormatError, ParameterError
from .grid import GridGraph, OperationalTree, edge_key
from .powerflow import (
    MODEL_COMPONENTS,
    MODELS,
    InjectionVector,
    LineParams,
    _laplacian_matrix,
)

_DIST_RE = re.compile(r"^\s*(\w+)\s*\(\s*([^,()]+)\s*,\s*([^,()]+)\s*\)\s*$")


@dataclass(frozen=True)
class DistSpec:
    """One marginal distribution: gaussian(mean, std), uniform(lo, hi) or
    shifted_exponential(rate, shift)."""

    kind: str
    a: float
    b: float

    def __post_init__(self):
        if self.kind == "gaussian":
            if not self.b > 0:
                raise ParameterError(f"gaussian std must be > 0, got {self.b}")
        elif self.kind == "uniform":
            if not self.b > self.a:
                raise ParameterError(f"uniform needs hi > lo, got ({self.a}, {self.b})")
        elif self.kind == "shifted_exponential":
            if not self.a > 0:
                raise ParameterError(f"exponential rate must be > 0, got {self.a}")
        else:
            raise ParameterError(f"unknown distribution {self.kind!r}")

    def draw(self, seed: int, stream: int, m: int) -> np.ndarray:
        idx = np.arange(m, dtype=np.uint64)
        if self.kind == "gaussian":
            return self.a + self.b * rng.standard_normal(seed, stream, idx)
        if self.kind == "uniform":
            u = rng.uniform01(seed, stream, idx)
            return self.a + (self.b - self.a) * u
        # shifted_exponential(rate, shift): shift + Exp(rate); 1-u in (0, 1]
        u = rng.uniform01(seed, stream, idx)
        return self.b - np.log1p(-u) / self.a

    def __str__(self) -> str:
        return f"{self.kind}({self.a:g},{self.b:g})"


def parse_dist(text: str) -> DistSpec:
    m = _DIST_RE.match(text)
    if not m:
        raise ParameterError(f"cannot parse distribution {text!r}")
    try:
        a, b = float(m.group(2)), float(m.group(3))
    except ValueError:
        raise ParameterError(f"bad distribution parameters in {text!r}") from None
    return DistSpec(m.group(1), a, b)


@dataclass(frozen=True)
class InjectionConfig:
    """Distribution of injections: defaults plus per-node overrides."""

    default_p: DistSpec = field(default_factory=lambda: DistSpec("gaussian", 0.0, 1.0))
    default_q: DistSpec = field(default_factory=lambda: DistSpec("gaussian", 0.0, 1.0))
    node_p: dict[int, DistSpec] = field(default_factory=dict)
    node_q: dict[int, DistSpec] = field(default_factory=dict)

    def spec(self, node: int, component: str) -> DistSpec:
        if component == "p":
            return self.node_p.get(node, self.default_p)
        return self.node_q.get(node, self.default_q)

    def check_nodes(self, known) -> None:
        known = set(known)
        bad = (set(self.node_p) | set(self.node_q)) - known
        if bad:
            raise ParameterError(f"injection config references unknown nodes {sorted(bad)}")


def _stream(node: int, component: str) -> int:
    return 2 * node + (0 if component == "p" else 1)


def draw_injection_matrices(cfg: InjectionConfig, nodes, m: int, seed: int
                            ) -> tuple[np.ndarray, np.ndarray]:
    """m x n active and reactive draws, columns ordered like ``nodes``."""
    if m < 1:
        raise ParameterError("need at least one sample")
    nodes = tuple(nodes)
    P = np.empty((m, len(nodes)))
    Q = np.empty((m, len(nodes)))
    for j, n in enumerate(nodes):
        P[:, j] = cfg.spec(n, "p").draw(seed, _stream(n, "p"), m)
        Q[:, j] = cfg.spec(n, "q").draw(seed, _stream(n, "q"), m)
    return P, Q


def draw_injections(cfg: InjectionConfig, nodes, m: int, seed: int
                    ) -> list[InjectionVector]:
    """m i.i.d. injection vectors, deterministic in (seed, node id, row)."""
    P, Q = draw_injection_matrices(cfg, nodes, m, seed)
    return [InjectionVector(P[j], Q[j]) for j in range(m)]


class MeasurementMatrix:
    """m samples of per-node measured voltage components.

    Column layout is node major: for each node in ``nodes`` order, its
    components in model order (theta / theta,eps / phi).
    """

    def __init__(self, model: str, nodes, data: np.ndarray, seed: int):
        if model not in MODELS:
            raise ParameterError(f"unknown model {model!r}")
        self.model = model
        self.nodes = tuple(nodes)
        self.components = MODEL_COMPONENTS[model]
        self.data = np.asarray(data, dtype=float)
        self.seed = int(seed)
        width = len(self.nodes) * len(self.components)
        if self.data.ndim != 2 or self.data.shape[1] != width:
            raise MeasurementFormatError(
                f"expected {width} columns for model {model}, got {self.data.shape}"
            )
        if self.data.shape[0] < 1:
            raise MeasurementFormatError("need at least one sample row")
        if not np.isfinite(self.data).all():
            raise MeasurementFormatError("non-finite measurement values")
        self._col = {
            (n, comp): i * len(self.components) + k
            for i, n in enumerate(self.nodes)
            for k, comp in enumerate(self.components)
        }

    @property
    def m(self) -> int:
        return self.data.shape[0]

    def column(self, node: int, component: str) -> np.ndarray:
        try:
            return self.data[:, self._col[(node, component)]]
        except KeyError:
            raise MeasurementFormatError(
                f"no column for node {node} component {component!r}"
            ) from None

    def node_block(self, node: int) -> np.ndarray:
        """All measured components of one node, (m, n_components)."""
        i = self.nodes.index(node) * len(self.components)
        return self.data[:, i : i + len(self.components)]


def generate_measurements(t: OperationalTree, g: GridGraph, cfg: InjectionConfig,
                          model: str, m: int, seed: int) -> MeasurementMatrix:
    """Draw m injection samples and solve the chosen model row by row.

    The per-row solves are vectorized across samples but follow exactly the
    same accumulation order as the scalar solvers, so row j equals a direct
    solve of draw j.
    """
    if model not in MODELS:
        raise ParameterError(f"unknown model {model!r}")
    cfg.check_nodes(g.nodes)
    nodes = t.load_nodes
    P, Q = draw_injection_matrices(cfg, nodes, m, seed)
    if model == "dc":
        data = _solve_dc_batch(t, LineParams(g), P)
    elif model == "lc":
        lp = LineParams(g)
        hb = _laplacian_matrix(t, lp.susceptance, require_positive=True)
        hg = _laplacian_matrix(t, lp.conductance, require_positive=False)
        M = np.block([[hb, hg], [-hg, hb]])
        sol = np.linalg.solve(M, np.concatenate([P, Q], axis=1).T).T
        n = len(nodes)
        data = np.empty((m, 2 * n))
        data[:, 0::2] = sol[:, :n]
        data[:, 1::2] = sol[:, n:]
    else:
        data = _solve_lindistflow_batch(t, g, P, Q)
    return MeasurementMatrix(model, nodes, data, seed)


def _solve_dc_batch(t: OperationalTree, lp: LineParams, P: np.ndarray) -> np.ndarray:
    beta = lp.susceptance
    subtree: dict[int, np.ndarray] = {}
    for v in reversed(t.order):
        if v == t.root:
            continue
        s = P[:, t.index[v]].copy()
        for c in t.children[v]:
            s += subtree[c]
        subtree[v] = s
    theta = np.zeros_like(P)
    for v in t.order:
        if v == t.root:
            continue
        u = t.parent[v]
        base = 0.0 if u == t.root else theta[:, t.index[u]]
        theta[:, t.index[v]] = base + subtree[v] / beta[edge_key(u, v)]
    return theta


def _solve_lindistflow_batch(t: OperationalTree, g: GridGraph,
                             P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    pf: dict[int, np.ndarray] = {}
    qf: dict[int, np.ndarray] = {}
    for v in reversed(t.order):
        if v == t.root:
            continue
        sp = -P[:, t.index[v]]
        sq = -Q[:, t.index[v]]
        for c in t.children[v]:
            sp += pf[c]
            sq += qf[c]
        pf[v] = sp
        qf[v] = sq
    phi = np.ones_like(P)
    for v in t.order:
        if v == t.root:
            continue
        u = t.parent[v]
        ln = g.line_by_key[edge_key(u, v)]
        base = 1.0 if u == t.root else phi[:, t.index[u]]
        phi[:, t.index[v]] = base - 2.0 * (ln.r * pf[v] + ln.x * qf[v])
    return phi


def write_measurements(mm: MeasurementMatrix, path_or_file) -> None:
    """Measurement CSV: '# model=... seed=... nodes=...' header, then rows
    with 17 significant digits (lossless for doubles)."""
    close = False
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        fh = open(path_or_file, "w", encoding="utf-8")
        close = True
    else:
        fh = path_or_file
    try:
        nodes = ",".join(str(n) for n in mm.nodes)
        fh.write(f"# model={mm.model} seed={mm.seed} nodes={nodes}\n")
        for row in mm.data:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    finally:
        if close:
            fh.close()


def measurements_to_text(mm: MeasurementMatrix) -> str:
    buf = io.StringIO()
    write_measurements(mm, buf)
    return buf.getvalue()


_HEADER_RE = re.compile(r"^#\s*model=(\w+)\s+seed=(\d+)\s+nodes=([\d,]+)\s*$")


def read_measurements(doc, expect_model: str | None = None) -> MeasurementMatrix:
    """Parse a measurement CSV document (text or file path)."""
    if hasattr(doc, "__fspath__") or (isinstance(doc, str) and "\n" not in doc):
        with open(doc, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = doc
    lines = text.splitlines()
    if not lines:
        raise MeasurementFormatError("empty measurement document")
    m = _HEADER_RE.match(lines[0])
    if not m:
        raise MeasurementFormatError(f"bad header line {lines[0]!r}")
    model, seed, nodes_txt = m.group(1), int(m.group(2)), m.group(3)
    if model not in MODELS:
        raise MeasurementFormatError(f"unknown model {model!r} in header")
    if expect_model is not None and model != expect_model:
        raise MeasurementFormatError(
            f"measurements are for model {model!r}, expected {expect_model!r}"
        )
    nodes = tuple(int(s) for s in nodes_txt.split(","))
    width = len(nodes) * len(MODEL_COMPONENTS[model])
    rows = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != width:
            raise MeasurementFormatError(
                f"line {line_no}: expected {width} columns, got {len(parts)}"
            )
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise MeasurementFormatError(f"line {line_no}: bad float") from None
    if not rows:
        raise MeasurementFormatError("no sample rows")
    return MeasurementMatrix(model, nodes, np.array(rows), seed)
