"""Command-line front end: spur, simulate, learn, sweep, gmcheck.

Experiment configuration files are flat ``key=value`` documents (``#``
comments allowed):

    grid=feeder.grid
    model=dc
    samples=200,2000
    tolerances=1e-5,5e-5
    seeds=1,2,3
    method=kci                # kci | pcorr | oracle
    permutations=0            # kci permutation mode when > 0
    alpha=0.05
    max_samples=500           # kernel Gram cap
    injection.default.p=gaussian(0,1)
    injection.default.q=gaussian(0,1)
    injection.node.<id>.p=uniform(-1,1)

Every command is deterministic given its seed arguments. Errors exit
nonzero with one line ``error: <category>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .citest import KernelParams
from .errors import ConfigError, GridTopoError
from .grid import (
    GridGraph,
    Line,
    edge_key,
    grid_to_text,
    operational_tree,
    parse_grid,
)
from .learn import (
    ExactPartialCorrTester,
    KernelCITester,
    PartialCorrTester,
    SeparationOracleTester,
    evaluate_topology,
    export_topology,
    learn_topology,
)
from .markov import (
    empirical_precision,
    phase_precision_matrix,
    precision_support_graph,
    voltage_markov_graph,
)
from .powerflow import LineParams
from .sampling import (
    InjectionConfig,
    generate_measurements,
    parse_dist,
    read_measurements,
    write_measurements,
)


def spur_grid(g: GridGraph, k: int, seed: int) -> GridGraph:
    """Add k open-status lines at random locations among load-node
    non-edges; deterministic under the seed.

    The input must be a pure tree (all lines operational and radial).
    Impedances of the new lines are drawn uniformly from the range spanned
    by the existing lines.
    """
    if any(ln.status != "operational" for ln in g.lines):
        raise ConfigError("spur input must be a pure tree (all lines operational)")
    operational_tree(g)  # raises if not radial
    load = g.load_nodes
    non_edges = [
        (u, v)
        for i, u in enumerate(load)
        for v in load[i + 1 :]
        if edge_key(u, v) not in g.line_by_key
    ]
    if k > len(non_edges):
        raise ConfigError(
            f"cannot add {k} lines: only {len(non_edges)} load-node non-edges exist"
        )
    if k < 0:
        raise ConfigError("count must be >= 0")
    # uniform draw without replacement: keep the k smallest hash keys
    keyed = sorted(non_edges, key=lambda e: rng.hash64(seed, e[0], e[1]))
    chosen = sorted(keyed[:k])
    rs = [ln.r for ln in g.lines]
    xs = [ln.x for ln in g.lines]
    r_lo, r_hi = min(rs), max(rs)
    x_lo, x_hi = min(xs), max(xs)
    new_lines = list(g.lines)
    for i, (u, v) in enumerate(chosen):
        ur = float(rng.uniform01(seed, 2 * i + 1, np.array([0]))[0])
        ux = float(rng.uniform01(seed, 2 * i + 2, np.array([0]))[0])
        new_lines.append(
            Line(u, v, r_lo + ur * (r_hi - r_lo),
                 max(x_lo + ux * (x_hi - x_lo), 1e-6), "open")
        )
    return GridGraph(g.nodes, g.substation, new_lines)


@dataclass
class ExperimentConfig:
    grid: str = ""
    model: str = "dc"
    samples: list[int] = field(default_factory=list)
    tolerances: list[float] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)
    method: str = "kci"
    permutations: int = 0
    alpha: float = 0.05
    max_samples: int | None = 500
    ridge: float = 1e-3
    cond_scale: float = 1.0
    injections: InjectionConfig = field(default_factory=InjectionConfig)

    def validate(self) -> None:
        if not self.grid:
            raise ConfigError("config needs grid=<path>")
        if not Path(self.grid).exists():
            raise ConfigError(f"grid file {self.grid!r} does not exist")
        if self.model not in ("dc", "lc", "lindistflow"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.method not in ("kci", "pcorr", "oracle"):
            raise ConfigError(f"unknown method {self.method!r}")
        if not self.samples:
            raise ConfigError("config needs samples=<m1,m2,...>")
        if not self.seeds:
            raise ConfigError("config needs seeds=<s1,s2,...>")
        if not self.tolerances:
            if self.method == "kci" and self.permutations == 0:
                raise ConfigError("kci tolerance mode needs tolerances=<t1,...>")
            self.tolerances = [self.alpha]


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    inj_p, inj_q = {}, {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"config line {line_no}: expected key=value")
        key, val = (s.strip() for s in body.split("=", 1))
        try:
            if key == "grid":
                cfg.grid = str((base_dir / val) if base_dir else val)
            elif key == "model":
                cfg.model = val
            elif key == "samples":
                cfg.samples = [int(s) for s in val.split(",")]
            elif key == "tolerances":
                cfg.tolerances = [float(s) for s in val.split(",")]
            elif key == "seeds":
                cfg.seeds = [int(s) for s in val.split(",")]
            elif key == "method":
                cfg.method = val
            elif key == "permutations":
                cfg.permutations = int(val)
            elif key == "alpha":
                cfg.alpha = float(val)
            elif key == "max_samples":
                cfg.max_samples = None if val in ("none", "") else int(val)
            elif key == "ridge":
                cfg.ridge = float(val)
            elif key == "cond_scale":
                cfg.cond_scale = float(val)
            elif key == "injection.default.p":
                cfg.injections = _with_default(cfg.injections, p=parse_dist(val))
            elif key == "injection.default.q":
                cfg.injections = _with_default(cfg.injections, q=parse_dist(val))
            elif key.startswith("injection.node."):
                parts = key.split(".")
                if len(parts) != 4 or parts[3] not in ("p", "q"):
                    raise ConfigError(f"config line {line_no}: bad key {key!r}")
                (inj_p if parts[3] == "p" else inj_q)[int(parts[2])] = parse_dist(val)
            else:
                raise ConfigError(f"config line {line_no}: unknown key {key!r}")
        except ValueError:
            raise ConfigError(f"config line {line_no}: bad value {val!r}") from None
    if inj_p or inj_q:
        cfg.injections = InjectionConfig(
            cfg.injections.default_p, cfg.injections.default_q, inj_p, inj_q
        )
    return cfg


def _with_default(inj: InjectionConfig, p=None, q=None) -> InjectionConfig:
    return InjectionConfig(
        p or inj.default_p, q or inj.default_q, inj.node_p, inj.node_q
    )


def _load_grid(path: str) -> GridGraph:
    return parse_grid(Path(path).read_text(encoding="utf-8"))


def _make_tester(method: str, g: GridGraph, *, tolerance=None, alpha=0.05,
                 permutations=0, max_samples=None, ridge=1e-3,
                 cond_scale=1.0, seed=0):
    if method == "oracle":
        return SeparationOracleTester(voltage_markov_graph(operational_tree(g)))
    if method == "pcorr":
        return PartialCorrTester(alpha=alpha)
    if method == "pcorr-exact":
        t = operational_tree(g)
        return ExactPartialCorrTester.from_dc_tree(t, LineParams(g), 1.0)
    if method == "kci":
        if permutations > 0:
            kp = KernelParams(permutations=permutations, alpha=alpha,
                              max_samples=max_samples, ridge=ridge,
                              cond_scale=cond_scale)
        else:
            if tolerance is None:
                raise ConfigError("kci needs --tolerance or --permutations")
            kp = KernelParams(tolerance=tolerance, max_samples=max_samples,
                              ridge=ridge, cond_scale=cond_scale)
        return KernelCITester(kp, base_seed=seed)
    raise ConfigError(f"unknown method {method!r}")


def run_sweep_cell(cfg: ExperimentConfig, m: int, tolerance: float, seed: int):
    """One (samples, tolerance, seed) cell: simulate, learn, evaluate."""
    g = _load_grid(cfg.grid)
    t = operational_tree(g)
    t0 = time.perf_counter()
    mm = generate_measurements(t, g, cfg.injections, cfg.model, m, seed)
    tester = _make_tester(
        cfg.method, g, tolerance=tolerance,
        alpha=tolerance if cfg.method == "pcorr" else cfg.alpha,
        permutations=cfg.permutations, max_samples=cfg.max_samples,
        ridge=cfg.ridge, cond_scale=cfg.cond_scale, seed=seed,
    )
    learned = learn_topology(mm, g, tester, strict=False)
    metrics = evaluate_topology(learned, t)
    wall_ms = (time.perf_counter() - t0) * 1000.0
    return {
        "seed": seed, "m": m, "tolerance": tolerance, "method": cfg.method,
        "fp": metrics.false_positives, "fn": metrics.false_negatives,
        "errors": metrics.errors, "relative_error": metrics.relative_error,
        "wall_ms": wall_ms,
    }


def _cell_worker(args):
    cfg, m, tol, seed = args
    return run_sweep_cell(cfg, m, tol, seed)


def run_sweep(cfg: ExperimentConfig, jobs: int = 1):
    """All cells in deterministic sorted order; cells are self-contained so
    parallel execution cannot change the result rows."""
    cfg.validate()
    cells = [
        (cfg, m, tol, seed)
        for m in sorted(cfg.samples)
        for tol in sorted(cfg.tolerances)
        for seed in sorted(cfg.seeds)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_cell_worker, cells))
    else:
        rows = [_cell_worker(c) for c in cells]
    rows.sort(key=lambda r: (r["m"], r["tolerance"], r["seed"]))
    return rows


def sweep_csv(rows) -> str:
    out = ["seed,m,tolerance,method,fp,fn,errors,relative_error,wall_ms"]
    for r in rows:
        out.append(
            f"{r['seed']},{r['m']},{r['tolerance']:.17g},{r['method']},"
            f"{r['fp']},{r['fn']},{r['errors']},{r['relative_error']:.17g},"
            f"{r['wall_ms']:.3f}"
        )
    groups: dict[tuple, list] = {}
    for r in rows:
        groups.setdefault((r["m"], r["tolerance"]), []).append(r)
    for (m, tol) in sorted(groups):
        grp = groups[(m, tol)]
        n = len(grp)
        out.append(
            f"# aggregate m={m} tolerance={tol:.17g} "
            f"mean_fp={sum(r['fp'] for r in grp) / n:.17g} "
            f"mean_fn={sum(r['fn'] for r in grp) / n:.17g} "
            f"mean_errors={sum(r['errors'] for r in grp) / n:.17g} "
            f"mean_relative_error={sum(r['relative_error'] for r in grp) / n:.17g}"
        )
    return "\n".join(out) + "\n"


def _write_out(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_spur(args) -> int:
    g = _load_grid(args.grid)
    spurred = spur_grid(g, args.count, args.seed)
    _write_out(grid_to_text(spurred), args.out)
    return 0


def cmd_simulate(args) -> int:
    g = _load_grid(args.grid)
    t = operational_tree(g)
    inj = InjectionConfig()
    if args.config:
        cfg = parse_config(Path(args.config).read_text(encoding="utf-8"))
        inj = cfg.injections
    mm = generate_measurements(t, g, inj, args.model, args.samples, args.seed)
    if args.out:
        write_measurements(mm, args.out)
    else:
        write_measurements(mm, sys.stdout)
    return 0


def cmd_learn(args) -> int:
    g = _load_grid(args.grid)
    mm = read_measurements(args.measurements) if args.measurements else None
    tester = _make_tester(
        args.method, g, tolerance=args.tolerance, alpha=args.alpha,
        permutations=args.permutations, max_samples=args.max_samples,
        ridge=args.ridge, cond_scale=args.cond_scale, seed=args.seed,
    )
    learned = learn_topology(
        mm, g, tester, strict=False, prune_to_tree=args.prune_to_tree
    )
    metrics = None
    try:
        metrics = evaluate_topology(learned, operational_tree(g))
    except GridTopoError:
        pass
    _write_out(export_topology(learned, metrics), args.out)
    return 0


def cmd_sweep(args) -> int:
    cfg = parse_config(
        Path(args.config).read_text(encoding="utf-8"),
        base_dir=Path(args.config).parent,
    )
    rows = run_sweep(cfg, jobs=args.jobs)
    _write_out(sweep_csv(rows), args.out)
    return 0


def cmd_gmcheck(args) -> int:
    g = _load_grid(args.grid)
    t = operational_tree(g)
    gm = voltage_markov_graph(t)
    if args.measurements:
        mm = read_measurements(args.measurements, expect_model="dc")
        cols = np.column_stack([mm.column(n, "theta") for n in t.load_nodes])
        pm = empirical_precision(cols, t.load_nodes)
        source = f"empirical precision from {mm.m} samples"
    else:
        pm = phase_precision_matrix(t, LineParams(g), 1.0)
        source = "exact precision (unit injection variances)"
    support = precision_support_graph(pm, args.tolerance)
    missing = sorted(gm.edges - support.edges)
    extra = sorted(support.edges - gm.edges)
    lines = [
        f"# gmcheck: {source}, relative threshold {args.tolerance:g}",
        f"markov_edges={len(gm.edges)}",
        f"precision_edges={len(support.edges)}",
        f"missing={';'.join(f'{u}-{v}' for u, v in missing) or 'none'}",
        f"extra={';'.join(f'{u}-{v}' for u, v in extra) or 'none'}",
        f"match={'yes' if not missing and not extra else 'no'}",
    ]
    _write_out("\n".join(lines) + "\n", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gridtopo",
        description="Radial grid topology learning from voltage measurements",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spur", help="add open candidate lines to a tree grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_spur)

    p = sub.add_parser("simulate", help="generate measurement samples")
    p.add_argument("--grid", required=True)
    p.add_argument("--model", choices=["dc", "lc", "ldf"], default="dc")
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="experiment config for injection specs")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("learn", help="recover the operational topology")
    p.add_argument("--grid", required=True)
    p.add_argument("--measurements")
    p.add_argument("--method", choices=["kci", "pcorr", "oracle", "pcorr-exact"],
                   default="kci")
    p.add_argument("--tolerance", type=float)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--permutations", type=int, default=0)
    p.add_argument("--max-samples", type=int, dest="max_samples", default=None)
    p.add_argument("--ridge", type=float, default=1e-3)
    p.add_argument("--cond-scale", type=float, dest="cond_scale", default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prune-to-tree", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("sweep", help="sample-size / tolerance sweep to CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gmcheck", help="compare precision support to the markov graph")
    p.add_argument("--grid", required=True)
    p.add_argument("--measurements")
    p.add_argument("--tolerance", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gmcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "model", None) == "ldf":
        args.model = "lindistflow"
    try:
        return args.func(args)
    except GridTopoError as err:
        print(f"error: {err.category}: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: io-error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
