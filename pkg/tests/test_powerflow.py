import numpy as np
import pytest

from gridtopo import (
    GridGraph,
    InjectionVector,
    Line,
    LineParams,
    ModelMismatchError,
    ParameterError,
    operational_tree,
    recover_injections,
    reduced_laplacian,
    solve_dc,
    solve_lc,
    solve_lindistflow,
)
from gridtopo.grid import edge_key

from conftest import make_grid, path_grid, random_tree_grid


def unit_beta_grid(n, edges):
    """x=1, r=0 on every line gives susceptance 1 and conductance 0."""
    lines = [Line(*edge_key(a, b), 0.0, 1.0, "operational") for a, b in edges]
    return GridGraph(range(n), 0, lines)


def dense_laplacian(t, weights):
    """Brute-force oracle: full weighted Laplacian, then delete the
    substation row and column."""
    nodes = t.order
    idx = {v: i for i, v in enumerate(nodes)}
    L = np.zeros((len(nodes), len(nodes)))
    for (a, b) in t.edges:
        w = weights[(a, b)]
        L[idx[a], idx[a]] += w
        L[idx[b], idx[b]] += w
        L[idx[a], idx[b]] -= w
        L[idx[b], idx[a]] -= w
    keep = [idx[v] for v in t.load_nodes]
    return L[np.ix_(keep, keep)]


def test_reduced_laplacian_path():
    t = operational_tree(unit_beta_grid(3, [(0, 1), (1, 2)]))
    H = reduced_laplacian(t, {e: 1.0 for e in t.edges}).matrix
    assert np.array_equal(H, [[2.0, -1.0], [-1.0, 1.0]])


def test_reduced_laplacian_star():
    t = operational_tree(unit_beta_grid(4, [(0, 1), (1, 2), (1, 3)]))
    H = reduced_laplacian(t, {e: 1.0 for e in t.edges}).matrix
    assert np.array_equal(H, [[3.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])


def test_reduced_laplacian_matches_deleted_row_column_oracle():
    for seed in range(30):
        g = random_tree_grid(seed, n_lo=8, n_hi=8)
        t = operational_tree(g)
        gen = np.random.default_rng(seed + 999)
        w = {e: float(gen.uniform(0.1, 5.0)) for e in t.edges}
        H = reduced_laplacian(t, w).matrix
        assert np.allclose(H, dense_laplacian(t, w), atol=0, rtol=1e-15)


def test_reduced_laplacian_rejects_bad_weights():
    t = operational_tree(path_grid(3))
    with pytest.raises(ParameterError, match="missing"):
        reduced_laplacian(t, {})
    with pytest.raises(ParameterError, match="> 0"):
        reduced_laplacian(t, {e: 0.0 for e in t.edges})


def test_reduced_laplacian_positive_definite():
    for seed in range(25):
        g = random_tree_grid(seed, n_lo=4, n_hi=12)
        t = operational_tree(g)
        gen = np.random.default_rng(seed)
        w = {e: float(gen.uniform(0.05, 10.0)) for e in t.edges}
        np.linalg.cholesky(reduced_laplacian(t, w).matrix)  # raises if not PD


def test_solve_dc_path_by_hand():
    g = unit_beta_grid(3, [(0, 1), (1, 2)])
    t = operational_tree(g)
    theta = solve_dc(t, LineParams(g), [1.0, 0.0])
    assert np.allclose(theta, [1.0, 1.0], atol=1e-15)


def test_solve_dc_zero_injections():
    g = random_tree_grid(3, n_lo=6, n_hi=10)
    t = operational_tree(g)
    theta = solve_dc(t, LineParams(g), np.zeros(len(t.load_nodes)))
    assert np.array_equal(theta, np.zeros(len(t.load_nodes)))


def test_solve_dc_matches_dense_solver():
    worst = 0.0
    for seed in range(100):
        g = random_tree_grid(seed, n_lo=10, n_hi=10)
        t = operational_tree(g)
        lp = LineParams(g)
        gen = np.random.default_rng(seed + 5)
        p = gen.normal(0, 1, len(t.load_nodes))
        theta = solve_dc(t, lp, p)
        H = reduced_laplacian(t, lp.susceptance).matrix
        dense = np.linalg.solve(H, p)
        worst = max(worst, np.abs(theta - dense).max() / np.abs(dense).max())
    assert worst < 1e-10


def test_solve_dc_residual_contract():
    for seed in range(25):
        g = random_tree_grid(seed, n_lo=5, n_hi=14)
        t = operational_tree(g)
        lp = LineParams(g)
        gen = np.random.default_rng(seed)
        p = gen.normal(0, 2, len(t.load_nodes))
        theta = solve_dc(t, lp, p)
        H = reduced_laplacian(t, lp.susceptance).matrix
        assert np.abs(H @ theta - p).max() < 1e-12 * np.abs(p).max()


def test_solve_lc_decouples_when_conductance_zero():
    g = unit_beta_grid(4, [(0, 1), (1, 2), (1, 3)])
    t = operational_tree(g)
    lp = LineParams(g)
    assert all(v == 0.0 for v in lp.conductance.values())
    gen = np.random.default_rng(11)
    inj = InjectionVector(gen.normal(0, 1, 3), gen.normal(0, 1, 3))
    theta, eps = solve_lc(t, lp, inj)
    assert np.allclose(theta, solve_dc(t, lp, inj.p), atol=0, rtol=1e-12)
    assert np.allclose(eps, solve_dc(t, lp, inj.q), atol=0, rtol=1e-12)


def test_solve_lc_zero_injections():
    g = random_tree_grid(7, n_lo=5, n_hi=9)
    t = operational_tree(g)
    theta, eps = solve_lc(t, LineParams(g), InjectionVector(
        np.zeros(len(t.load_nodes)), np.zeros(len(t.load_nodes))))
    assert not theta.any() and not eps.any()


def test_solve_lc_path_block_system_by_hand():
    # r = x = 1 on both lines: susceptance = conductance = 1/2
    lines = [Line(0, 1, 1.0, 1.0, "operational"), Line(1, 2, 1.0, 1.0, "operational")]
    g = GridGraph(range(3), 0, lines)
    t = operational_tree(g)
    theta, eps = solve_lc(t, LineParams(g), InjectionVector([1.0, 0.0], [0.0, 0.0]))
    assert np.allclose(theta, [1.0, 1.0], atol=1e-12)
    assert np.allclose(eps, [1.0, 1.0], atol=1e-12)


def test_lindistflow_single_load_by_hand():
    lines = [Line(0, 1, 0.05, 0.05, "operational")]
    g = GridGraph(range(2), 0, lines)
    t = operational_tree(g)
    # unit consumption = net injection -1 on both components
    phi, flows = solve_lindistflow(t, g, InjectionVector([-1.0], [-1.0]))
    assert flows.p[(0, 1)] == pytest.approx(1.0)
    assert flows.q[(0, 1)] == pytest.approx(1.0)
    assert phi[0] == pytest.approx(1.0 - 2 * (0.05 + 0.05))


def test_lindistflow_zero_injections(feeder_tree):
    t = operational_tree(feeder_tree)
    n = len(t.load_nodes)
    phi, flows = solve_lindistflow(t, feeder_tree, InjectionVector(np.zeros(n), np.zeros(n)))
    assert np.array_equal(phi, np.ones(n))
    assert all(v == 0.0 for v in flows.p.values())


def test_lindistflow_path_telescoping_by_hand():
    lines = [Line(0, 1, 1.0, 1.0, "operational"), Line(1, 2, 1.0, 1.0, "operational")]
    g = GridGraph(range(3), 0, lines)
    t = operational_tree(g)
    phi, flows = solve_lindistflow(t, g, InjectionVector([-1.0, -1.0], [-1.0, -1.0]))
    assert flows.p[(0, 1)] == pytest.approx(2.0)
    assert flows.p[(1, 2)] == pytest.approx(1.0)
    # phi_1 = 1 - 2(r*2 + x*2) = -7; phi_2 = -7 - 2(r*1 + x*1) = -11
    assert np.allclose(phi, [-7.0, -11.0])


def test_lindistflow_phi_deviation_equals_lc_eps():
    """(phi - 1)/2 and the coupled-model magnitude deviation are the same
    linear map of the injections on any tree."""
    for seed in range(25):
        g = random_tree_grid(seed, n_lo=5, n_hi=12)
        t = operational_tree(g)
        lp = LineParams(g)
        gen = np.random.default_rng(seed + 123)
        n = len(t.load_nodes)
        inj = InjectionVector(gen.normal(0, 0.02, n), gen.normal(0, 0.02, n))
        phi, _ = solve_lindistflow(t, g, inj)
        _, eps = solve_lc(t, lp, inj)
        assert np.abs((phi - 1.0) / 2.0 - eps).max() < 1e-12


def test_lindistflow_magnitude_gap_shrinks_quadratically():
    """sqrt(phi) - 1 approaches the coupled-model deviation at second order:
    halving the injection scale shrinks the gap by at least 0.3."""
    g = random_tree_grid(4, n_lo=8, n_hi=8)
    t = operational_tree(g)
    lp = LineParams(g)
    gen = np.random.default_rng(42)
    n = len(t.load_nodes)
    p = gen.normal(0, 0.05, n)
    q = gen.normal(0, 0.05, n)

    def gap(s):
        inj = InjectionVector(s * p, s * q)
        phi, _ = solve_lindistflow(t, g, inj)
        assert (phi > 0).all()
        _, eps = solve_lc(t, lp, inj)
        return np.abs(np.sqrt(phi) - 1.0 - eps).max()

    for s in (1.0, 0.5, 0.25):
        assert gap(s / 2) <= 0.3 * gap(s)


@pytest.mark.parametrize("model", ["dc", "lc", "lindistflow"])
def test_linearity_of_all_models(model):
    g = random_tree_grid(9, n_lo=7, n_hi=7)
    t = operational_tree(g)
    lp = LineParams(g)
    gen = np.random.default_rng(77)
    n = len(t.load_nodes)
    i1 = InjectionVector(gen.normal(0, 1, n), gen.normal(0, 1, n))
    i2 = InjectionVector(gen.normal(0, 1, n), gen.normal(0, 1, n))
    alpha = 1.75
    comb = InjectionVector(alpha * i1.p + i2.p, alpha * i1.q + i2.q)
    if model == "dc":
        out = solve_dc(t, lp, comb.p)
        lin = alpha * solve_dc(t, lp, i1.p) + solve_dc(t, lp, i2.p)
        assert np.allclose(out, lin, rtol=1e-12, atol=1e-13)
    elif model == "lc":
        th, ep = solve_lc(t, lp, comb)
        th1, ep1 = solve_lc(t, lp, i1)
        th2, ep2 = solve_lc(t, lp, i2)
        assert np.allclose(th, alpha * th1 + th2, rtol=1e-12, atol=1e-13)
        assert np.allclose(ep, alpha * ep1 + ep2, rtol=1e-12, atol=1e-13)
    else:
        ph, _ = solve_lindistflow(t, g, comb)
        ph1, _ = solve_lindistflow(t, g, i1)
        ph2, _ = solve_lindistflow(t, g, i2)
        # deviations from the reference value 1 are the linear image
        assert np.allclose(ph - 1, alpha * (ph1 - 1) + (ph2 - 1),
                           rtol=1e-12, atol=1e-13)


def test_recover_injections_dc_round_trip():
    for seed in range(20):
        g = random_tree_grid(seed, n_lo=10, n_hi=10)
        t = operational_tree(g)
        lp = LineParams(g)
        gen = np.random.default_rng(seed)
        p = gen.normal(0, 1, len(t.load_nodes))
        rec = recover_injections(t, lp, solve_dc(t, lp, p), "dc")
        assert np.abs(rec.p - p).max() < 1e-10 * max(1.0, np.abs(p).max())
        assert not rec.q.any()


def test_recover_injections_zero_voltages():
    g = random_tree_grid(2, n_lo=6, n_hi=6)
    t = operational_tree(g)
    n = len(t.load_nodes)
    rec = recover_injections(t, LineParams(g), np.zeros(n), "dc")
    assert not rec.p.any()


def test_recover_injections_lc_round_trip():
    g = random_tree_grid(15, n_lo=9, n_hi=9)
    t = operational_tree(g)
    lp = LineParams(g)
    gen = np.random.default_rng(15)
    n = len(t.load_nodes)
    inj = InjectionVector(gen.normal(0, 1, n), gen.normal(0, 1, n))
    rec = recover_injections(t, lp, solve_lc(t, lp, inj), "lc")
    assert np.allclose(rec.p, inj.p, rtol=1e-10, atol=1e-12)
    assert np.allclose(rec.q, inj.q, rtol=1e-10, atol=1e-12)


def test_recover_injections_lindistflow_feeder_exact(feeder_tree):
    t = operational_tree(feeder_tree)
    gen = np.random.default_rng(8)
    n = len(t.load_nodes)
    inj = InjectionVector(gen.normal(0, 1, n), gen.normal(0, 1, n))
    out = solve_lindistflow(t, feeder_tree, inj)
    rec = recover_injections(t, feeder_tree, out, "lindistflow")
    assert np.allclose(rec.p, inj.p, rtol=1e-12, atol=1e-14)
    assert np.allclose(rec.q, inj.q, rtol=1e-12, atol=1e-14)


def test_recover_injections_component_mismatch():
    g = random_tree_grid(1, n_lo=5, n_hi=5)
    t = operational_tree(g)
    lp = LineParams(g)
    n = len(t.load_nodes)
    with pytest.raises(ModelMismatchError):
        recover_injections(t, lp, np.zeros(n), "lc")  # lc needs (theta, eps)
    with pytest.raises(ModelMismatchError):
        recover_injections(t, lp, (np.zeros(n), np.zeros(n)), "lindistflow")
    with pytest.raises(ModelMismatchError):
        recover_injections(t, lp, np.zeros(n), "acpf")
