import io

import numpy as np
import pytest

from gridtopo import (
    DistSpec,
    InjectionConfig,
    LineParams,
    MeasurementFormatError,
    MeasurementMatrix,
    ParameterError,
    generate_measurements,
    operational_tree,
    parse_dist,
    read_measurements,
    recover_injections,
    reduced_laplacian,
    solve_dc,
    solve_lc,
    solve_lindistflow,
    write_measurements,
    InjectionVector,
)
from gridtopo.sampling import draw_injection_matrices, draw_injections, measurements_to_text
from gridtopo import rng

from conftest import random_tree_grid


def test_hash_streams_are_deterministic():
    a = rng.uniform01(42, 7, np.arange(100))
    b = rng.uniform01(42, 7, np.arange(100))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, rng.uniform01(43, 7, np.arange(100)))
    assert not np.array_equal(a, rng.uniform01(42, 8, np.arange(100)))


def test_same_seed_bit_identical_draws():
    cfg = InjectionConfig()
    p1, q1 = draw_injection_matrices(cfg, (1, 2, 3), 200, seed=9)
    p2, q2 = draw_injection_matrices(cfg, (1, 2, 3), 200, seed=9)
    assert np.array_equal(p1, p2) and np.array_equal(q1, q2)


def test_per_node_stream_invariant_to_node_set():
    cfg = InjectionConfig()
    p_all, _ = draw_injection_matrices(cfg, (1, 2, 3, 4), 50, seed=5)
    p_sub, _ = draw_injection_matrices(cfg, (3,), 50, seed=5)
    assert np.array_equal(p_all[:, 2], p_sub[:, 0])


def test_gaussian_moments_large_sample():
    m = 100_000
    cfg = InjectionConfig()
    P, Q = draw_injection_matrices(cfg, (1, 2, 3), m, seed=123)
    for col in np.column_stack([P, Q]).T:
        assert abs(col.mean()) < 4 / np.sqrt(m)
        assert abs(col.std() - 1.0) < 0.02


def test_cross_node_sample_correlation_vanishes():
    m = 40_000
    cfg = InjectionConfig()
    P, _ = draw_injection_matrices(cfg, tuple(range(1, 7)), m, seed=3)
    C = np.corrcoef(P, rowvar=False)
    off = C[~np.eye(6, dtype=bool)]
    assert np.abs(off).max() < 5 / np.sqrt(m)


def test_degenerate_gaussian_rejected():
    with pytest.raises(ParameterError):
        DistSpec("gaussian", 0.0, 0.0)


def test_uniform_and_shifted_exponential():
    u = DistSpec("uniform", -2.0, 3.0).draw(1, 0, 10_000)
    assert u.min() >= -2.0 and u.max() < 3.0
    assert abs(u.mean() - 0.5) < 0.1
    e = DistSpec("shifted_exponential", 2.0, 1.5).draw(1, 1, 50_000)
    assert e.min() >= 1.5
    assert abs(e.mean() - (1.5 + 0.5)) < 0.02
    with pytest.raises(ParameterError):
        DistSpec("uniform", 1.0, 1.0)
    with pytest.raises(ParameterError):
        DistSpec("shifted_exponential", 0.0, 0.0)


def test_parse_dist():
    assert parse_dist("gaussian(0, 1)") == DistSpec("gaussian", 0.0, 1.0)
    assert parse_dist("uniform(-1,2.5)") == DistSpec("uniform", -1.0, 2.5)
    with pytest.raises(ParameterError):
        parse_dist("gaussian(1)")
    with pytest.raises(ParameterError):
        parse_dist("lognormal(0,1)")


def test_draw_injections_returns_vectors():
    out = draw_injections(InjectionConfig(), (1, 2), 5, seed=0)
    assert len(out) == 5
    assert out[0].p.shape == (2,)


def test_injection_config_unknown_node_rejected(feeder_tree):
    cfg = InjectionConfig(node_p={99: DistSpec("gaussian", 0, 1)})
    t = operational_tree(feeder_tree)
    with pytest.raises(ParameterError, match="unknown nodes"):
        generate_measurements(t, feeder_tree, cfg, "dc", 5, 0)


def test_generate_dc_feeder_shape(feeder_loopy):
    t = operational_tree(feeder_loopy)
    mm = generate_measurements(t, feeder_loopy, InjectionConfig(), "dc", 500, seed=1)
    assert mm.data.shape == (500, 19)
    assert mm.model == "dc" and mm.components == ("theta",)
    assert mm.nodes == t.load_nodes


def test_single_row_equals_direct_solve(feeder_tree):
    t = operational_tree(feeder_tree)
    lp = LineParams(feeder_tree)
    cfg = InjectionConfig()
    P, Q = draw_injection_matrices(cfg, t.load_nodes, 1, seed=4)

    mm = generate_measurements(t, feeder_tree, cfg, "dc", 1, seed=4)
    assert np.array_equal(mm.data[0], solve_dc(t, lp, P[0]))

    mm = generate_measurements(t, feeder_tree, cfg, "lindistflow", 1, seed=4)
    phi, _ = solve_lindistflow(t, feeder_tree, InjectionVector(P[0], Q[0]))
    assert np.array_equal(mm.data[0], phi)

    mm = generate_measurements(t, feeder_tree, cfg, "lc", 1, seed=4)
    th, ep = solve_lc(t, lp, InjectionVector(P[0], Q[0]))
    assert np.allclose(mm.data[0, 0::2], th, rtol=1e-12, atol=1e-14)
    assert np.allclose(mm.data[0, 1::2], ep, rtol=1e-12, atol=1e-14)


def test_dc_measurements_are_linear_image_of_draws(feeder_tree):
    t = operational_tree(feeder_tree)
    lp = LineParams(feeder_tree)
    cfg = InjectionConfig()
    m = 50
    P, _ = draw_injection_matrices(cfg, t.load_nodes, m, seed=2)
    mm = generate_measurements(t, feeder_tree, cfg, "dc", m, seed=2)
    for j in range(m):
        rec = recover_injections(t, lp, mm.data[j], "dc")
        assert np.abs(rec.p - P[j]).max() < 1e-10 * np.abs(P[j]).max()


def test_empirical_theta_covariance_matches_population(feeder_tree):
    t = operational_tree(feeder_tree)
    lp = LineParams(feeder_tree)
    mm = generate_measurements(t, feeder_tree, InjectionConfig(), "dc", 100_000, seed=11)
    emp = np.cov(mm.data, rowvar=False)
    Hinv = np.linalg.inv(reduced_laplacian(t, lp.susceptance).matrix)
    pop = Hinv @ Hinv  # unit injection variances
    dominant = np.abs(pop) >= 0.1 * np.abs(pop).max()
    rel = np.abs(emp - pop)[dominant] / np.abs(pop)[dominant]
    assert rel.max() < 5e-2


def test_measurement_csv_round_trip(feeder_tree):
    t = operational_tree(feeder_tree)
    mm = generate_measurements(t, feeder_tree, InjectionConfig(), "lc", 20, seed=6)
    text = measurements_to_text(mm)
    back = read_measurements(text)
    assert back.model == mm.model
    assert back.nodes == mm.nodes
    assert back.seed == mm.seed
    assert np.array_equal(back.data, mm.data)  # 17 significant digits: lossless
    assert measurements_to_text(back) == text


def test_measurement_csv_file_round_trip(tmp_path, feeder_tree):
    t = operational_tree(feeder_tree)
    mm = generate_measurements(t, feeder_tree, InjectionConfig(), "dc", 7, seed=6)
    path = tmp_path / "meas.csv"
    write_measurements(mm, path)
    back = read_measurements(path)
    assert np.array_equal(back.data, mm.data)


def test_measurement_csv_errors(feeder_tree):
    t = operational_tree(feeder_tree)
    mm = generate_measurements(t, feeder_tree, InjectionConfig(), "dc", 5, seed=0)
    text = measurements_to_text(mm)
    # truncated row
    bad = text.splitlines()
    bad[2] = bad[2].rsplit(",", 1)[0]
    with pytest.raises(MeasurementFormatError, match="columns"):
        read_measurements("\n".join(bad))
    with pytest.raises(MeasurementFormatError, match="header"):
        read_measurements("not a header\n1,2,3\n")
    with pytest.raises(MeasurementFormatError, match="expected"):
        read_measurements(text, expect_model="lc")
    with pytest.raises(MeasurementFormatError):
        read_measurements(io.StringIO(text).read().splitlines()[0] + "\n")


def test_measurement_matrix_validation():
    with pytest.raises(MeasurementFormatError):
        MeasurementMatrix("dc", (1, 2), np.zeros((3, 5)), 0)
    with pytest.raises(MeasurementFormatError):
        MeasurementMatrix("dc", (1, 2), np.full((3, 2), np.nan), 0)
    with pytest.raises(ParameterError):
        MeasurementMatrix("acopf", (1,), np.zeros((2, 1)), 0)


def test_measurement_column_accessors(feeder_tree):
    t = operational_tree(feeder_tree)
    mm = generate_measurements(t, feeder_tree, InjectionConfig(), "lc", 4, seed=0)
    blk = mm.node_block(3)
    assert blk.shape == (4, 2)
    assert np.array_equal(blk[:, 0], mm.column(3, "theta"))
    assert np.array_equal(blk[:, 1], mm.column(3, "eps"))
    with pytest.raises(MeasurementFormatError):
        mm.column(3, "phi")
