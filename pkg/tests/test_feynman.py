import json
import math

import numpy as np
import pytest

import graphzoo
from troquad.feynman import (ExceptionalKinematics, FeynmanGraph,
                             build_feynman_tables, eps_integrand,
                             estimate_feynman, exceptional_subsets,
                             feynman_integrand, graph_to_json_dict,
                             load_graph, make_graph, mm_flag_reference,
                             psi_phi_eval, psi_phi_reference, r_function,
                             subgraph_data, symanzik_polynomials,
                             tropical_trace_check, z_tables)
from troquad.mc import SampleRejected
from troquad.permutahedron import check_supermodular, BooleanTable, sample_gp
from troquad.rng import RandomStream

ONES2 = np.zeros(2)
ONES3 = np.zeros(3)


# ------------------------------------------------------------ frozen examples

def test_bubble_psi_phi_at_ones(bubble):
    v = psi_phi_eval(bubble, ONES2)
    assert v.log_psi == pytest.approx(math.log(2.0), rel=1e-14)
    assert v.log_phi == pytest.approx(0.0, abs=1e-14)


def test_triangle_psi_at_ones(triangle):
    v = psi_phi_eval(triangle, ONES3)
    assert v.log_psi == pytest.approx(math.log(3.0), rel=1e-14)


def test_bubble_reference_polynomials():
    g = make_graph("bubble-massive", 2, [(0, 1), (0, 1)],
                   masses_sq=[0.3, 0.7], momenta=[(1.0,), (-1.0,)])
    rng = np.random.default_rng(0)
    for _ in range(20):
        x1, x2 = rng.uniform(0.1, 5.0, size=2)
        want_psi = x1 + x2
        want_phi = x1 * x2 + (x1 + x2) * (0.3 * x1 + 0.7 * x2)
        got = psi_phi_reference(g, [x1, x2])
        assert got.log_psi == pytest.approx(math.log(want_psi), rel=1e-13)
        assert got.log_phi == pytest.approx(math.log(want_phi), rel=1e-13)


def test_tree_graph_psi_is_one():
    g = make_graph("path", 3, [(0, 1), (1, 2)],
                   momenta=[(1.0,), (0.0,), (-1.0,)])
    v = psi_phi_reference(g, [0.7, 1.3])
    assert v.log_psi == 0.0


def test_bubble_table(bubble, bubble_table):
    assert bubble.omega == 0.0
    assert bubble_table.I_tr == pytest.approx(2.0, rel=1e-14)
    assert bubble_table.r[0b01] == 1.0 and bubble_table.r[0b10] == 1.0
    # r(full) = 0 by the definition of omega; stored, never divides
    assert bubble_table.r[0b11] == 0.0


def test_triangle_table(triangle, triangle_table):
    assert triangle_table.I_tr == pytest.approx(3.0, rel=1e-13)
    assert triangle_table.r[0b111] == pytest.approx(0.0, abs=1e-13)
    for pair in (0b011, 0b101, 0b110):
        assert triangle_table.r[pair] == pytest.approx(2.0)


def test_bubble_residual_values(bubble, bubble_table):
    from troquad.tropical import TropicalSample
    s = TropicalSample(log_x=ONES2, permutation=(0, 1))
    assert feynman_integrand(bubble, bubble_table, s) == pytest.approx(
        0.25, rel=1e-13)
    # one variable dominates: Psi approaches Psi_tr, R approaches 1
    far = TropicalSample(log_x=np.array([-40.0, 0.0]), permutation=(0, 1))
    assert feynman_integrand(bubble, bubble_table, far) == pytest.approx(
        1.0, rel=1e-12)


def test_triangle_residual_at_ones(triangle, triangle_table):
    assert feynman_integrand(triangle, triangle_table, ONES3) == \
        pytest.approx((1 / 3) ** 3, rel=1e-13)


def test_eps_order_zero_identical(bubble, bubble_table):
    rng = RandomStream(3, stream=0)
    for _ in range(100):
        s = sample_gp(bubble_table, rng)
        vec = eps_integrand(bubble, bubble_table, s, order=0)
        assert vec.shape == (1,)
        assert vec[0] == feynman_integrand(bubble, bubble_table, s)


def test_eps_order_one_bubble_at_ones(bubble, bubble_table):
    vec = eps_integrand(bubble, bubble_table,
                        np.zeros(2), order=1)
    assert vec[0] == pytest.approx(0.25, rel=1e-13)
    assert vec[1] == pytest.approx(0.25 * 2 * math.log(2.0), rel=1e-12)


def test_eps_order_two_nonnegative(bubble, bubble_table):
    rng = RandomStream(4, stream=0)
    for _ in range(500):
        s = sample_gp(bubble_table, rng)
        vec = eps_integrand(bubble, bubble_table, s, order=2)
        assert vec[2] >= 0.0


# ---------------------------------------------------------- oracle equivalence

ZOO5 = graphzoo.connected_multigraphs(5)


def test_zoo_counts_cross_checked():
    from collections import Counter
    counts = Counter(len(e) for _, e in graphzoo.connected_multigraphs(6))
    assert dict(counts) == {1: 1, 2: 2, 3: 5, 4: 12, 5: 33, 6: 103}
    for E in (2, 3, 4):
        assert graphzoo.brute_force_count(E) == counts[E]


def zoo_graph(V, edges, seed=0):
    masses, momenta = graphzoo.random_kinematics(V, len(edges), seed)
    return make_graph(f"zoo-{V}-{edges}", V, edges,
                      masses_sq=masses, momenta=momenta)


@pytest.mark.parametrize("V,edges", ZOO5)
def test_laplacian_matches_spanning_tree_oracle(V, edges):
    g = zoo_graph(V, edges)
    rng = np.random.default_rng(len(edges) * 100 + V)
    for _ in range(25):
        x = rng.uniform(0.05, 20.0, size=g.num_edges)
        fast = psi_phi_eval(g, np.log(x))
        slow = psi_phi_reference(g, x)
        assert fast.log_psi == pytest.approx(slow.log_psi, abs=1e-10)
        assert fast.log_phi == pytest.approx(slow.log_phi, abs=1e-10)


@pytest.mark.parametrize("V,edges", ZOO5)
def test_mm_flag_matches_contraction_oracle(V, edges):
    g = zoo_graph(V, edges)
    _, mm = subgraph_data(g)
    for mask in range(1 << g.num_edges):
        assert bool(mm[mask]) == mm_flag_reference(g, mask), (
            f"mask {mask:b}")


@pytest.mark.parametrize("V,edges", ZOO5)
def test_z_tables_supermodular(V, edges):
    g = zoo_graph(V, edges)
    loops, mm = subgraph_data(g)
    z_psi = BooleanTable(g.num_edges, loops.astype(np.float64))
    z_phi = BooleanTable(g.num_edges,
                         loops.astype(np.float64) + mm.astype(np.float64))
    assert check_supermodular(z_psi).passed
    assert check_supermodular(z_phi).passed


@pytest.mark.parametrize("V,edges", ZOO5[::4])
def test_homogeneity_degrees(V, edges):
    g = zoo_graph(V, edges)
    loops = g.loops
    rng = np.random.default_rng(V * 31 + len(edges))
    x = rng.uniform(0.2, 3.0, size=g.num_edges)
    base = psi_phi_reference(g, x)
    for lam in (1e-3, 0.37, 42.0, 1e3):
        scaled = psi_phi_reference(g, lam * x)
        assert scaled.log_psi - base.log_psi == pytest.approx(
            loops * math.log(lam), abs=1e-10 * max(1, abs(base.log_psi)))
        if math.isfinite(base.log_phi):
            assert scaled.log_phi - base.log_phi == pytest.approx(
                (loops + 1) * math.log(lam),
                abs=1e-10 * max(1, abs(base.log_phi)))


# --------------------------------------------------------- facet correctness

def test_tropical_facets_match_expanded_support(k4, k4_table):
    rng = RandomStream(5, stream=0)
    for _ in range(10_000):
        s = sample_gp(k4_table, rng)
        chain, direct = tropical_trace_check(k4, k4_table, s)
        assert chain == pytest.approx(direct, abs=1e-12)


def test_tropical_phi_facets_match(bubble, bubble_table):
    from troquad.permutahedron import trop_values_at_sample
    from troquad.tropical import trop_eval_log
    _, phi = symanzik_polynomials(bubble)
    _, z_phi = z_tables(bubble_table)
    rng = RandomStream(6, stream=0)
    for _ in range(10_000):
        s = sample_gp(bubble_table, rng)
        want = trop_eval_log(phi, s.log_x)
        got = trop_values_at_sample(bubble_table, z_phi, s)
        assert got == pytest.approx(want, abs=1e-12)


def test_residual_within_constant_bounds(k4, k4_table):
    from troquad.tropical import upper_bound_constant
    psi, _ = symanzik_polynomials(k4)
    hi = 1.0  # min coefficient of Psi is 1, so Psi >= Psi_tr
    lo = upper_bound_constant(psi) ** (-k4.D / 2.0)
    rng = RandomStream(7, stream=0)
    seen_lo, seen_hi = math.inf, -math.inf
    for _ in range(10_000):
        s = sample_gp(k4_table, rng)
        r = feynman_integrand(k4, k4_table, s)
        seen_lo, seen_hi = min(seen_lo, r), max(seen_hi, r)
        assert lo * (1 - 1e-12) <= r <= hi * (1 + 1e-12)
    assert 0.0 < seen_lo <= seen_hi < math.inf


# -------------------------------------------------------------- table payload

def test_r_function_full_set_zero():
    g = make_graph("sunrise", 2, [(0, 1)] * 3, D=6.0,
                   momenta=[(1.0,), (-1.0,)])
    loops, mm = subgraph_data(g)
    r = r_function(g, loops, mm)
    assert r[-1] == pytest.approx(0.0, abs=1e-12)
    assert r[0] == 1.0


def test_divergent_graph_reports_subgraphs():
    from troquad.permutahedron import DivergentInput
    # massless bubble in D=2: omega = 1, each single edge spans the
    # momenta, so r(singleton) = 1 - 0 - 1 = 0 (the classic IR problem)
    g = make_graph("bubble-d2", 2, [(0, 1), (0, 1)], D=2.0,
                   momenta=[(1.0,), (-1.0,)])
    with pytest.raises(DivergentInput) as exc:
        build_feynman_tables(g, quiet=True)
    assert set(exc.value.masks) == {0b01, 0b10}


def test_phi_identically_zero_rejected():
    g = make_graph("no-kinematics", 2, [(0, 1), (0, 1)], nu=[1.5, 1.5])
    assert g.phi_is_identically_zero() and g.omega != 0
    with pytest.raises(ExceptionalKinematics, match="Φ ≡ 0"):
        build_feynman_tables(g, quiet=True)


def test_eps_expansion_needs_phi(bubble_table):
    g = make_graph("period-bubble", 2, [(0, 1), (0, 1)])
    t = build_feynman_tables(g, quiet=True)
    assert eps_integrand(g, t, np.zeros(2), order=0)[0] == pytest.approx(
        0.25, rel=1e-13)
    with pytest.raises(ExceptionalKinematics):
        eps_integrand(g, t, np.zeros(2), order=1)


def test_exceptional_momentum_witnesses():
    g = make_graph("square", 4, [(0, 1), (1, 2), (2, 3), (3, 0)],
                   momenta=[(1.0,), (-1.0,), (2.0,), (-2.0,)])
    subs = exceptional_subsets(g)
    assert (0, 1) in subs and (2, 3) in subs
    ok = make_graph("square-ok", 4, [(0, 1), (1, 2), (2, 3), (3, 0)],
                    momenta=[(1.0,), (-3.0,), (2.0,), (0.0,)])
    assert exceptional_subsets(ok) == []
    assert exceptional_subsets(ok, limit=2) is None


def test_oracle_refuses_large_graphs():
    g = make_graph("fat-bubble", 2, [(0, 1)] * 15,
                   momenta=[(1.0,), (-1.0,)])
    with pytest.raises(ValueError, match="refuses"):
        psi_phi_reference(g, np.ones(15))


# ------------------------------------------------------------------ reject path

def test_underflowing_sample_rejected(bubble):
    from troquad.kernels.plan import LOG_X_REJECT
    with pytest.raises(SampleRejected):
        psi_phi_eval(bubble, np.array([LOG_X_REJECT - 1.0, 0.0]))


# ----------------------------------------------------------------- graph file

def test_graph_json_round_trip(tmp_path, triangle):
    p = tmp_path / "tri.json"
    p.write_text(json.dumps(graph_to_json_dict(triangle)))
    back = load_graph(p)
    assert back == triangle


def test_graph_validation_names_field_and_index(tmp_path):
    base = {"name": "g", "num_vertices": 2, "edges": [[0, 1]]}

    def err(patch):
        d = dict(base, **patch)
        with pytest.raises(ValueError) as exc:
            load_graph(write(d))
        return str(exc.value)

    def write(d):
        p = tmp_path / "g.json"
        p.write_text(json.dumps(d))
        return p

    assert "edges[0]" in err({"edges": [[0, 5]]})
    assert "self-loop" in err({"edges": [[1, 1]]})
    assert "nu[1]" in err({"edges": [[0, 1], [0, 1]], "nu": [1.0, -2.0]})
    assert "masses_sq[0]" in err({"masses_sq": [-1.0]})
    assert "momenta[1]" in err(
        {"momenta": [[1.0, 0.0], [-1.0]], "kinematic_dim": 2})
    assert "conservation" in err({"momenta": [[1.0], [1.0]]})
    assert "not connected" in err(
        {"num_vertices": 4, "edges": [[0, 1], [2, 3]]})
    d = dict(base)
    del d["edges"]
    with pytest.raises(ValueError, match="edges: required"):
        load_graph(write(d))
    with pytest.raises(ValueError, match="unknown field"):
        load_graph(write(dict(base, extra=1)))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ValueError, match="not valid JSON"):
        load_graph(bad)


# ------------------------------------------------------------------ estimates

def test_bubble_estimate_is_one(bubble, bubble_table):
    rep = estimate_feynman(bubble, bubble_table, 40_000, seed=5)
    assert abs(rep.estimate[0] - 1.0) < 3 * rep.std_error[0]
    assert rep.n_samples + rep.n_rejected == 40_000


def test_estimate_deterministic(bubble, bubble_table):
    a = estimate_feynman(bubble, bubble_table, 5000, seed=11, workers=2)
    b = estimate_feynman(bubble, bubble_table, 5000, seed=11, workers=2)
    assert a.estimate[0] == b.estimate[0]
    assert a.std_error[0] == b.std_error[0]


def test_estimate_validates_arguments(bubble, bubble_table):
    with pytest.raises(ValueError):
        estimate_feynman(bubble, bubble_table, 1, seed=0)
    with pytest.raises(ValueError):
        estimate_feynman(bubble, bubble_table, 100, seed=0, workers=0)
