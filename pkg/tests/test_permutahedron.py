import math
from fractions import Fraction

import numpy as np
import pytest
import scipy.stats

from troquad.permutahedron import (BooleanTable, DivergentInput, Permutation,
                                   SubsetTable, brute_force_I_tr,
                                   build_subset_table, check_supermodular,
                                   load_subset_table, sample_gp,
                                   save_subset_table, table_memory_estimate,
                                   trop_values_at_sample,
                                   vertex_from_permutation)
from troquad.rng import RandomStream


def table_from(n, fn, dtype=np.float64):
    vals = np.array([fn(mask) for mask in range(1 << n)], dtype=dtype)
    return BooleanTable(n, vals)


def popcount(mask):
    return bin(mask).count("1")


def r_table(n, fn):
    def wrapped(mask):
        return 1.0 if mask == 0 else fn(mask)
    return table_from(n, wrapped)


def triangle_r():
    # singletons 1, pairs 2 (the 3-edge cycle at D=6)
    return r_table(3, lambda m: {1: 1.0, 2: 2.0, 3: 1.0}[popcount(m)])


# ---------------------------------------------------------------- supermodular

def test_permutahedron_function_is_supermodular():
    z = table_from(4, lambda m: popcount(m) * (popcount(m) + 1) // 2)
    assert check_supermodular(z).passed


def test_square_cardinality_is_supermodular():
    z = table_from(3, lambda m: popcount(m) ** 2)
    assert check_supermodular(z).passed


def test_negative_square_violation_witness():
    z = table_from(2, lambda m: -popcount(m) ** 2)
    rep = check_supermodular(z)
    assert not rep.passed
    assert {rep.mask_a, rep.mask_b} == {0b01, 0b10}
    za, zb, zi, zu = rep.values
    assert (za, zb, zi, zu) == (-1, -1, 0, -4)
    assert "not supermodular" in str(rep)


def test_nonzero_empty_set_fails():
    vals = np.ones(4)
    rep = check_supermodular(BooleanTable(2, vals))
    assert not rep.passed


# --------------------------------------------------------------------- vertex

def test_vertex_of_standard_permutahedron():
    z = table_from(4, lambda m: popcount(m) * (popcount(m) + 1) // 2)
    for sigma in ([0, 1, 2, 3], [3, 1, 0, 2], [2, 3, 0, 1]):
        w = vertex_from_permutation(z, Permutation(sigma))
        assert [w[e] for e in sigma] == [1, 2, 3, 4]


def test_vertex_of_zero_function():
    z = table_from(3, lambda m: 0.0)
    w = vertex_from_permutation(z, Permutation([2, 0, 1]))
    assert np.array_equal(w, np.zeros(3))


def test_vertex_triangle_loop_counts():
    # loop number of the edge subsets of the 3-cycle: 0 except the full set
    z = table_from(3, lambda m: 1.0 if m == 0b111 else 0.0)
    w = vertex_from_permutation(z, Permutation([0, 1, 2]))
    assert np.array_equal(w, [0.0, 0.0, 1.0])


def test_vertex_exact_for_fraction_tables():
    vals = np.empty(8, dtype=object)
    for m in range(8):
        vals[m] = Fraction(popcount(m) ** 2, 3)
    z = BooleanTable(3, vals)
    w = vertex_from_permutation(z, Permutation([1, 2, 0]))
    assert w[1] == Fraction(1, 3)
    assert w[2] == Fraction(3, 3)
    assert w[0] == Fraction(5, 3)
    assert all(isinstance(v, Fraction) for v in w)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_chamber_vertex_is_exactly_optimal(n):
    # supermodular z = q|A|^2 + modular part, all rational, so optimality
    # of the chain vertex over every other vertex is an exact comparison
    rng = np.random.default_rng(n)
    q = Fraction(int(rng.integers(1, 5)), int(rng.integers(1, 7)))
    mods = [Fraction(int(rng.integers(-20, 20)), int(rng.integers(1, 9)))
            for _ in range(n)]

    def zf(mask):
        s = q * popcount(mask) ** 2
        for e in range(n):
            if (mask >> e) & 1:
                s += mods[e]
        return s - 0  # keep Fraction type

    vals = np.empty(1 << n, dtype=object)
    for m in range(1 << n):
        vals[m] = zf(m) - zf(0)
    z = BooleanTable(n, vals)

    import itertools
    perms = [Permutation(p) for p in itertools.permutations(range(n))]
    vertices = {p.sigma: vertex_from_permutation(z, p) for p in perms}
    for sigma in perms[:12]:
        # y in the chamber: y_{sigma(1)} <= ... <= y_{sigma(n)}
        levels = sorted(Fraction(int(v), 4)
                        for v in rng.integers(-40, 40, size=n))
        y = [None] * n
        for k, e in enumerate(sigma.sigma):
            y[e] = levels[k]
        own = sum(a * b for a, b in zip(y, vertices[sigma.sigma]))
        best = max(sum(a * b for a, b in zip(y, w))
                   for w in vertices.values())
        assert own == best


# ---------------------------------------------------------------------- build

def test_two_edge_table_value():
    t = build_subset_table(r_table(2, lambda m: 1.0), quiet=True)
    assert t.I_tr == pytest.approx(2.0, rel=1e-14)


def test_triangle_table_value():
    t = build_subset_table(triangle_r(), quiet=True)
    assert t.I_tr == pytest.approx(3.0, rel=1e-14)


def test_divergent_subsets_all_listed():
    def f(m):
        return 0.0 if m in (0b001, 0b110) else 1.0

    with pytest.raises(DivergentInput) as exc:
        build_subset_table(r_table(3, f), quiet=True)
    assert set(exc.value.masks) == {0b001, 0b110}
    assert "r <= 0" in str(exc.value)
    assert "0" in str(exc.value)  # element names, not just masks


def test_build_validates_empty_set_and_finiteness():
    vals = np.ones(4)
    vals[0] = 2.0
    with pytest.raises(ValueError, match="emptyset"):
        build_subset_table(BooleanTable(2, vals), quiet=True)
    vals = np.ones(4)
    vals[2] = math.inf
    with pytest.raises(ValueError, match="finite"):
        build_subset_table(BooleanTable(2, vals), quiet=True)


def test_memory_cap_refusal_names_the_estimate():
    r = r_table(10, lambda m: 1.0)
    with pytest.raises(MemoryError) as exc:
        build_subset_table(r, max_bytes=1000, quiet=True)
    assert str(table_memory_estimate(10)) in str(exc.value)
    assert "--max-mem" in str(exc.value)


def test_memory_estimate_is_24_bytes_per_record():
    assert table_memory_estimate(6) == 64 * 24
    assert table_memory_estimate(12) == 4096 * 24


@pytest.mark.parametrize("trial", range(6))
def test_recursion_matches_brute_force_small(trial):
    rng = np.random.default_rng(100 + trial)
    n = int(rng.integers(2, 8))
    vals = rng.uniform(0.3, 4.0, size=1 << n)
    vals[0] = 1.0
    r = BooleanTable(n, vals)
    t = build_subset_table(r, quiet=True)
    want = brute_force_I_tr(r)
    assert t.I_tr == pytest.approx(want, rel=1e-9)


def test_recursion_matches_brute_force_n8():
    rng = np.random.default_rng(7)
    vals = rng.uniform(0.2, 5.0, size=1 << 8)
    vals[0] = 1.0
    r = BooleanTable(8, vals)
    t = build_subset_table(r, quiet=True)
    assert t.I_tr == pytest.approx(brute_force_I_tr(r), rel=1e-9)


# --------------------------------------------------------------------- file io

def test_table_file_round_trip(tmp_path):
    t = build_subset_table(triangle_r(), loops=np.arange(8, dtype=np.uint32),
                           mm=(np.arange(8) % 2).astype(np.uint8), quiet=True)
    p = tmp_path / "tri.tropfeyn"
    save_subset_table(t, p)
    back = load_subset_table(p)
    assert back.n == t.n
    assert np.array_equal(back.r, t.r)
    assert np.array_equal(back.logJ, t.logJ)
    assert np.array_equal(back.loops, t.loops)
    assert np.array_equal(back.mm, t.mm)
    assert p.read_bytes()[:8] == b"TROPFEYN"


def test_table_file_rejects_corruption(tmp_path):
    t = build_subset_table(triangle_r(), quiet=True)
    p = tmp_path / "tri.tropfeyn"
    save_subset_table(t, p)
    raw = bytearray(p.read_bytes())

    bad_magic = tmp_path / "a"
    bad_magic.write_bytes(b"NOTMAGIC" + bytes(raw[8:]))
    with pytest.raises(ValueError, match="magic"):
        load_subset_table(bad_magic)

    truncated = tmp_path / "b"
    truncated.write_bytes(bytes(raw[:-8]))
    with pytest.raises(ValueError, match="corrupt"):
        load_subset_table(truncated)

    bad_version = tmp_path / "c"
    wrong = bytearray(raw)
    wrong[8] = 99
    bad_version.write_bytes(bytes(wrong))
    with pytest.raises(ValueError, match="version"):
        load_subset_table(bad_version)


# ------------------------------------------------------------------- sampling

def test_sample_budget_is_two_draws_per_level():
    t = build_subset_table(r_table(5, lambda m: 1.5), quiet=True)
    rng = RandomStream(1, stream=0)
    for k in range(1, 4):
        sample_gp(t, rng)
        assert rng.counter == k * 2 * (5 - 1)


def test_sample_point_normalization():
    t = build_subset_table(triangle_r(), quiet=True)
    rng = RandomStream(3, stream=0)
    for _ in range(200):
        s = sample_gp(t, rng)
        assert s.log_x.max() == 0.0
        assert s.log_x[s.permutation[-1]] == 0.0
        assert (s.log_x <= 0.0).all()
        # log x increases along the chain order
        ordered = [s.log_x[e] for e in s.permutation]
        assert ordered == sorted(ordered)


def test_single_element_ground_set():
    vals = np.array([1.0, 0.5])
    t = build_subset_table(BooleanTable(1, vals), quiet=True)
    assert t.I_tr == 1.0
    rng = RandomStream(0, stream=0)
    s = sample_gp(t, rng)
    assert s.permutation == (0,) and s.log_x[0] == 0.0
    assert rng.counter == 0


@pytest.fixture(scope="module")
def chamber_draws():
    # one batch shared by the frequency and gap-law tests
    rng = np.random.default_rng(42)
    n = 4
    vals = rng.uniform(0.5, 3.0, size=1 << n)
    vals[0] = 1.0
    r = BooleanTable(n, vals)
    t = build_subset_table(r, quiet=True)
    stream = RandomStream(2024, stream=0)
    draws = [sample_gp(t, stream) for _ in range(100_000)]
    return r, t, draws


def test_permutation_frequencies_match_chain_weights(chamber_draws):
    import itertools
    r, t, draws = chamber_draws
    n = r.n
    probs = {}
    for sigma in itertools.permutations(range(n)):
        mask, term = 0, 1.0
        for e in sigma[:-1]:
            mask |= 1 << e
            term /= float(r.values[mask])
        probs[sigma] = term / t.I_tr
    assert sum(probs.values()) == pytest.approx(1.0, rel=1e-12)

    counts = {sigma: 0 for sigma in probs}
    for s in draws:
        counts[s.permutation] += 1
    total = len(draws)
    chi2 = sum((counts[s] - total * p) ** 2 / (total * p)
               for s, p in probs.items())
    pval = scipy.stats.chi2.sf(chi2, df=len(probs) - 1)
    assert pval > 0.001


def test_triangle_frequencies_uniform():
    t = build_subset_table(triangle_r(), quiet=True)
    rng = RandomStream(7, stream=0)
    counts = {}
    total = 100_000
    for _ in range(total):
        s = sample_gp(t, rng)
        counts[s.permutation] = counts.get(s.permutation, 0) + 1
    assert len(counts) == 6
    expect = total / 6
    sd = math.sqrt(total * (1 / 6) * (5 / 6))
    for c in counts.values():
        assert abs(c - expect) < 3 * sd


def test_gap_law_standard_exponential(chamber_draws):
    r, t, draws = chamber_draws
    n = r.n
    target = draws[0].permutation
    gaps = []
    for s in draws:
        if s.permutation != target:
            continue
        mask = 0
        for k in range(n - 1):
            mask |= 1 << s.permutation[k]
            g = s.log_x[s.permutation[k]] - s.log_x[s.permutation[k + 1]]
            gaps.append(-float(r.values[mask]) * g)
    assert len(gaps) > 5000
    stat = scipy.stats.kstest(gaps, "expon")
    assert stat.pvalue > 0.001


# ----------------------------------------------------------- chain evaluation

def test_trop_value_zero_function(chamber_draws):
    _, t, draws = chamber_draws
    z = table_from(t.n, lambda m: 0.0)
    for s in draws[:50]:
        assert trop_values_at_sample(t, z, s) == 0.0


def test_trop_value_triangle_psi_equals_max():
    # z = loop count of the 3-cycle's edge subsets; its polytope is the
    # Newton polytope of x1+x2+x3, so the chain value is max(log x)
    t = build_subset_table(triangle_r(), quiet=True)
    z = table_from(3, lambda m: 1.0 if m == 0b111 else 0.0)
    s = sample_gp(t, RandomStream(11, stream=0))
    assert trop_values_at_sample(t, z, s) == pytest.approx(
        s.log_x.max(), abs=1e-12)
    rng = RandomStream(12, stream=0)
    for _ in range(10_000):
        s = sample_gp(t, rng)
        assert trop_values_at_sample(t, z, s) == pytest.approx(0.0, abs=1e-12)


def test_trop_value_requires_permutation():
    t = build_subset_table(triangle_r(), quiet=True)
    z = table_from(3, lambda m: 0.0)
    from troquad.tropical import TropicalSample
    bare = TropicalSample(log_x=np.zeros(3))
    with pytest.raises(ValueError, match="permutation"):
        trop_values_at_sample(t, z, bare)
    with pytest.raises(ValueError, match="mismatch"):
        trop_values_at_sample(t, table_from(2, lambda m: 0.0),
                              TropicalSample(log_x=np.zeros(3),
                                             permutation=(0, 1, 2)))


def test_boolean_table_validation():
    with pytest.raises(ValueError):
        BooleanTable(2, np.zeros(3))
    with pytest.raises(ValueError):
        BooleanTable(0, np.zeros(1))
    with pytest.raises(ValueError):
        Permutation([0, 0, 2])
