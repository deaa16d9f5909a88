import numpy as np
import pytest

from troquad.feynman import build_feynman_tables, make_graph


@pytest.fixture(scope="session")
def bubble():
    """Two parallel edges, one-dimensional back-to-back momenta: the
    simplest one-loop graph with omega = 0 at D = 4."""
    return make_graph("bubble", 2, [(0, 1), (0, 1)],
                      momenta=[(1.0,), (-1.0,)], kinematic_dim=1)


@pytest.fixture(scope="session")
def bubble_table(bubble):
    return build_feynman_tables(bubble, quiet=True)


@pytest.fixture(scope="session")
def triangle():
    return make_graph(
        "triangle", 3, [(0, 1), (1, 2), (0, 2)], D=6.0,
        momenta=[(1.0, 0.0), (0.0, 1.0), (-1.0, -1.0)], kinematic_dim=2)


@pytest.fixture(scope="session")
def triangle_table(triangle):
    return build_feynman_tables(triangle, quiet=True)


@pytest.fixture(scope="session")
def k4():
    """The complete graph on 4 vertices (wheel W3): E = 6, loops = 3,
    omega = 0 at D = 4.  Its period is 6*zeta(3)."""
    edges = [(a, b) for a in range(4) for b in range(a + 1, 4)]
    return make_graph("K4", 4, edges, D=4.0)


@pytest.fixture(scope="session")
def k4_table(k4):
    return build_feynman_tables(k4, quiet=True)


@pytest.fixture
def rng_uniform_oracle():
    """Plain-python splitmix64 reimplementation, kept deliberately
    separate from the package's own."""
    M = (1 << 64) - 1

    def mix(z):
        z &= M
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M
        return z ^ (z >> 31)

    def word(seed, stream, i):
        key = mix(mix(seed) ^ ((stream * 0xA24BAED4963EE407) & M))
        return mix((key + (i + 1) * 0x9E3779B97F4A7C15) & M)

    def uniform(seed, stream, i):
        return ((word(seed, stream, i) >> 12) + 0.5) * 2.0 ** -52

    return uniform
