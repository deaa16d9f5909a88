"""Flat, dtype-pinned view of one graph + table, shared by both backends.

Both kernels read the same contiguous arrays, so a plan built once is
the single source of truth for a run; nothing in here is mutated by
sampling.  Kept free of imports from the graph module on purpose (the
kernels must stay importable on their own).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# e^{-log x} overflows double precision just past 1e308; samples below
# this are rejected, never clamped (bias-free with an explicit budget)
LOG_X_REJECT = -709.0


@dataclass(frozen=True)
class GraphPlan:
    n: int            # edges = ground-set size
    num_vertices: int
    kinematic_dim: int
    r: np.ndarray       # float64[2^n]
    logJ: np.ndarray    # float64[2^n]
    z_psi: np.ndarray   # float64[2^n], loop counts
    z_phi: np.ndarray   # float64[2^n], loops + mm flag
    edge_u: np.ndarray  # int32[n]
    edge_v: np.ndarray  # int32[n]
    m2: np.ndarray      # float64[n]
    P: np.ndarray       # float64[(V-1), dk], momenta of vertices 0..V-2
    D: float
    omega: float
    loops_full: int
    use_masses: bool
    use_momenta: bool
    order: int          # expansion order K; values have K+1 components

    @property
    def draws_per_sample(self) -> int:
        return 2 * (self.n - 1)

    @property
    def n_orders(self) -> int:
        return self.order + 1

    @property
    def need_phi(self) -> bool:
        return self.omega != 0.0 or self.order >= 1


def make_plan(graph, table, order: int = 0) -> GraphPlan:
    """graph: FeynmanGraph-shaped object; table: SubsetTable for it."""
    if table.n != graph.num_edges:
        raise ValueError(
            f"table is for n={table.n}, graph has {graph.num_edges} edges")
    z_psi = table.loops.astype(np.float64)
    z_phi = z_psi + table.mm.astype(np.float64)
    # facet functions have z(emptyset) = 0 by definition; the stored
    # mm(emptyset) is 1 exactly when Phi vanishes identically, in which
    # case z_phi is never consulted -- zeroing keeps the kernel's chain
    # telescoping identical to trop_values_at_sample
    z_phi[0] = 0.0
    V = graph.num_vertices
    P = np.ascontiguousarray(
        np.asarray(graph.momenta, dtype=np.float64)[:V - 1, :])
    m2 = np.asarray(graph.masses_sq, dtype=np.float64)
    return GraphPlan(
        n=graph.num_edges,
        num_vertices=V,
        kinematic_dim=graph.kinematic_dim,
        r=np.ascontiguousarray(table.r, dtype=np.float64),
        logJ=np.ascontiguousarray(table.logJ, dtype=np.float64),
        z_psi=np.ascontiguousarray(z_psi),
        z_phi=np.ascontiguousarray(z_phi),
        edge_u=np.ascontiguousarray([e[0] for e in graph.edges], dtype=np.int32),
        edge_v=np.ascontiguousarray([e[1] for e in graph.edges], dtype=np.int32),
        m2=np.ascontiguousarray(m2),
        P=P,
        D=float(graph.D),
        omega=float(graph.omega),
        loops_full=int(graph.loops),
        use_masses=bool((m2 > 0).any()),
        use_momenta=bool(P.any()),
        order=int(order),
    )
