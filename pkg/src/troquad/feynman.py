"""Feynman graphs in the parametric (Euclidean) representation.

The integrand on the projective simplex is

    prod_e x_e^{nu_e} / Psi^{D/2} * (Psi/Phi)^{omega},
    omega = sum nu_e - loops * D/2,

with Psi the spanning-tree polynomial and Phi the momentum/mass
polynomial.  Both Newton polytopes are generalized permutahedra with
facet functions z_Psi(gamma) = loops(gamma) and z_Phi(gamma) =
loops(gamma) + [gamma mass-momentum-spanning], which is what connects
graphs to the subset-table sampler: r(gamma) = sum_{e in gamma} nu_e
- (D/2) z_Psi(gamma) - omega z_Phi-part, and positivity of r on proper
non-empty subgraphs is the convergence condition.

Evaluation never expands the polynomials: Psi = (prod x_e) det Ltilde
with the weighted Laplacian built from 1/x_e, and the momentum part of
Phi/Psi is Tr(P^T Ltilde^{-1} P) via the same Cholesky factor.  The
expanded sums over spanning trees / 2-forests exist here only as the
exponential-time oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .kernels.plan import LOG_X_REJECT
from .mc import SampleRejected
from .permutahedron import (BooleanTable, SubsetTable, build_subset_table,
                            trop_values_at_sample)
from .tropical import SparsePolynomial, TropicalSample, eval_log, trop_eval_log
# components below this are treated as exact zeros (conservation noise)
MOMENTUM_EPS = 1e-10
ORACLE_MAX_EDGES = 14


class ExceptionalKinematics(ValueError):
    pass


class _UnionFind:
    __slots__ = ("parent",)

    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a

    def union(self, a, b):
        """False if a, b were already connected (edge closes a cycle)."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True


@dataclass(frozen=True)
class FeynmanGraph:
    name: str
    num_vertices: int
    edges: tuple[tuple[int, int], ...]
    nu: tuple[float, ...]
    D: float
    masses_sq: tuple[float, ...]
    momenta: tuple[tuple[float, ...], ...]
    kinematic_dim: int

    def __post_init__(self):
        V, E = self.num_vertices, len(self.edges)
        if V < 1:
            raise ValueError("num_vertices: must be >= 1")
        if E < 1:
            raise ValueError("edges: need at least one edge")
        for i, e in enumerate(self.edges):
            if len(e) != 2:
                raise ValueError(f"edges[{i}]: expected a pair, got {e}")
            u, v = e
            if not (0 <= u < V and 0 <= v < V):
                raise ValueError(f"edges[{i}]: vertex out of range 0..{V - 1}")
            if u == v:
                raise ValueError(f"edges[{i}]: self-loop ({u},{v}) not permitted")
        if len(self.nu) != E:
            raise ValueError(f"nu: expected {E} entries, got {len(self.nu)}")
        for i, v in enumerate(self.nu):
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"nu[{i}]: must be finite and > 0, got {v}")
        if not (math.isfinite(self.D) and self.D > 0):
            raise ValueError(f"D: must be finite and > 0, got {self.D}")
        if len(self.masses_sq) != E:
            raise ValueError(
                f"masses_sq: expected {E} entries, got {len(self.masses_sq)}")
        for i, v in enumerate(self.masses_sq):
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"masses_sq[{i}]: must be >= 0, got {v}")
        if len(self.momenta) != V:
            raise ValueError(
                f"momenta: expected {V} vertex rows, got {len(self.momenta)}")
        dk = self.kinematic_dim
        if dk < 1:
            raise ValueError(f"kinematic_dim: must be >= 1, got {dk}")
        for i, p in enumerate(self.momenta):
            if len(p) != dk:
                raise ValueError(
                    f"momenta[{i}]: expected {dk} components, got {len(p)}")
            if not all(math.isfinite(c) for c in p):
                raise ValueError(f"momenta[{i}]: non-finite component")
        uf = _UnionFind(V)
        for u, v in self.edges:
            uf.union(u, v)
        if len({uf.find(v) for v in range(V)}) != 1:
            raise ValueError("edges: graph is not connected")
        mom_arr = np.asarray(self.momenta, dtype=np.float64)
        total = mom_arr.sum(axis=0)
        scale = max(1.0, float(np.abs(mom_arr).max()))
        if float(np.abs(total).max()) > MOMENTUM_EPS * scale:
            raise ValueError(
                f"momenta: total momentum {total.tolist()} violates "
                f"conservation (|sum| > {MOMENTUM_EPS} * scale)")
        # sampling scratch, fixed after validation
        eu = np.fromiter((e[0] for e in self.edges), dtype=np.intp, count=E)
        ev = np.fromiter((e[1] for e in self.edges), dtype=np.intp, count=E)
        object.__setattr__(self, "_edge_u", eu)
        object.__setattr__(self, "_edge_v", ev)
        object.__setattr__(self, "_nu_arr", np.asarray(self.nu, float))
        object.__setattr__(self, "_m2_arr", np.asarray(self.masses_sq, float))
        object.__setattr__(
            self, "_P", np.asarray(self.momenta, float)[:V - 1, :])

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def loops(self) -> int:
        return len(self.edges) - self.num_vertices + 1

    @property
    def omega(self) -> float:
        return float(sum(self.nu)) - self.loops * self.D / 2.0

    @property
    def massive_edge_mask(self) -> int:
        mask = 0
        for i, m2 in enumerate(self.masses_sq):
            if m2 > 0:
                mask |= 1 << i
        return mask

    @property
    def momentum_vertices(self) -> tuple[int, ...]:
        return tuple(
            v for v, p in enumerate(self.momenta)
            if any(abs(c) > MOMENTUM_EPS for c in p))

    def phi_is_identically_zero(self) -> bool:
        return self.massive_edge_mask == 0 and len(self.momentum_vertices) <= 1


def make_graph(name, num_vertices, edges, *, nu=None, D=4.0, masses_sq=None,
               momenta=None, kinematic_dim=None) -> FeynmanGraph:
    """Fill the optional fields with their documented defaults."""
    E = len(edges)
    if momenta is None:
        momenta = [[0.0]] * num_vertices if kinematic_dim is None else \
            [[0.0] * kinematic_dim] * num_vertices
    if kinematic_dim is None:
        kinematic_dim = max((len(p) for p in momenta), default=1)
    return FeynmanGraph(
        name=str(name),
        num_vertices=int(num_vertices),
        edges=tuple((int(u), int(v)) for u, v in edges),
        nu=tuple(float(v) for v in (nu if nu is not None else [1.0] * E)),
        D=float(D),
        masses_sq=tuple(float(v) for v in (
            masses_sq if masses_sq is not None else [0.0] * E)),
        momenta=tuple(tuple(float(c) for c in p) for p in momenta),
        kinematic_dim=int(kinematic_dim),
    )


def graph_from_json_dict(d: dict) -> FeynmanGraph:
    for key in ("name", "num_vertices", "edges"):
        if key not in d:
            raise ValueError(f"{key}: required field missing")
    unknown = set(d) - {"name", "num_vertices", "edges", "nu", "D",
                        "masses_sq", "momenta", "kinematic_dim"}
    if unknown:
        raise ValueError(f"unknown field(s): {', '.join(sorted(unknown))}")
    return make_graph(
        d["name"], d["num_vertices"], d["edges"],
        nu=d.get("nu"), D=d.get("D", 4.0), masses_sq=d.get("masses_sq"),
        momenta=d.get("momenta"), kinematic_dim=d.get("kinematic_dim"))


def load_graph(path) -> FeynmanGraph:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"graph file is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ValueError("graph file must hold a JSON object")
    return graph_from_json_dict(d)


def graph_to_json_dict(g: FeynmanGraph) -> dict:
    return {
        "name": g.name, "num_vertices": g.num_vertices,
        "edges": [list(e) for e in g.edges], "nu": list(g.nu), "D": g.D,
        "masses_sq": list(g.masses_sq),
        "momenta": [list(p) for p in g.momenta],
        "kinematic_dim": g.kinematic_dim,
    }


# ---------------------------------------------------------------------------
# Symanzik evaluation


@dataclass(frozen=True)
class SymanzikValue:
    log_psi: float
    log_phi: float  # -inf only when the momentum/mass polynomial is empty


def psi_phi_eval(g: FeynmanGraph, s: TropicalSample) -> SymanzikValue:
    """log Psi, log Phi at a normalized sample via the reduced Laplacian.

    L = sum_e (1/x_e) (e_u - e_v)(e_u - e_v)^T with the last vertex
    deleted; log Psi = sum log x_e + 2 sum log diag(chol).  The trace
    term reuses the factor: Tr(P^T L~^{-1} P) = |C^{-1} P|_F^2.

    Samples whose smallest log x would overflow 1/x_e, or whose
    factorization loses positive-definiteness to rounding, raise
    SampleRejected (callers count these against the rejection budget).
    """
    raw = s.log_x if isinstance(s, TropicalSample) else s
    log_x = np.asarray(raw, dtype=np.float64)
    if log_x.shape != (g.num_edges,):
        raise ValueError(
            f"sample has {log_x.shape} coordinates, graph has {g.num_edges} edges")
    if log_x.min() < LOG_X_REJECT:
        raise SampleRejected
    V = g.num_vertices
    w = np.exp(-log_x)
    L = np.zeros((V, V))
    np.add.at(L, (g._edge_u, g._edge_u), w)
    np.add.at(L, (g._edge_v, g._edge_v), w)
    np.add.at(L, (g._edge_u, g._edge_v), -w)
    np.add.at(L, (g._edge_v, g._edge_u), -w)
    try:
        C = np.linalg.cholesky(L[:-1, :-1])
    except np.linalg.LinAlgError:
        raise SampleRejected from None
    diag = np.diagonal(C)
    log_psi = float(log_x.sum() + 2.0 * np.log(diag).sum())
    if not math.isfinite(log_psi):
        raise SampleRejected
    tm = 0.0
    if g._P.any():
        Z = np.linalg.solve(C, g._P)
        tm += float((Z * Z).sum())
    if g._m2_arr.any():
        tm += float((np.exp(log_x) * g._m2_arr).sum())
    if tm > 0.0:
        log_phi = log_psi + math.log(tm)
        if not math.isfinite(log_phi):
            raise SampleRejected
    else:
        log_phi = -math.inf
    return SymanzikValue(log_psi=log_psi, log_phi=log_phi)


def _spanning_subsets(g: FeynmanGraph, size: int):
    """Acyclic edge subsets of the given size (V - size components),
    together with their union-find."""
    V = g.num_vertices
    for sub in combinations(range(g.num_edges), size):
        uf = _UnionFind(V)
        ok = True
        for ei in sub:
            u, v = g.edges[ei]
            if not uf.union(u, v):
                ok = False
                break
        if ok:
            yield sub, uf


def symanzik_polynomials(g: FeynmanGraph):
    """Expanded Psi and Phi as sparse polynomials in the edge variables.

    Exponential-time oracle (refuses E > 14): Psi sums over spanning
    trees, Phi over spanning 2-forests weighted by the squared momentum
    crossing the cut, plus Psi * sum x_e m_e^2.  Phi may come back with
    no terms; callers treat that as the zero polynomial.
    """
    E, V = g.num_edges, g.num_vertices
    if E > ORACLE_MAX_EDGES:
        raise ValueError(
            f"spanning-tree oracle refuses E = {E} > {ORACLE_MAX_EDGES} edges")
    full = (1 << E) - 1
    psi_terms = {}
    tree_masks = []
    for sub, _ in _spanning_subsets(g, V - 1):
        mask = 0
        for ei in sub:
            mask |= 1 << ei
        tree_masks.append(mask)
        comp = full ^ mask
        expo = tuple((comp >> e) & 1 for e in range(E))
        psi_terms[expo] = psi_terms.get(expo, 0.0) + 1.0
    mom = np.asarray(g.momenta, dtype=np.float64)
    phi_terms = {}
    if len(g.momentum_vertices) >= 2:
        for sub, uf in _spanning_subsets(g, V - 2):
            mask = 0
            for ei in sub:
                mask |= 1 << ei
            root0 = uf.find(0)
            side = [v for v in range(V) if uf.find(v) == root0]
            psq = float((mom[side].sum(axis=0) ** 2).sum())
            if psq == 0.0:
                continue
            comp = full ^ mask
            expo = tuple((comp >> e) & 1 for e in range(E))
            phi_terms[expo] = phi_terms.get(expo, 0.0) + psq
    if g.massive_edge_mask:
        for tmask in tree_masks:
            comp = full ^ tmask
            for e in range(E):
                m2 = g.masses_sq[e]
                if m2 > 0:
                    expo = tuple(((comp >> k) & 1) + (1 if k == e else 0)
                                 for k in range(E))
                    phi_terms[expo] = phi_terms.get(expo, 0.0) + m2

    def build(terms):
        if not terms:
            return None
        items = sorted(terms.items())
        return SparsePolynomial(
            n_vars=E,
            terms=[(list(expo), c) for expo, c in items])

    return build(psi_terms), build(phi_terms)


def _cached_polys(g: FeynmanGraph):
    polys = getattr(g, "_sym_polys", None)
    if polys is None:
        polys = symanzik_polynomials(g)
        object.__setattr__(g, "_sym_polys", polys)
    return polys


def psi_phi_reference(g: FeynmanGraph, x) -> SymanzikValue:
    """Evaluate the expanded polynomials at positive x (oracle path)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (g.num_edges,) or (x <= 0).any():
        raise ValueError("x must be a positive vector, one entry per edge")
    psi, phi = _cached_polys(g)
    y = np.log(x)
    lv = eval_log(psi, y)
    log_psi = lv.log_abs
    if phi is None:
        log_phi = -math.inf
    else:
        log_phi = eval_log(phi, y).log_abs
    return SymanzikValue(log_psi=float(log_psi), log_phi=float(log_phi))


# ---------------------------------------------------------------------------
# subgraph tables


def subgraph_data(g: FeynmanGraph):
    """Per-subset loop counts and mass-momentum-spanning flags.

    loops(gamma) = |gamma| - V + c(gamma) with components counted over
    all V vertices; the flag needs gamma to contain every massive edge
    and one component of gamma to contain every momentum vertex.
    O(E 2^E) union-find sweep.
    """
    E, V = g.num_edges, g.num_vertices
    size = 1 << E
    loops = np.zeros(size, dtype=np.uint32)
    mm = np.zeros(size, dtype=np.uint8)
    massive = g.massive_edge_mask
    mom_v = g.momentum_vertices
    edges = g.edges
    for mask in range(size):
        uf = _UnionFind(V)
        c = V
        m = mask
        nedges = 0
        while m:
            bit = m & -m
            ei = bit.bit_length() - 1
            m ^= bit
            nedges += 1
            u, v = edges[ei]
            if uf.union(u, v):
                c -= 1
        loops[mask] = nedges - V + c
        if (mask & massive) == massive:
            if not mom_v:
                mm[mask] = 1
            else:
                r0 = uf.find(mom_v[0])
                mm[mask] = int(all(uf.find(v) == r0 for v in mom_v[1:]))
    return loops, mm


def r_function(g: FeynmanGraph, loops: np.ndarray, mm: np.ndarray) -> np.ndarray:
    """r(gamma) = sum_{e in gamma} nu_e - (D/2) loops(gamma)
    - omega * mm(gamma); r(emptyset) overridden to the recursion seed 1.
    r(full) is 0 by construction and is stored but never divides."""
    E = g.num_edges
    idx = np.arange(1 << E, dtype=np.int64)
    nu_sum = np.zeros(idx.shape)
    for e in range(E):
        nu_sum += g.nu[e] * ((idx >> e) & 1)
    r = nu_sum - (g.D / 2.0) * loops.astype(np.float64) \
        - g.omega * mm.astype(np.float64)
    r[0] = 1.0
    return r


def build_feynman_tables(g: FeynmanGraph, *, max_bytes=None,
                         quiet: bool = False) -> SubsetTable:
    """Full preprocessing: subgraph sweep, divergence check, J recursion.

    Fails early on kinematics that make Phi vanish identically while
    omega != 0 (the representation then has no finite meaning).
    """
    if g.phi_is_identically_zero() and g.omega != 0.0:
        raise ExceptionalKinematics(
            "exceptional kinematics: Φ ≡ 0 (no masses, at most one vertex "
            f"with nonzero momentum) while ω = {g.omega:g} != 0")
    loops, mm = subgraph_data(g)
    r = r_function(g, loops, mm)
    kwargs = {} if max_bytes is None else {"max_bytes": max_bytes}
    return build_subset_table(
        BooleanTable(g.num_edges, r), loops=loops, mm=mm, quiet=quiet,
        **kwargs)


def z_tables(t: SubsetTable):
    """Facet functions of the two Newton polytopes, straight off the
    stored payload: z_Psi = loops, z_Phi = loops + mm."""
    z_psi = t.loops.astype(np.float64)
    return (BooleanTable(t.n, z_psi),
            BooleanTable(t.n, z_psi + t.mm.astype(np.float64)))


def mm_flag_reference(g: FeynmanGraph, mask: int) -> bool:
    """Independent route to the flag: contract gamma and test whether
    the contracted graph's momentum/mass polynomial vanishes
    identically.  Every coefficient is >= 0 in the Euclidean regime, so
    one evaluation at a positive point decides; self-loops created by
    the contraction keep their masses (they multiply every term but
    never join a forest).  Exponential; test/cross-check use only.
    """
    V = g.num_vertices
    uf = _UnionFind(V)
    m = mask
    while m:
        bit = m & -m
        ei = bit.bit_length() - 1
        m ^= bit
        uf.union(*g.edges[ei])
    roots = sorted({uf.find(v) for v in range(V)})
    relabel = {r: i for i, r in enumerate(roots)}
    W = len(roots)
    rem_edges = []
    rem_m2 = []
    for ei in range(g.num_edges):
        if (mask >> ei) & 1:
            continue
        u, v = (relabel[uf.find(w)] for w in g.edges[ei])
        rem_edges.append((u, v))
        rem_m2.append(g.masses_sq[ei])
    if any(m2 > 0 for m2 in rem_m2):
        return False
    if W < 2:
        return True
    mom = np.zeros((W, g.kinematic_dim))
    for v in range(V):
        mom[relabel[uf.find(v)]] += np.asarray(g.momenta[v])
    live = [(u, v) for (u, v) in rem_edges if u != v]
    # 2-forests of the contracted graph; any positive cut kills the flag
    for sub in combinations(range(len(live)), W - 2):
        uf2 = _UnionFind(W)
        ok = True
        for ei in sub:
            if not uf2.union(*live[ei]):
                ok = False
                break
        if not ok:
            continue
        r0 = uf2.find(0)
        side = [w for w in range(W) if uf2.find(w) == r0]
        if float((mom[side].sum(axis=0) ** 2).sum()) > 0.0:
            return False
    return True


def exceptional_subsets(g: FeynmanGraph, limit: int = 12):
    """Strict subsets of the nonzero external momenta summing to zero.

    Witnesses of exceptional kinematics (the convergence theory assumes
    there are none).  Returns vertex-index tuples; None when there are
    too many momentum vertices to enumerate (caller should say so)."""
    verts = g.momentum_vertices
    if len(verts) > limit:
        return None
    mom = np.asarray(g.momenta, dtype=np.float64)
    scale = max(1.0, float(np.abs(mom).max()))
    out = []
    for k in range(1, len(verts)):
        for sub in combinations(verts, k):
            total = mom[list(sub)].sum(axis=0)
            if np.abs(total).max() <= MOMENTUM_EPS * scale:
                out.append(sub)
    return out


# ---------------------------------------------------------------------------
# integrands


def _cached_z(t: SubsetTable):
    z = getattr(t, "_z_tables", None)
    if z is None:
        z = z_tables(t)
        t._z_tables = z
    return z


def _as_chain_sample(s) -> TropicalSample:
    """Attach the maximizing chain to a raw point.

    Sampler output already carries its chain.  For an arbitrary x the
    braid-fan chamber containing log x is the increasing sort, and that
    chain's vertex attains the tropical maximum (supermodular z).
    """
    if isinstance(s, TropicalSample) and s.permutation is not None:
        return s
    log_x = np.asarray(s.log_x if isinstance(s, TropicalSample) else s,
                       dtype=np.float64)
    order = tuple(int(i) for i in np.argsort(log_x, kind="stable"))
    return TropicalSample(log_x=log_x, permutation=order)


def _log_residual(g: FeynmanGraph, t: SubsetTable, s: TropicalSample,
                  need_phi: bool):
    """(log R, SymanzikValue); rejects samples whose Phi vanishes when
    it is needed."""
    s = _as_chain_sample(s)
    z_psi, z_phi = _cached_z(t)
    log_psi_tr = trop_values_at_sample(t, z_psi, s)
    sym = psi_phi_eval(g, s)
    log_r = (g.D / 2.0) * (log_psi_tr - sym.log_psi)
    if g.omega != 0.0:
        log_phi_tr = trop_values_at_sample(t, z_phi, s)
        if not math.isfinite(sym.log_phi):
            raise SampleRejected
        log_r += g.omega * (
            sym.log_psi - log_psi_tr + log_phi_tr - sym.log_phi)
    elif need_phi and not math.isfinite(sym.log_phi):
        raise SampleRejected
    return log_r, sym


def feynman_integrand(g: FeynmanGraph, t: SubsetTable, s: TropicalSample) -> float:
    """R(x) = (Psi_tr/Psi)^{D/2} (Psi Phi_tr / (Psi_tr Phi))^{omega}.

    Bounded above and below by constants of the graph, which is the
    whole point: the tropical measure absorbs every singularity."""
    log_r, _ = _log_residual(g, t, s, need_phi=False)
    return math.exp(log_r)


def eps_integrand(g: FeynmanGraph, t: SubsetTable, s: TropicalSample,
                  order: int) -> np.ndarray:
    """Per-sample coefficients of the expansion D -> D - 2*eps.

    The shifted integrand is the eps = 0 one times e^{eps L},
    L = log Psi + loops * log(Psi/Phi), so order k contributes
    R * L^k / k!.  L is projectively invariant (degree-0 combination),
    so evaluating at the normalized representative is safe.
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    if order >= 1 and g.phi_is_identically_zero():
        raise ExceptionalKinematics(
            "exceptional kinematics: Φ ≡ 0, the dimension expansion "
            "needs log(Ψ/Φ)")
    log_r, sym = _log_residual(g, t, s, need_phi=order >= 1)
    r = math.exp(log_r)
    if order == 0:
        return np.array([r])
    L = sym.log_psi + g.loops * (sym.log_psi - sym.log_phi)
    out = np.empty(order + 1)
    term = r
    out[0] = term
    for k in range(1, order + 1):
        term *= L / k
        out[k] = term
    return out


def estimate_feynman(g: FeynmanGraph, t: SubsetTable, n_samples: int,
                     seed: int, workers: int = 1, *, order: int = 0,
                     reject_threshold: float | None = None,
                     backend: str | None = None,
                     seconds_preprocess: float = 0.0):
    """Fast path: fused kernel per worker stream, merged in worker order.

    Deterministic given (seed, workers, backend build).  The rejection
    budget is enforced at worker granularity here (the kernels stream
    whole ranges); the slow generic driver aborts per sample.
    """
    import time

    from . import kernels, mc

    if reject_threshold is None:
        reject_threshold = mc.DEFAULT_REJECT_THRESHOLD
    if n_samples < 2:
        raise ValueError("need n_samples >= 2")
    if workers < 1:
        raise ValueError("need workers >= 1")
    if order >= 1 and g.phi_is_identically_zero():
        raise ExceptionalKinematics(
            "exceptional kinematics: Φ ≡ 0, the dimension expansion "
            "needs log(Ψ/Φ)")
    impl = kernels.get_backend(backend)
    plan = kernels.make_plan(g, t, order=order)
    scale = t.I_tr
    budget = max(1, int(reject_threshold * n_samples))
    t0 = time.perf_counter()
    total = None
    rejected = 0
    for w, count in enumerate(mc.worker_counts(n_samples, workers)):
        if count == 0:
            continue
        n_ok, mean, m2, sum4, rej = impl.accumulate(plan, seed, w, 0, count)
        st = mc.EstimatorState(order + 1, scale)
        st.count = n_ok
        st.mean = np.asarray(mean, dtype=np.float64)
        st.M2 = np.asarray(m2, dtype=np.float64)
        st.sum4 = np.asarray(sum4, dtype=np.float64)
        st.rejected = rej
        rejected += rej
        if rejected > budget:
            raise mc.RejectionBudgetExceeded(rejected, n_samples,
                                             reject_threshold)
        total = st if total is None else mc.merge(total, st)
    dt = time.perf_counter() - t0
    return mc.report_from_state(
        total, seconds_preprocess=seconds_preprocess, seconds_sampling=dt,
        seed=seed, workers=workers, attempted=n_samples)


def tropical_trace_check(g: FeynmanGraph, t: SubsetTable,
                         s: TropicalSample) -> tuple[float, float]:
    """(trop via chain telescoping, trop via the expanded support) for
    log Psi_tr; equality is the facet-correctness property.  Oracle
    sizes only."""
    psi, _ = _cached_polys(g)
    z_psi, _ = _cached_z(t)
    return (trop_values_at_sample(t, z_psi, s),
            trop_eval_log(psi, np.asarray(s.log_x)))
