"""Sector decomposition for ratios of tropical maxima.

The quotient space R^n / span(1) (projective log coordinates) splits
into cones on which both max_{a in A} <y,a> and max_{b in B} <y,b>
are linear, given by single support points w_A, w_B.  On such a cone
the tropical density behaves like e^{-<y, w>} with w = w_B - w_A, and
a simplicial cone with generators u^(1..n-1) contributes

    I_tr_C = |det(u^(1), ..., u^(n-1), 1)| / prod_k <u^(k), w>

to the normalization.  Sampling a cone is then n-1 independent
Exp(1) draws pushed through the generator matrix.

Everything geometric here is exact (Fractions): determinant signs and
pairing positivity decide convergence, so they must not be subject to
rounding.  Floats appear only in the sampling tables.

The builder is deliberately desk-scale (n <= 8, brute-force ray
enumeration): large inputs with permutahedral structure never
triangulate at all, and anything else can be fed in through the text
format from an external triangulation tool.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

import numpy as np

from . import mc
from .rng import RandomStream
from .tropical import TropicalSample

MAX_BUILD_DIM = 8


class FanError(ValueError):
    pass


class DivergentDirection(FanError):
    """Some direction makes the integrand grow: the integral diverges."""


# ---------------------------------------------------------------------------
# exact linear algebra, small dimension


def _det(rows) -> Fraction:
    m = [list(r) for r in rows]
    n = len(m)
    det = Fraction(1)
    for col in range(n):
        piv = next((r for r in range(col, n) if m[r][col] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != col:
            m[col], m[piv] = m[piv], m[col]
            det = -det
        det *= m[col][col]
        inv = Fraction(1, 1) / m[col][col]
        for r in range(col + 1, n):
            if m[r][col] != 0:
                f = m[r][col] * inv
                for c in range(col, n):
                    m[r][c] -= f * m[col][c]
    return det


def _rank(rows) -> int:
    m = [list(map(Fraction, r)) for r in rows]
    if not m:
        return 0
    cols = len(m[0])
    rank = 0
    for col in range(cols):
        piv = next((r for r in range(rank, len(m)) if m[r][col] != 0), None)
        if piv is None:
            continue
        m[rank], m[piv] = m[piv], m[rank]
        inv = Fraction(1, 1) / m[rank][col]
        for r in range(len(m)):
            if r != rank and m[r][col] != 0:
                f = m[r][col] * inv
                for c in range(col, cols):
                    m[r][c] -= f * m[rank][c]
        rank += 1
        if rank == len(m):
            break
    return rank


def _nullspace_1d(rows, dim):
    """If the rows span a (dim-1)-dim space, return a spanning vector of
    the kernel, else None."""
    m = [list(map(Fraction, r)) for r in rows]
    pivots = {}
    rank = 0
    for col in range(dim):
        piv = next((r for r in range(rank, len(m)) if m[r][col] != 0), None)
        if piv is None:
            continue
        m[rank], m[piv] = m[piv], m[rank]
        inv = Fraction(1, 1) / m[rank][col]
        m[rank] = [v * inv for v in m[rank]]
        for r in range(len(m)):
            if r != rank and m[r][col] != 0:
                f = m[r][col]
                m[r] = [a - f * b for a, b in zip(m[r], m[rank])]
        pivots[col] = rank
        rank += 1
    if rank != dim - 1:
        return None
    free = next(c for c in range(dim) if c not in pivots)
    v = [Fraction(0)] * dim
    v[free] = Fraction(1)
    for col, r in pivots.items():
        v[col] = -m[r][free]
    return v


def _primitive(vec):
    """Scale a rational vector by a positive rational to coprime ints."""
    fr = [Fraction(v) for v in vec]
    den = math.lcm(*(f.denominator for f in fr)) if fr else 1
    ints = [int(f * den) for f in fr]
    g = math.gcd(*(abs(i) for i in ints)) if any(ints) else 1
    return tuple(i // g for i in ints)


# ---------------------------------------------------------------------------
# sectors


@dataclass(frozen=True)
class SimplicialSector:
    """One simplicial cone of the refined fan.

    generators: n-1 integer vectors, length n, representatives with
    last coordinate 0 (the y_n = 0 chart of R^n/1R).  weight: the
    exact w = w_B - w_A on this cone.  All validated on construction.
    """

    generators: tuple[tuple[Fraction, ...], ...]
    weight: tuple[Fraction, ...]
    sector_factor: float = field(init=False)
    _pairings: tuple[Fraction, ...] = field(init=False)
    _coeff: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.weight)
        if len(self.generators) != n - 1 or any(
                len(u) != n for u in self.generators):
            raise FanError("need n-1 generators of length n")
        if sum(self.weight) != 0:
            raise FanError(f"<1, w> = {sum(self.weight)} != 0")
        pair = tuple(
            sum(uk * wk for uk, wk in zip(u, self.weight))
            for u in self.generators)
        for k, p in enumerate(pair):
            if p <= 0:
                raise FanError(f"non-positive pairing <u^({k + 1}), w> = {p}")
        det = _det([list(u) for u in self.generators] + [[Fraction(1)] * n])
        if det == 0:
            raise FanError("degenerate cone (det = 0)")
        factor = abs(det)
        for p in pair:
            factor /= p
        object.__setattr__(self, "_pairings", pair)
        object.__setattr__(self, "sector_factor", float(factor))
        # log x = coeff @ (-log xi); column i is u^(i) / <u^(i), w>
        coeff = np.array([[float(Fraction(uk) / p) for uk in u]
                          for u, p in zip(self.generators, pair)]).T
        coeff.setflags(write=False)
        object.__setattr__(self, "_coeff", coeff)

    @property
    def n(self) -> int:
        return len(self.weight)


class AliasTable:
    """Vose alias method; one uniform per draw (index from the integer
    part, accept/alias test from the fractional part)."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0 or (w < 0).any() or w.sum() <= 0:
            raise ValueError("weights must be non-negative with positive sum")
        k = w.size
        scaled = w * (k / w.sum())
        self.prob = np.ones(k)
        self.alias = np.arange(k)
        small = [i for i, v in enumerate(scaled) if v < 1.0]
        large = [i for i, v in enumerate(scaled) if v >= 1.0]
        scaled = scaled.copy()
        while small and large:
            s, g = small.pop(), large.pop()
            self.prob[s] = scaled[s]
            self.alias[s] = g
            scaled[g] = (scaled[g] + scaled[s]) - 1.0
            (small if scaled[g] < 1.0 else large).append(g)
        for i in small + large:
            self.prob[i] = 1.0

    def draw(self, rng: RandomStream) -> int:
        u = rng.uniform() * self.prob.size
        i = min(int(u), self.prob.size - 1)
        return int(i if (u - i) < self.prob[i] else self.alias[i])


@dataclass
class SectorTable:
    n: int
    sectors: list[SimplicialSector]
    total: float = field(init=False)
    _alias: AliasTable = field(init=False, repr=False)

    def __post_init__(self):
        if not self.sectors:
            raise FanError("empty sector table")
        if any(s.n != self.n for s in self.sectors):
            raise FanError("mixed dimensions in sector table")
        self.total = float(sum(s.sector_factor for s in self.sectors))
        if not (math.isfinite(self.total) and self.total > 0):
            raise FanError(f"total I_tr = {self.total} not finite positive")
        self._alias = AliasTable([s.sector_factor for s in self.sectors])

    @property
    def log_I_tr(self) -> float:
        return math.log(self.total)


def sample_in_sector(sector: SimplicialSector, rng: RandomStream,
                     cone_index: int | None = None) -> TropicalSample:
    """n-1 Exp(1) draws through the cone map, then shift so max log x = 0.

    Stream uniforms are in the open interval, so no boundary re-draws
    occur and the budget is exactly n-1 words.
    """
    n = sector.n
    s = -np.log([rng.uniform() for _ in range(n - 1)])
    log_x = sector._coeff @ s
    log_x -= log_x.max()
    return TropicalSample(log_x=log_x, cone_index=cone_index)


def sample_from_table(t: SectorTable, rng: RandomStream) -> TropicalSample:
    """Algorithm: draw a sector with probability factor/total (alias,
    one uniform), then sample inside it.  n words per sample."""
    c = t._alias.draw(rng)
    return sample_in_sector(t.sectors[c], rng, cone_index=c)


def estimate_per_sector(t: SectorTable, f, n_per_sector: int,
                        rng: RandomStream, *, n_orders: int = 1,
                        reject_threshold: float = mc.DEFAULT_REJECT_THRESHOLD,
                        seconds_preprocess: float = 0.0) -> mc.EstimateReport:
    """Stratified estimate sum_C I_tr_C * mean_C(f(sample)).

    Sector variances add (weighted by I_tr_C^2).  Non-finite f values
    count as rejections against a global budget.  With n_per_sector of
    1 the standard error is undefined and reported as NaN.
    """
    import time

    budget = max(1, int(reject_threshold * n_per_sector * len(t.sectors)))
    total_mean = np.zeros(n_orders)
    total_var = np.zeros(n_orders)
    rejected = 0
    breakdown = []
    t0 = time.perf_counter()
    for ci, sector in enumerate(t.sectors):
        st = mc.EstimatorState(n_orders=n_orders)
        for _ in range(n_per_sector):
            try:
                val = np.atleast_1d(
                    np.asarray(f(sample_in_sector(sector, rng, ci)),
                               dtype=np.float64))
            except mc.SampleRejected:
                st.rejected += 1
            else:
                if np.isfinite(val).all():
                    st.update(val)
                else:
                    st.rejected += 1
            if rejected + st.rejected > budget:
                raise mc.RejectionBudgetExceeded(
                    rejected + st.rejected, n_per_sector * len(t.sectors),
                    reject_threshold)
        rejected += st.rejected
        w = sector.sector_factor
        mean = st.mean if st.count else np.zeros(n_orders)
        vom = st.variance_of_mean()
        total_mean += w * mean
        total_var += w * w * vom
        breakdown.append({
            "sector": ci, "factor": w, "mean": mean.tolist(),
            "std_error": np.sqrt(vom).tolist(), "n": int(st.count)})
    seconds = time.perf_counter() - t0
    n_ok = n_per_sector * len(t.sectors) - rejected
    attempted = n_per_sector * len(t.sectors)
    return mc.EstimateReport(
        estimate=total_mean,
        std_error=np.sqrt(total_var),
        n_samples=n_ok,
        n_rejected=rejected,
        seconds_preprocess=seconds_preprocess,
        seconds_sampling=seconds,
        samples_per_second=attempted / seconds if seconds > 0 else math.inf,
        scale=t.total,
        seed=rng.seed,
        workers=1,
        sector_breakdown=breakdown,
    )


# ---------------------------------------------------------------------------
# the desk-scale exact fan builder


def _as_fraction_points(points, what):
    pts = [tuple(Fraction(c) for c in p) for p in points]
    if not pts:
        raise FanError(f"{what} must contain at least one point")
    n = len(pts[0])
    if any(len(p) != n for p in pts):
        raise FanError(f"{what} has mixed dimensions")
    deg = sum(pts[0])
    for p in pts:
        if sum(p) != deg:
            raise FanError(
                f"{what} not on one hyperplane <1,v> = const: "
                f"{tuple(map(str, p))} has degree {sum(p)} != {deg}")
    # drop duplicates, keep first occurrence
    seen, out = set(), []
    for p in pts:
        if p not in seen:
            seen.add(p)
            out.append(p)
    return out, n, deg


def _cone_rays(ineqs, dim):
    """Extreme rays of {y : g.y >= 0 for g in ineqs}, brute force over
    (dim-1)-subsets.  Assumes the cone is pointed; returns [] when it
    is not full-dimensional."""
    rays = set()
    for sub in combinations(ineqs, dim - 1):
        v = _nullspace_1d(sub, dim)
        if v is None:
            continue
        for cand in (v, [-c for c in v]):
            if all(sum(g * c for g, c in zip(row, cand)) >= 0
                   for row in ineqs):
                rays.add(_primitive(cand))
    rays = [r for r in rays if any(r)]
    if len(rays) < dim or _rank(rays) < dim:
        return []
    return sorted(rays)


def _triangulate(rays, ineqs, rank):
    """Fan a face of intrinsic dimension `rank` from its lex-smallest
    ray: each facet not containing that ray joins with it.  A facet of
    a face is always cut out by one of the original inequalities, so
    the global list is reused down the recursion (inequalities
    vanishing on the whole face skip themselves via the apex test).
    Returns tuples of `rank` rays each."""
    if len(rays) == rank:
        return [tuple(rays)]
    apex = rays[0]
    out = []
    seen = set()
    for g in ineqs:
        if sum(a * b for a, b in zip(g, apex)) == 0:
            continue
        on = tuple(r for r in rays
                   if sum(a * b for a, b in zip(g, r)) == 0)
        if len(on) < rank - 1 or on in seen or _rank(on) != rank - 1:
            continue
        seen.add(on)
        for piece in _triangulate(list(on), ineqs, rank - 1):
            out.append((apex,) + piece)
    return out


def build_refined_fan(A_points, B_points) -> SectorTable:
    """Common refinement of the two support fans, triangulated.

    Exact throughout.  Checks that B spans its degree hyperplane (else
    "R1 violated") and that every refined cone pairs strictly
    positively with its weight w = w_B - w_A (else "R2 violated:
    divergent direction" with a witness ray) — the latter is the
    convergence condition, equivalent to A sitting in the relative
    interior of B's polytope.
    """
    A, n, deg_a = _as_fraction_points(A_points, "A")
    B, n_b, deg_b = _as_fraction_points(B_points, "B")
    if n != n_b:
        raise FanError(f"A has dimension {n}, B has {n_b}")
    if deg_a != deg_b:
        raise FanError(
            f"A and B must share one degree hyperplane (got <1,a> = {deg_a},"
            f" <1,b> = {deg_b}); rescale the powers first")
    if not 2 <= n <= MAX_BUILD_DIM:
        raise FanError(f"fan builder is desk-scale: 2 <= n <= {MAX_BUILD_DIM}")
    dim = n - 1
    if _rank([[bi - b0i for bi, b0i in zip(b, B[0])] for b in B[1:]]) < dim:
        raise FanError("R1 violated: B is not full-dimensional "
                       "in its degree hyperplane")

    sectors = []
    for a in A:
        for b in B:
            # chart y_n = 0; degree-0 differences lose nothing there
            ineqs = []
            for other in A:
                if other != a:
                    ineqs.append([ai - oi for ai, oi in zip(a, other)][:dim])
            for other in B:
                if other != b:
                    ineqs.append([bi - oi for bi, oi in zip(b, other)][:dim])
            if dim == 1:
                # a single chart coordinate: the cone is a half line
                # (or all of R^1 when there are no constraints)
                rays = []
                for cand in ((Fraction(1),), (Fraction(-1),)):
                    if all(g[0] * cand[0] >= 0 for g in ineqs):
                        rays.append(_primitive(cand))
                rays = sorted(set(rays))
                if len(rays) != 1:
                    rays = []
            else:
                rays = _cone_rays(ineqs, dim)
            if not rays:
                continue
            w = tuple(bi - ai for bi, ai in zip(b, a))
            for r in rays:
                pairing = sum(rk * wk for rk, wk in zip(r, w[:dim]))
                if pairing <= 0:
                    witness = tuple(r) + (0,) * (n - dim)
                    raise DivergentDirection(
                        "R2 violated: divergent direction "
                        f"y = {witness} has <y, w> = {pairing} <= 0")
            for piece in _triangulate(rays, ineqs, dim):
                gens = tuple(tuple(Fraction(c) for c in r) + (Fraction(0),)
                             for r in piece)
                sectors.append(SimplicialSector(generators=gens, weight=w))
    if not sectors:
        raise FanError("refinement produced no full-dimensional cones")
    return SectorTable(n=n, sectors=sectors)


# ---------------------------------------------------------------------------
# text format


def _fmt_frac(f: Fraction) -> str:
    return str(f)


def save_sector_table(t: SectorTable, path) -> None:
    lines = ["TROPSEC 1", f"n {t.n}"]
    for s in t.sectors:
        lines.append("w " + " ".join(_fmt_frac(c) for c in s.weight))
        for u in s.generators:
            lines.append("u " + " ".join(_fmt_frac(c) for c in u))
        lines.append(f"factor {s.sector_factor!r}")
        lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_sector_table(path) -> SectorTable:
    """Parse and fully re-validate; a stored factor line is checked
    against the recomputed one (1e-9 relative) rather than trusted."""
    with open(path) as fh:
        raw = [ln.strip() for ln in fh]
    lines = [ln for ln in raw if not ln.startswith("#")]
    if not lines or lines[0].split() != ["TROPSEC", "1"]:
        raise FanError("not a sector table (expected 'TROPSEC 1' header)")
    if len(lines) < 2 or lines[1].split()[:1] != ["n"]:
        raise FanError("missing 'n <dim>' line")
    try:
        n = int(lines[1].split()[1])
    except (IndexError, ValueError):
        raise FanError("missing 'n <dim>' line") from None
    if n < 2:
        raise FanError(f"bad dimension n = {n}")

    def parse_vec(tokens, what, idx):
        if len(tokens) != n:
            raise FanError(f"sector {idx}: {what} needs {n} entries, "
                           f"got {len(tokens)}")
        try:
            return tuple(Fraction(tok) for tok in tokens)
        except ValueError:
            raise FanError(f"sector {idx}: bad rational in {what}") from None

    sectors = []
    i = 2
    while i < len(lines):
        if not lines[i]:
            i += 1
            continue
        idx = len(sectors)
        parts = lines[i].split()
        if parts[0] != "w":
            raise FanError(f"sector {idx}: expected 'w ...', got {lines[i]!r}")
        w = parse_vec(parts[1:], "w", idx)
        i += 1
        gens = []
        for _ in range(n - 1):
            if i >= len(lines) or not lines[i].startswith("u "):
                raise FanError(f"sector {idx}: expected {n - 1} 'u' lines")
            gens.append(parse_vec(lines[i].split()[1:], "u", idx))
            i += 1
        stored = None
        if i < len(lines) and lines[i].startswith("factor "):
            try:
                stored = float(lines[i].split()[1])
            except (IndexError, ValueError):
                raise FanError(f"sector {idx}: bad factor line") from None
            i += 1
        try:
            sector = SimplicialSector(generators=tuple(gens), weight=w)
        except FanError as exc:
            raise FanError(f"sector {idx}: {exc}") from None
        if stored is not None and not math.isclose(
                stored, sector.sector_factor, rel_tol=1e-9):
            raise FanError(
                f"sector {idx}: stored factor {stored} != recomputed "
                f"{sector.sector_factor}")
        sectors.append(sector)
    return SectorTable(n=n, sectors=sectors)
