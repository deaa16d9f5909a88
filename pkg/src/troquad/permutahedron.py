"""Generalized-permutahedron machinery over subset tables.

A boolean function z on subsets of [n] (supermodular, z(emptyset)=0)
presents a generalized permutahedron G_z; the braid fan's Weyl chamber
of a permutation sigma selects the vertex

    w_{sigma(k)} = z(A_k) - z(A_{k-1}),   A_k = {sigma(1),...,sigma(k)},

which maximizes <y, .> over G_z on that chamber.  For an integrand
whose numerator/denominator Newton polytopes are generalized
permutahedra with facet functions z_A, z_B, the normalization constant
I_tr decomposes over chambers with per-chamber weight
prod_k 1/r(A_k), r = z_A - z_B, and the recursion

    J(A) = sum_{e in A} J(A \\ e) / r(A \\ e),    J(emptyset) = 1,

computes I_tr = J([n]) in O(n 2^n) — a 2^n table instead of n!
chambers.  Sampling walks the recursion backwards, removing one
element at a time; that is the triangulation-free sampler.

Tables are flat arrays indexed by subset bitmask, filled in popcount
order; J is stored in log space (J grows factorially and near-critical
r inflates it).
"""

from __future__ import annotations

import math
import struct
import sys
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .rng import RandomStream
from .tropical import TropicalSample

TABLE_MAGIC = b"TROPFEYN"
TABLE_VERSION = 1
RECORD_BYTES = 24  # r f64, logJ f64, loops u32, flags u32
DEFAULT_MAX_TABLE_BYTES = 1 << 31
MAX_GROUND_SET = 32

_RECORD_DTYPE = np.dtype([("r", "<f8"), ("logJ", "<f8"),
                          ("loops", "<u4"), ("flags", "<u4")])


class DivergentInput(ValueError):
    """Some non-empty proper subset has r <= 0: the integral diverges."""

    def __init__(self, masks, r_values, n):
        self.masks = list(masks)
        self.r_values = list(r_values)
        self.n = n
        shown = ", ".join(
            f"{{{_mask_str(m, n)}}}: r={v:.6g}"
            for m, v in zip(self.masks[:16], self.r_values[:16]))
        more = "" if len(self.masks) <= 16 else f" (+{len(self.masks) - 16} more)"
        super().__init__(
            f"{len(self.masks)} divergent subset(s) with r <= 0: {shown}{more}")


def _mask_str(mask: int, n: int) -> str:
    return ",".join(str(e) for e in range(n) if (mask >> e) & 1)


@dataclass(frozen=True)
class BooleanTable:
    """A function 2^[n] -> R as a flat array indexed by subset bitmask."""

    n: int
    values: np.ndarray

    def __init__(self, n: int, values):
        if not 1 <= n <= MAX_GROUND_SET:
            raise ValueError(f"ground-set size must be in 1..{MAX_GROUND_SET}")
        vals = np.asarray(values)
        if vals.shape != (1 << n,):
            raise ValueError(f"need 2^{n} = {1 << n} values, got {vals.shape}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "values", vals)

    def __getitem__(self, mask: int):
        return self.values[mask]


@dataclass(frozen=True)
class Permutation:
    """sigma maps position k (1-based in the math, 0-based here) to a
    ground element; A_k = {sigma[0], ..., sigma[k-1]} is the chain."""

    sigma: tuple[int, ...]

    def __init__(self, sigma: Sequence[int]):
        s = tuple(int(v) for v in sigma)
        if sorted(s) != list(range(len(s))):
            raise ValueError(f"not a permutation of 0..{len(s) - 1}: {s}")
        object.__setattr__(self, "sigma", s)

    def __len__(self):
        return len(self.sigma)

    def chain_masks(self):
        """Masks of A_1 .. A_n."""
        mask = 0
        out = []
        for e in self.sigma:
            mask |= 1 << e
            out.append(mask)
        return out


@dataclass
class SupermodularReport:
    passed: bool
    mode: str  # "exhaustive" or "sampled"
    mask_a: int | None = None
    mask_b: int | None = None
    values: tuple | None = None  # (z(A), z(B), z(A&B), z(A|B))

    def __str__(self):
        if self.passed:
            return f"supermodular ({self.mode} check)"
        za, zb, zi, zu = self.values
        return (f"not supermodular: z(A)+z(B) > z(A&B)+z(A|B) at "
                f"A={{{self.mask_a:b}}} B={{{self.mask_b:b}}}: "
                f"{za} + {zb} > {zi} + {zu}")


def check_supermodular(z: BooleanTable, n_samples: int = 200_000,
                       seed: int = 0) -> SupermodularReport:
    """z(A) + z(B) <= z(A intersect B) + z(A union B) for all pairs.

    Exhaustive for n <= 20 via the equivalent local criterion
    z(A+i) + z(A+j) <= z(A) + z(A+i+j) over all A and i < j not in A
    (first violation reported as the pair A+i, A+j); random pairs
    otherwise.
    """
    n, vals = z.n, z.values
    v_empty = vals[0]
    if v_empty != 0:
        return SupermodularReport(
            False, "exhaustive", 0, 0, (v_empty, v_empty, v_empty, v_empty))
    if n <= 20:
        masks = np.arange(1 << n, dtype=np.int64)
        for i in range(n):
            for j in range(i + 1, n):
                bi, bj = 1 << i, 1 << j
                base = masks[(masks & (bi | bj)) == 0]
                bad = vals[base | bi] + vals[base | bj] \
                    > vals[base] + vals[base | bi | bj]
                if bad.any():
                    a = int(base[np.argmax(bad)])
                    ma, mb = a | bi, a | bj
                    return SupermodularReport(
                        False, "exhaustive", ma, mb,
                        (vals[ma], vals[mb], vals[a], vals[a | bi | bj]))
        return SupermodularReport(True, "exhaustive")
    rng = RandomStream(seed, stream=0)
    full = (1 << n) - 1
    for _ in range(n_samples):
        a = int(rng.uniform() * (1 << n)) & full
        b = int(rng.uniform() * (1 << n)) & full
        if vals[a] + vals[b] > vals[a & b] + vals[a | b]:
            return SupermodularReport(
                False, "sampled", a, b,
                (vals[a], vals[b], vals[a & b], vals[a | b]))
    return SupermodularReport(True, "sampled")


def vertex_from_permutation(z: BooleanTable, sigma: Permutation):
    """The chamber-optimal vertex w of G_z: w_{sigma(k)} = z(A_k) - z(A_{k-1}).

    Arithmetic follows the table's dtype (exact for Fraction-valued
    tables), so optimality comparisons can be made exactly.
    """
    if len(sigma) != z.n:
        raise ValueError("permutation length does not match table")
    w = [None] * z.n
    prev = z.values[0]
    mask = 0
    for e in sigma.sigma:
        mask |= 1 << e
        cur = z.values[mask]
        w[e] = cur - prev
        prev = cur
    if z.values.dtype == object:
        return w
    return np.asarray(w, dtype=np.float64)


@dataclass
class SubsetTable:
    """Preprocessing product: per-subset r, log J, and graph payload.

    loops/flags are filled by the graph pipeline (flags bit 0 is the
    mass-momentum-spanning marker) and are zero for generic inputs.
    Immutable by convention after build; sampling only reads it.
    """

    n: int
    r: np.ndarray      # float64, 2^n
    logJ: np.ndarray   # float64, 2^n
    loops: np.ndarray  # uint32, 2^n
    mm: np.ndarray     # uint8, 2^n

    @property
    def log_I_tr(self) -> float:
        return float(self.logJ[-1])

    @property
    def I_tr(self) -> float:
        return math.exp(self.log_I_tr)

    @property
    def full_mask(self) -> int:
        return (1 << self.n) - 1

    def record_bytes(self) -> int:
        return (1 << self.n) * RECORD_BYTES


def table_memory_estimate(n: int) -> int:
    return (1 << n) * RECORD_BYTES


def build_subset_table(r: BooleanTable, *, loops=None, mm=None,
                       max_bytes: int = DEFAULT_MAX_TABLE_BYTES,
                       quiet: bool = False) -> SubsetTable:
    """Run the J recursion over the 2^n table in popcount order.

    Fails with DivergentInput listing every non-empty proper subset
    with r <= 0.  The memory estimate is printed (stderr) before
    allocation and enforced against max_bytes; 16 bytes per record are
    the r/logJ core, 8 the loops/flags payload.
    """
    n = r.n
    estimate = table_memory_estimate(n)
    if not quiet:
        print(f"subset table: n={n}, {1 << n} records, {estimate} bytes "
              f"(16 core + 8 payload per record)", file=sys.stderr)
    if estimate > max_bytes:
        raise MemoryError(
            f"table of {estimate} bytes exceeds the {max_bytes}-byte cap "
            f"(n={n}; raise --max-mem to allow)")
    rvals = np.asarray(r.values, dtype=np.float64).copy()
    if not np.isfinite(rvals).all():
        raise ValueError("r must be finite for every subset")
    if rvals[0] != 1.0:
        raise ValueError(f"r(emptyset) must be 1, got {rvals[0]}")
    size = 1 << n
    full = size - 1
    proper = np.arange(1, full, dtype=np.int64)
    bad = proper[rvals[1:full] <= 0.0] if n > 1 else proper[:0]
    if bad.size:
        raise DivergentInput(bad.tolist(), rvals[bad].tolist(), n)

    masks = np.arange(size, dtype=np.int64)
    pops = np.bitwise_count(masks).astype(np.int64)
    with np.errstate(divide="ignore"):
        logr = np.log(rvals)  # -inf at r=0 only possible for the full set,
        # which is never a child in the recursion below
    logJ = np.zeros(size)
    for k in range(1, n + 1):
        sel = masks[pops == k]
        best = np.full(sel.shape, -np.inf)
        for e in range(n):
            has = (sel >> e) & 1 == 1
            ch = sel[has] ^ (1 << e)
            np.maximum.at(best, np.flatnonzero(has), logJ[ch] - logr[ch])
        acc = np.zeros(sel.shape)
        for e in range(n):
            has = (sel >> e) & 1 == 1
            idx = np.flatnonzero(has)
            ch = sel[idx] ^ (1 << e)
            acc[idx] += np.exp(logJ[ch] - logr[ch] - best[idx])
        logJ[sel] = best + np.log(acc)

    loops_arr = (np.zeros(size, dtype=np.uint32) if loops is None
                 else np.asarray(loops, dtype=np.uint32).copy())
    mm_arr = (np.zeros(size, dtype=np.uint8) if mm is None
              else np.asarray(mm, dtype=np.uint8).copy())
    if loops_arr.shape != (size,) or mm_arr.shape != (size,):
        raise ValueError("payload arrays must have 2^n entries")
    out = SubsetTable(n=n, r=rvals, logJ=logJ, loops=loops_arr, mm=mm_arr)
    for a in (out.r, out.logJ, out.loops, out.mm):
        a.setflags(write=False)
    return out


def sample_gp(t: SubsetTable, rng: RandomStream) -> TropicalSample:
    """Draw one sample from the tropical measure, no triangulation.

    Starting from the full set, element e is removed with probability
    p_e = J(A\\e) / (J(A) r(A\\e)); the element removed from a set of
    size k becomes sigma(k), so the first removal gets x = 1 and each
    later one multiplies the running kappa by xi^{1/r(A)} <= 1.  The
    draw budget is fixed at 2(n-1) per sample (a forced final pick
    consumes none), which keeps counter-based streams aligned.

    Reference implementation; the batch kernels reproduce it draw for
    draw.
    """
    n = t.n
    mask = t.full_mask
    log_x = np.zeros(n)
    sigma = [0] * n
    log_kappa = 0.0
    logJ, r = t.logJ, t.r
    for size in range(n, 0, -1):
        if size == 1:
            e = mask.bit_length() - 1
        else:
            u = rng.uniform()
            # total is 1 up to float dust; rescale the target so the
            # scan always lands, with the top bit as a last-resort guard
            total = 0.0
            logj_a = logJ[mask]
            m = mask
            while m:
                bit = m & -m
                ch = mask ^ bit
                total += math.exp(logJ[ch] - logj_a) / r[ch]
                m ^= bit
            target = u * total
            acc = 0.0
            e = -1
            m = mask
            while m:
                bit = m & -m
                ch = mask ^ bit
                acc += math.exp(logJ[ch] - logj_a) / r[ch]
                e = bit.bit_length() - 1
                if target < acc:
                    break
                m ^= bit
        sigma[size - 1] = e
        log_x[e] = log_kappa
        mask ^= 1 << e
        if mask:
            log_kappa += math.log(rng.uniform()) / r[mask]
    return TropicalSample(log_x=log_x, permutation=tuple(sigma))


def trop_values_at_sample(t: SubsetTable, z: BooleanTable,
                          s: TropicalSample) -> float:
    """log p^tr(x) = <log x, w^(sigma,z)> along the sample's own chain.

    Telescopes to sum_k log x_{sigma(k)} (z(A_k) - z(A_{k-1})); equals
    trop_eval_log of the full polynomial when z is its Newton-polytope
    facet function, because the chain's chamber selects the maximizing
    vertex.
    """
    if s.permutation is None:
        raise ValueError("sample carries no permutation (not a GP sample)")
    if len(s.permutation) != t.n or z.n != t.n:
        raise ValueError("dimension mismatch")
    total = 0.0
    prev = 0.0
    mask = 0
    for e in s.permutation:
        mask |= 1 << e
        cur = float(z.values[mask])
        total += s.log_x[e] * (cur - prev)
        prev = cur
    return total


def save_subset_table(t: SubsetTable, path) -> None:
    rec = np.empty(1 << t.n, dtype=_RECORD_DTYPE)
    rec["r"] = t.r
    rec["logJ"] = t.logJ
    rec["loops"] = t.loops
    rec["flags"] = t.mm.astype(np.uint32)
    with open(path, "wb") as fh:
        fh.write(TABLE_MAGIC)
        fh.write(struct.pack("<II", TABLE_VERSION, t.n))
        fh.write(rec.tobytes())


def load_subset_table(path) -> SubsetTable:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != TABLE_MAGIC:
            raise ValueError(f"not a subset-table file (magic {magic!r})")
        head = fh.read(8)
        if len(head) != 8:
            raise ValueError("corrupt table: truncated header")
        version, n = struct.unpack("<II", head)
        if version != TABLE_VERSION:
            raise ValueError(f"unsupported table version {version}")
        if not 1 <= n <= MAX_GROUND_SET:
            raise ValueError(f"corrupt table: n={n}")
        raw = fh.read()
    expected = (1 << n) * RECORD_BYTES
    if len(raw) != expected:
        raise ValueError(
            f"corrupt table: expected {expected} record bytes, got {len(raw)}")
    rec = np.frombuffer(raw, dtype=_RECORD_DTYPE)
    if rec["r"][0] != 1.0:
        raise ValueError("corrupt table: r(emptyset) != 1")
    t = SubsetTable(n=n, r=rec["r"].copy(), logJ=rec["logJ"].copy(),
                    loops=rec["loops"].copy(),
                    mm=(rec["flags"] & 1).astype(np.uint8))
    for a in (t.r, t.logJ, t.loops, t.mm):
        a.setflags(write=False)
    return t


def brute_force_I_tr(r: BooleanTable) -> float:
    """sum over all permutations of prod_k 1/r(A_k), k < n.

    Factorial-time oracle for the J recursion; test use only.
    """
    import itertools

    n = r.n
    total = 0.0
    for sigma in itertools.permutations(range(n)):
        mask = 0
        term = 1.0
        for e in sigma[:-1]:
            mask |= 1 << e
            term /= float(r.values[mask])
        total += term
    return total
