"""Pure-numpy batch kernel; the portable twin of the compiled core.

Vectorizes the per-sample chain over fixed chunks.  Every random word
is addressed by (stream key, counter), so a sample's value depends only
on its global index, never on chunk boundaries or on which backend ran
it: the compiled core must agree with this module draw for draw, and
the two differ only in libm-vs-SIMD rounding of exp/log (~1e-15
relative per value).

The selection scan is the cumulative-sum form of the scalar reference
scan in sample_gp: the chosen bit is the first member column whose
running total strictly exceeds u * total, with the highest member bit
as the float-dust guard.
"""

from __future__ import annotations

import numpy as np

from ..rng import GOLDEN, STREAM_SALT, mix64
from .plan import LOG_X_REJECT, GraphPlan

NAME = "fallback"
CHUNK = 1 << 16

_U64_GOLDEN = np.uint64(GOLDEN)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _stream_key(seed: int, stream: int) -> np.uint64:
    return np.uint64(mix64(mix64(seed & (2**64 - 1))
                           ^ ((stream * STREAM_SALT) & (2**64 - 1))))


def _uniforms(key: np.uint64, counters: np.ndarray) -> np.ndarray:
    """Vectorized splitmix64 word -> double in the open unit interval."""
    with np.errstate(over="ignore"):
        z = key + (counters + np.uint64(1)) * _U64_GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        z = z ^ (z >> np.uint64(31))
    # centered 52-bit grid: exactly representable, never 0.0 or 1.0
    return ((z >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0**-52


def _batched_cholesky(A: np.ndarray):
    """Row-independent Cholesky over a (m, d, d) stack.

    Returns (C, fail); failed rows get a dummy unit pivot so they do
    not poison the vectorized arithmetic of their neighbors."""
    m, d, _ = A.shape
    C = np.zeros_like(A)
    fail = np.zeros(m, dtype=bool)
    for j in range(d):
        s = A[:, j, j] - (C[:, j, :j] ** 2).sum(axis=1)
        bad = ~np.isfinite(s) | (s <= 0.0)
        fail |= bad
        piv = np.sqrt(np.where(bad, 1.0, s))
        C[:, j, j] = piv
        if j + 1 < d:
            rest = A[:, j + 1:, j] - np.einsum(
                "mik,mk->mi", C[:, j + 1:, :j], C[:, j, :j])
            C[:, j + 1:, j] = rest / piv[:, None]
    return C, fail


def _chunk(plan: GraphPlan, key: np.uint64, idx: np.ndarray):
    """Values and log coordinates for the sample indices in idx.

    Returns (values (m, K+1) with NaN rows where rejected, log_x (m, n)).
    """
    n = plan.n
    m = idx.size
    k1 = plan.n_orders
    rows = np.arange(m)
    log_x = np.zeros((m, n))
    lpsit = np.zeros(m)
    lphit = np.zeros(m)
    if n > 1:
        base = idx.astype(np.uint64) * np.uint64(plan.draws_per_sample)
        mask = np.full(m, (1 << n) - 1, dtype=np.int64)
        log_kappa = np.zeros(m)
        logJ, r = plan.logJ, plan.r
        z_psi, z_phi = plan.z_psi, plan.z_phi
        for step in range(n - 1):
            u_choice = _uniforms(key, base + np.uint64(2 * step))
            logj_a = logJ[mask]
            cum = np.empty((m, n))
            acc = np.zeros(m)
            hb = np.zeros(m, dtype=np.int64)
            for e in range(n):
                member = ((mask >> e) & 1).astype(bool)
                child = mask ^ (1 << e)
                # non-member columns may hit r = 0 (the full set); their
                # quotients are discarded by the mask, so silence them
                with np.errstate(divide="ignore", invalid="ignore"):
                    pe = np.where(
                        member, np.exp(logJ[child] - logj_a) / r[child], 0.0)
                acc = acc + pe
                cum[:, e] = acc
                hb = np.where(member, e, hb)
            target = u_choice * acc
            eidx = (cum <= target[:, None]).sum(axis=1)
            eidx = np.where(eidx >= n, hb, eidx)
            log_x[rows, eidx] = log_kappa
            before = mask
            mask = mask ^ np.left_shift(np.int64(1), eidx)
            lpsit += log_kappa * (z_psi[before] - z_psi[mask])
            lphit += log_kappa * (z_phi[before] - z_phi[mask])
            u_xi = _uniforms(key, base + np.uint64(2 * step + 1))
            log_kappa = log_kappa + np.log(u_xi) / r[mask]
        # size-1 set: forced pick, no draws
        eidx = np.log2(mask).astype(np.int64)
        log_x[rows, eidx] = log_kappa
        lpsit += log_kappa * z_psi[mask]
        lphit += log_kappa * z_phi[mask]

    reject = log_x.min(axis=1) < LOG_X_REJECT
    d = plan.num_vertices - 1
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        w = np.exp(-log_x)
        L = np.zeros((m, d, d))
        for e in range(n):
            u, v = int(plan.edge_u[e]), int(plan.edge_v[e])
            we = w[:, e]
            if u < d:
                L[:, u, u] += we
            if v < d:
                L[:, v, v] += we
            if u < d and v < d:
                L[:, u, v] -= we
                L[:, v, u] -= we
        C, fail = _batched_cholesky(L)
        reject |= fail
        diag = np.diagonal(C, axis1=1, axis2=2)
        log_psi = log_x.sum(axis=1) + 2.0 * np.log(diag).sum(axis=1)
        reject |= ~np.isfinite(log_psi)
        tm = np.zeros(m)
        if plan.use_momenta:
            dk = plan.kinematic_dim
            Z = np.empty((m, d, dk))
            for i in range(d):
                rhs = plan.P[i][None, :] - np.einsum(
                    "mk,mkj->mj", C[:, i, :i], Z[:, :i, :])
                Z[:, i, :] = rhs / C[:, i, i][:, None]
            tm += (Z * Z).sum(axis=(1, 2))
        if plan.use_masses:
            tm += (np.exp(log_x) * plan.m2[None, :]).sum(axis=1)
        log_phi = np.where(tm > 0.0, log_psi + np.log(tm), -np.inf)
        if plan.need_phi:
            reject |= ~np.isfinite(log_phi)
        log_r = 0.5 * plan.D * (lpsit - log_psi)
        if plan.omega != 0.0:
            log_r = log_r + plan.omega * (log_psi - lpsit + lphit - log_phi)
        values = np.empty((m, k1))
        values[:, 0] = np.exp(log_r)
        if plan.order >= 1:
            leps = log_psi + plan.loops_full * (log_psi - log_phi)
            for k in range(1, k1):
                values[:, k] = values[:, k - 1] * (leps / k)
        reject |= ~np.isfinite(values).all(axis=1)
    values[reject] = np.nan
    return values, log_x


def collect(plan: GraphPlan, seed: int, stream: int, start: int, count: int):
    """Per-sample values and log coordinates (NaN value rows = rejected).
    Test/debug path; memory scales with count."""
    key = _stream_key(seed, stream)
    vals = np.empty((count, plan.n_orders))
    logx = np.empty((count, plan.n))
    done = 0
    while done < count:
        take = min(CHUNK, count - done)
        idx = np.arange(start + done, start + done + take, dtype=np.int64)
        v, lx = _chunk(plan, key, idx)
        vals[done:done + take] = v
        logx[done:done + take] = lx
        done += take
    return vals, logx


def accumulate(plan: GraphPlan, seed: int, stream: int, start: int, count: int):
    """Streamed statistics over [start, start+count) of the stream.

    Returns (n_ok, mean, M2, sum4, n_rejected); chunks fold in with the
    pairwise merge rule, so the result is deterministic for a given
    split and agrees with sequential accumulation to reassociation
    error.
    """
    key = _stream_key(seed, stream)
    k1 = plan.n_orders
    n_ok = 0
    mean = np.zeros(k1)
    m2 = np.zeros(k1)
    sum4 = np.zeros(k1)
    rejected = 0
    done = 0
    while done < count:
        take = min(CHUNK, count - done)
        idx = np.arange(start + done, start + done + take, dtype=np.int64)
        values, _ = _chunk(plan, key, idx)
        good = values[~np.isnan(values[:, 0])]
        rejected += take - good.shape[0]
        b = good.shape[0]
        if b:
            bmean = good.mean(axis=0)
            bm2 = ((good - bmean) ** 2).sum(axis=0)
            tot = n_ok + b
            delta = bmean - mean
            mean = mean + delta * (b / tot)
            m2 = m2 + bm2 + delta**2 * (n_ok * b / tot)
            sum4 += (good**4).sum(axis=0)
            n_ok = tot
        done += take
    return n_ok, mean, m2, sum4, rejected
