# cython: language_level=3, boundscheck=False, wraparound=False
# cython: cdivision=True, initializedcheck=False
"""Compiled batch kernel: one C loop per worker stream.

Mirrors kernels/fallback.py draw for draw -- same counter-addressed
random words, same selection scan, same rejection rules.  Within this
backend results are bit-identical for a given (seed, stream, start,
count); against the numpy twin they agree to libm-vs-SIMD rounding.
"""

import numpy as np

from libc.math cimport INFINITY, NAN, exp, isfinite, log, sqrt
from libc.stdint cimport int32_t, uint64_t

from ..rng import stream_key as _py_stream_key

NAME = "compiled"

cdef uint64_t _GOLDEN = <uint64_t>0x9E3779B97F4A7C15
cdef double _INV_2_52 = 1.0 / 4503599627370496.0


cdef inline uint64_t _mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * (<uint64_t>0xBF58476D1CE4E5B9)
    z = (z ^ (z >> 27)) * (<uint64_t>0x94D049BB133111EB)
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t key, uint64_t counter) nogil:
    # centered 52-bit grid: exactly representable, never 0.0 or 1.0
    cdef uint64_t w = _mix64(key + (counter + 1) * _GOLDEN)
    return (<double>(w >> 12) + 0.5) * _INV_2_52


cdef inline int _ctz(uint64_t x) nogil:
    cdef int i = 0
    while not (x & 1):
        x >>= 1
        i += 1
    return i


cdef bint _one_sample(uint64_t key, uint64_t base,
                      int n, int d, int dk,
                      const double[::1] r, const double[::1] logJ,
                      const double[::1] z_psi, const double[::1] z_phi,
                      const int32_t[::1] eu, const int32_t[::1] ev,
                      const double[::1] m2v, const double[:, ::1] P,
                      double D, double omega, int loops_full,
                      bint use_m, bint use_p, bint need_phi, int order,
                      double[::1] log_x, double[:, ::1] Lm,
                      double[:, ::1] Cm, double[:, ::1] Zm,
                      double[::1] vals) nogil:
    """Fill log_x and vals for one sample; False = rejected.

    log_x is always fully written (the chain never aborts), so callers
    may inspect coordinates of rejected samples too.
    """
    cdef uint64_t mask = (<uint64_t>1 << n) - 1
    cdef uint64_t m, bit, ch, before, ctr = base
    cdef double log_kappa = 0.0, lpsit = 0.0, lphit = 0.0
    cdef double u, total, target, acc, logj_a
    cdef int size, e, i, j, k, c
    cdef double s, piv, t, logdet, log_psi, tm, log_phi, log_r, leps

    for size in range(n, 1, -1):
        u = _uniform(key, ctr)
        ctr += 1
        logj_a = logJ[mask]
        total = 0.0
        m = mask
        while m:
            bit = m & (~m + 1)
            ch = mask ^ bit
            total += exp(logJ[ch] - logj_a) / r[ch]
            m ^= bit
        target = u * total
        acc = 0.0
        e = 0
        m = mask
        while m:
            bit = m & (~m + 1)
            ch = mask ^ bit
            acc += exp(logJ[ch] - logj_a) / r[ch]
            e = _ctz(bit)
            if target < acc:
                break
            m ^= bit
        log_x[e] = log_kappa
        before = mask
        mask ^= (<uint64_t>1 << e)
        lpsit += log_kappa * (z_psi[before] - z_psi[mask])
        lphit += log_kappa * (z_phi[before] - z_phi[mask])
        u = _uniform(key, ctr)
        ctr += 1
        log_kappa += log(u) / r[mask]
    e = _ctz(mask)
    log_x[e] = log_kappa
    lpsit += log_kappa * z_psi[mask]
    lphit += log_kappa * z_phi[mask]

    # log_kappa only ever decreases, so it is the smallest coordinate
    if log_kappa < -709.0:
        return False

    for i in range(d):
        for j in range(d):
            Lm[i, j] = 0.0
    for e in range(n):
        s = exp(-log_x[e])
        i = eu[e]
        j = ev[e]
        if i < d:
            Lm[i, i] += s
        if j < d:
            Lm[j, j] += s
        if i < d and j < d:
            Lm[i, j] -= s
            Lm[j, i] -= s

    logdet = 0.0
    for j in range(d):
        s = Lm[j, j]
        for k in range(j):
            s -= Cm[j, k] * Cm[j, k]
        if not (s > 0.0) or not isfinite(s):
            return False
        piv = sqrt(s)
        Cm[j, j] = piv
        logdet += log(piv)
        for i in range(j + 1, d):
            t = Lm[i, j]
            for k in range(j):
                t -= Cm[i, k] * Cm[j, k]
            Cm[i, j] = t / piv

    log_psi = 2.0 * logdet
    for e in range(n):
        log_psi += log_x[e]
    if not isfinite(log_psi):
        return False

    tm = 0.0
    if use_p:
        for i in range(d):
            for c in range(dk):
                t = P[i, c]
                for k in range(i):
                    t -= Cm[i, k] * Zm[k, c]
                Zm[i, c] = t / Cm[i, i]
        for i in range(d):
            for c in range(dk):
                tm += Zm[i, c] * Zm[i, c]
    if use_m:
        for e in range(n):
            tm += exp(log_x[e]) * m2v[e]
    if tm > 0.0:
        log_phi = log_psi + log(tm)
    else:
        log_phi = -INFINITY
    if need_phi and not isfinite(log_phi):
        return False

    log_r = 0.5 * D * (lpsit - log_psi)
    if omega != 0.0:
        log_r += omega * (log_psi - lpsit + lphit - log_phi)
    vals[0] = exp(log_r)
    if order >= 1:
        leps = log_psi + loops_full * (log_psi - log_phi)
        for k in range(1, order + 1):
            vals[k] = vals[k - 1] * (leps / k)
    for k in range(order + 1):
        if not isfinite(vals[k]):
            return False
    return True


cdef class _Run:
    """Unpacked plan plus per-call scratch; one instance per kernel call."""

    cdef const double[::1] r, logJ, z_psi, z_phi, m2v
    cdef double[::1] log_x, vals
    cdef const int32_t[::1] eu, ev
    cdef const double[:, ::1] P
    cdef double[:, ::1] Lm, Cm, Zm
    cdef int n, d, dk, order, loops_full
    cdef double D, omega
    cdef bint use_m, use_p, need_phi
    cdef uint64_t key, dps

    def __init__(self, plan, seed, stream):
        self.n = plan.n
        self.d = plan.num_vertices - 1
        self.dk = plan.kinematic_dim
        self.order = plan.order
        self.loops_full = plan.loops_full
        self.D = plan.D
        self.omega = plan.omega
        self.use_m = plan.use_masses
        self.use_p = plan.use_momenta
        self.need_phi = plan.need_phi
        self.r = np.ascontiguousarray(plan.r, dtype=np.float64)
        self.logJ = np.ascontiguousarray(plan.logJ, dtype=np.float64)
        self.z_psi = np.ascontiguousarray(plan.z_psi, dtype=np.float64)
        self.z_phi = np.ascontiguousarray(plan.z_phi, dtype=np.float64)
        self.m2v = np.ascontiguousarray(plan.m2, dtype=np.float64)
        self.eu = np.ascontiguousarray(plan.edge_u, dtype=np.int32)
        self.ev = np.ascontiguousarray(plan.edge_v, dtype=np.int32)
        self.P = np.ascontiguousarray(plan.P, dtype=np.float64)
        self.log_x = np.empty(self.n)
        self.vals = np.empty(self.order + 1)
        self.Lm = np.empty((max(self.d, 1), max(self.d, 1)))
        self.Cm = np.empty((max(self.d, 1), max(self.d, 1)))
        self.Zm = np.empty((max(self.d, 1), max(self.dk, 1)))
        self.key = _py_stream_key(seed, stream)
        self.dps = 2 * (self.n - 1) if self.n > 1 else 0

    cdef bint one(self, uint64_t index) nogil:
        return _one_sample(
            self.key, index * self.dps, self.n, self.d, self.dk,
            self.r, self.logJ, self.z_psi, self.z_phi, self.eu, self.ev,
            self.m2v, self.P, self.D, self.omega, self.loops_full,
            self.use_m, self.use_p, self.need_phi, self.order,
            self.log_x, self.Lm, self.Cm, self.Zm, self.vals)


def accumulate(plan, seed, stream, start, count):
    """Streamed (n_ok, mean, M2, sum4, n_rejected) over a counter range.

    Sequential Welford per accepted sample: bit-identical for identical
    arguments on the same build.
    """
    cdef _Run run = _Run(plan, seed, stream)
    cdef Py_ssize_t i, k, k1 = plan.order + 1
    cdef uint64_t s0 = start
    cdef long long n_ok = 0, rejected = 0, total = count
    mean_a = np.zeros(k1)
    m2_a = np.zeros(k1)
    sum4_a = np.zeros(k1)
    cdef double[::1] mean = mean_a
    cdef double[::1] m2 = m2_a
    cdef double[::1] sum4 = sum4_a
    cdef double delta, v
    with nogil:
        for i in range(total):
            if run.one(s0 + i):
                n_ok += 1
                for k in range(k1):
                    v = run.vals[k]
                    delta = v - mean[k]
                    mean[k] += delta / n_ok
                    m2[k] += delta * (v - mean[k])
                    sum4[k] += v * v * v * v
            else:
                rejected += 1
    return int(n_ok), mean_a, m2_a, sum4_a, int(rejected)


def collect(plan, seed, stream, start, count):
    """Per-sample values (NaN rows = rejected) and log coordinates."""
    cdef _Run run = _Run(plan, seed, stream)
    cdef Py_ssize_t i, k, e, k1 = plan.order + 1, n = plan.n
    cdef uint64_t s0 = start
    vals_a = np.empty((count, k1))
    logx_a = np.empty((count, n))
    cdef double[:, ::1] vals = vals_a
    cdef double[:, ::1] logx = logx_a
    cdef long long total = count
    with nogil:
        for i in range(total):
            if run.one(s0 + i):
                for k in range(k1):
                    vals[i, k] = run.vals[k]
            else:
                for k in range(k1):
                    vals[i, k] = NAN
            for e in range(n):
                logx[i, e] = run.log_x[e]
    return vals_a, logx_a
