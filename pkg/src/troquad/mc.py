"""Monte Carlo estimator with mergeable streaming statistics.

The estimate of an integral I = I_tr * E[f] under the tropical measure
is scale * mean(f) with scale = I_tr.  Means and second moments are
accumulated with Welford / pairwise updates rather than naive sums of
squares, so billion-sample runs do not lose variance precision, and
two partial states merge into exactly the state of the concatenated
stream (up to float reassociation).

Values are vectors (length 1 for a plain integrand, K+1 for an
expansion in the dimension parameter), so one pass accumulates all
orders.  Rejected samples reduce the effective N instead of
contributing zeros; the report exposes the rejection count so the
caller can judge bias risk.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .rng import RandomStream


class SampleRejected(Exception):
    """Raised by integrands/evaluators for samples that must be discarded
    (overflow guard, Cholesky failure, vanishing denominator)."""


class RejectionBudgetExceeded(RuntimeError):
    def __init__(self, rejected, total, threshold):
        self.rejected, self.total, self.threshold = rejected, total, threshold
        super().__init__(
            f"rejected {rejected} of {total} samples "
            f"(rate {rejected / max(total, 1):.3g} > threshold {threshold:.3g}); "
            "numerical-stability diagnosis: integrand evaluation failed or "
            "log-coordinates exceeded the double-precision range far more "
            "often than the configured budget allows")


DEFAULT_REJECT_THRESHOLD = 1e-6


class EstimatorState:
    """count/mean/M2 per component, plus rejection count and the I_tr scale.

    sum4 is a raw fourth-power sum kept as a heavy-tail diagnostic for
    log-weighted integrands; it is reported, never guaranteed.
    """

    __slots__ = ("count", "mean", "M2", "sum4", "rejected", "scale")

    def __init__(self, n_orders: int = 1, scale: float = 1.0):
        self.count = 0
        self.mean = np.zeros(n_orders)
        self.M2 = np.zeros(n_orders)
        self.sum4 = np.zeros(n_orders)
        self.rejected = 0
        self.scale = float(scale)

    @property
    def n_orders(self) -> int:
        return self.mean.shape[0]

    def update(self, value) -> None:
        v = np.asarray(value, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1)
        self.count += 1
        delta = v - self.mean
        self.mean += delta / self.count
        self.M2 += delta * (v - self.mean)
        self.sum4 += v**4

    def update_batch(self, values: np.ndarray) -> None:
        """Fold a (m, n_orders) batch in as one pairwise merge."""
        m = values.shape[0]
        if m == 0:
            return
        bmean = values.mean(axis=0)
        bM2 = ((values - bmean) ** 2).sum(axis=0)
        other = EstimatorState(self.n_orders, self.scale)
        other.count = m
        other.mean = bmean
        other.M2 = bM2
        other.sum4 = (values**4).sum(axis=0)
        merged = merge(self, other)
        self.count, self.mean, self.M2, self.sum4 = (
            merged.count, merged.mean, merged.M2, merged.sum4)

    def variance_of_mean(self) -> np.ndarray:
        if self.count < 2:
            return np.full(self.n_orders, math.nan)
        return self.M2 / (self.count * (self.count - 1))


def merge(a: EstimatorState, b: EstimatorState) -> EstimatorState:
    """Exact pooled count/mean/M2 (pairwise update formula)."""
    if a.n_orders != b.n_orders:
        raise ValueError(
            f"cannot merge states with {a.n_orders} and {b.n_orders} components")
    if a.scale != b.scale:
        raise ValueError("cannot merge states with different scales")
    out = EstimatorState(a.n_orders, a.scale)
    n = a.count + b.count
    out.count = n
    out.rejected = a.rejected + b.rejected
    out.sum4 = a.sum4 + b.sum4
    if n == 0:
        return out
    delta = b.mean - a.mean
    out.mean = a.mean + delta * (b.count / n)
    out.M2 = a.M2 + b.M2 + delta**2 * (a.count * b.count / n)
    return out


@dataclass
class EstimateReport:
    estimate: np.ndarray
    std_error: np.ndarray
    n_samples: int
    n_rejected: int
    seconds_preprocess: float
    seconds_sampling: float
    samples_per_second: float
    scale: float = 1.0  # I_tr
    seed: int = 0
    workers: int = 1
    fourth_moment: np.ndarray | None = None
    # per-sector detail for stratified runs; human-readable output only,
    # never part of the JSON schema
    sector_breakdown: list | None = None

    def to_json_dict(self) -> dict:
        def clean(x):
            v = float(x)
            return v if math.isfinite(v) else None

        return {
            "I_tr": clean(self.scale),
            "estimate": [clean(v) for v in np.atleast_1d(self.estimate)],
            "std_error": [clean(v) for v in np.atleast_1d(self.std_error)],
            "n_samples": int(self.n_samples),
            "n_rejected": int(self.n_rejected),
            "sigma_over_I": clean(sigma_over_I(self)),
            "seconds_preprocess": float(self.seconds_preprocess),
            "seconds_sampling": float(self.seconds_sampling),
            "samples_per_second": float(self.samples_per_second),
            "seed": int(self.seed),
            "workers": int(self.workers),
            "fourth_moment": (
                None if self.fourth_moment is None
                else [clean(v) for v in np.atleast_1d(self.fourth_moment)]),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


def report_from_state(state: EstimatorState, *, seconds_preprocess: float,
                      seconds_sampling: float, seed: int, workers: int,
                      attempted: int) -> EstimateReport:
    est = state.scale * state.mean
    se = state.scale * np.sqrt(state.variance_of_mean())
    sps = attempted / seconds_sampling if seconds_sampling > 0 else math.inf
    m4 = state.sum4 / state.count if state.count else None
    return EstimateReport(
        estimate=est, std_error=se, n_samples=state.count,
        n_rejected=state.rejected, seconds_preprocess=seconds_preprocess,
        seconds_sampling=seconds_sampling, samples_per_second=sps,
        scale=state.scale, seed=seed, workers=workers, fourth_moment=m4)


def sigma_over_I(report: EstimateReport) -> float:
    """Per-sample relative deviation std_error*sqrt(N)/|estimate|.

    This is the quality constant of the method for a given integrand
    (independent of N to leading order).  Zero estimate: undefined,
    returned as nan.
    """
    est = float(np.atleast_1d(report.estimate)[0])
    se = float(np.atleast_1d(report.std_error)[0])
    if est == 0.0 or not math.isfinite(est):
        return math.nan
    return se * math.sqrt(report.n_samples) / abs(est)


def worker_counts(n_samples: int, workers: int) -> list[int]:
    base, extra = divmod(n_samples, workers)
    return [base + (1 if w < extra else 0) for w in range(workers)]


def estimate(sampler, integrand, n_samples: int, seed: int, workers: int = 1,
             *, scale: float = 1.0, n_orders: int = 1,
             reject_threshold: float = DEFAULT_REJECT_THRESHOLD,
             seconds_preprocess: float = 0.0) -> EstimateReport:
    """Generic per-sample driver: I^(N) = (I_tr / N) * sum f(x_l).

    sampler(rng) -> sample, integrand(sample) -> value (scalar or
    n_orders vector).  Deterministic given (seed, workers): worker w
    owns the stream keyed by (seed, w) and the states merge in worker
    order.  Non-finite integrand values and SampleRejected count as
    rejections; the run aborts once rejections exceed
    reject_threshold * n_samples (minimum 1).

    This path pays a Python call per sample; the graph pipeline uses
    the fused batch kernels instead and only shares the state/merge
    machinery.
    """
    if n_samples < 2:
        raise ValueError("need n_samples >= 2")
    if workers < 1:
        raise ValueError("need workers >= 1")
    budget = max(1, int(reject_threshold * n_samples))
    t0 = time.perf_counter()
    states = []
    rejected_so_far = 0
    for w, count in enumerate(worker_counts(n_samples, workers)):
        rng = RandomStream(seed, stream=w)
        st = EstimatorState(n_orders, scale)
        for _ in range(count):
            try:
                value = integrand(sampler(rng))
            except SampleRejected:
                st.rejected += 1
                if rejected_so_far + st.rejected > budget:
                    raise RejectionBudgetExceeded(
                        rejected_so_far + st.rejected, n_samples,
                        reject_threshold) from None
                continue
            varr = np.atleast_1d(np.asarray(value, dtype=np.float64))
            if not np.isfinite(varr).all():
                st.rejected += 1
                if rejected_so_far + st.rejected > budget:
                    raise RejectionBudgetExceeded(
                        rejected_so_far + st.rejected, n_samples,
                        reject_threshold)
                continue
            st.update(varr)
        rejected_so_far += st.rejected
        states.append(st)
    total = states[0]
    for st in states[1:]:
        total = merge(total, st)
    if total.rejected > budget:
        raise RejectionBudgetExceeded(total.rejected, n_samples, reject_threshold)
    dt = time.perf_counter() - t0
    return report_from_state(
        total, seconds_preprocess=seconds_preprocess, seconds_sampling=dt,
        seed=seed, workers=workers, attempted=n_samples)
