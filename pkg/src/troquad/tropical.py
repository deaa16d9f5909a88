"""Sparse multivariate polynomials and their tropical approximation.

A polynomial p(x) = sum_l c_l x^l is stored as its support (integer
exponent rows) plus complex coefficients.  The tropical approximation
is p^tr(x) = max_l x^l; in log coordinates y = log x this is the
support function of the Newton polytope,

    log p^tr(e^y) = max_{l in supp(p)} <y, l>,

so no polytope is ever materialized: the max over the support equals
the max over its convex hull.  All evaluation happens in the log
domain with the tropical maximum factored out, because sampled points
span hundreds of orders of magnitude and direct evaluation overflows
doubles.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np


class TropicalError(ValueError):
    pass


def _as_exponent_matrix(exponents, n_vars: int) -> np.ndarray:
    m = np.asarray(exponents, dtype=np.int64)
    if m.ndim != 2 or m.shape[1] != n_vars:
        raise TropicalError(f"exponent rows must have length {n_vars}")
    if (m < 0).any():
        raise TropicalError("exponents must be non-negative")
    return m


@dataclass(frozen=True)
class SparsePolynomial:
    """Immutable sparse polynomial; safe to share across workers.

    terms are (exponent row, coefficient) with no duplicate rows and no
    zero coefficients.  `homogeneous` is derived, not declared.
    """

    n_vars: int
    exponents: np.ndarray  # (n_terms, n_vars) int64
    coefficients: np.ndarray  # (n_terms,) complex128

    def __init__(self, n_vars: int, terms: Sequence[tuple[Sequence[int], complex]]):
        if n_vars < 1:
            raise TropicalError("n_vars must be positive")
        if not terms:
            raise TropicalError("zero polynomial has no tropical approximation")
        exps = _as_exponent_matrix([t[0] for t in terms], n_vars)
        coeffs = np.asarray([complex(t[1]) for t in terms], dtype=np.complex128)
        if (coeffs == 0).any():
            raise TropicalError("every coefficient must be nonzero")
        seen = set()
        for row in exps:
            key = tuple(int(v) for v in row)
            if key in seen:
                raise TropicalError(f"duplicate exponent vector {key}")
            seen.add(key)
        object.__setattr__(self, "n_vars", int(n_vars))
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "coefficients", coeffs)
        self.exponents.setflags(write=False)
        self.coefficients.setflags(write=False)

    @property
    def n_terms(self) -> int:
        return self.exponents.shape[0]

    @property
    def degree(self) -> int:
        return int(self.exponents.sum(axis=1).max())

    @property
    def homogeneous(self) -> bool:
        sums = self.exponents.sum(axis=1)
        return bool((sums == sums[0]).all())

    def terms(self) -> list[tuple[tuple[int, ...], complex]]:
        return [
            (tuple(int(v) for v in row), complex(c))
            for row, c in zip(self.exponents, self.coefficients)
        ]

    def __repr__(self):
        return (f"SparsePolynomial(n_vars={self.n_vars}, "
                f"n_terms={self.n_terms})")


@dataclass(frozen=True)
class LogPoint:
    """A point of the positive orthant in log coordinates y = log x.

    The projective class in R^n / R*(1,...,1) is usually represented by
    the normalization max_k y_k = 0; nothing here enforces that, the
    samplers produce it.
    """

    y: np.ndarray

    def __init__(self, y):
        arr = np.asarray(y, dtype=np.float64)
        if arr.ndim != 1:
            raise TropicalError("log point must be a vector")
        if not np.isfinite(arr).all():
            raise TropicalError("log point entries must be finite")
        object.__setattr__(self, "y", arr)
        self.y.setflags(write=False)

    def __len__(self):
        return self.y.shape[0]


@dataclass(frozen=True)
class TropicalSample:
    """A sample drawn from the tropical measure.

    log_x is the normalized representative (max entry 0).  Exactly one
    of `permutation` (fast permutahedron path: sigma[k] is the ground
    element at position k+1, so sigma[-1] carries log x = 0) and
    `cone_index` (explicit sector-table path) is set.  log_psi_tr /
    log_phi_tr are filled by the graph sampler, which knows the facet
    data; they stay None for generic samples.
    """

    log_x: np.ndarray
    permutation: tuple[int, ...] | None = None
    cone_index: int | None = None
    log_psi_tr: float | None = None
    log_phi_tr: float | None = None


class LogValue(NamedTuple):
    """p(e^y) = phase * exp(log_abs); log_abs = -inf flags exact zero."""

    log_abs: float
    phase: complex

    @property
    def is_zero(self) -> bool:
        return self.log_abs == -math.inf


def _y_vector(p: SparsePolynomial, y) -> np.ndarray:
    arr = y.y if isinstance(y, LogPoint) else np.asarray(y, dtype=np.float64)
    if arr.shape != (p.n_vars,):
        raise TropicalError(
            f"expected a vector of length {p.n_vars}, got shape {arr.shape}")
    return arr


def trop_eval_log(p: SparsePolynomial, y) -> float:
    """log p^tr(e^y): exact max over the support of <y, l>. No smoothing."""
    arr = _y_vector(p, y)
    return float((p.exponents @ arr).max())


def truncate(p: SparsePolynomial, y) -> SparsePolynomial:
    """The truncated polynomial p_F for the face F maximizing <y, .>.

    All tying support points are kept: that is the definition of a
    face, not a tie-break.  truncate(p, 0) = p.
    """
    arr = _y_vector(p, y)
    vals = p.exponents @ arr
    top = vals.max()
    keep = np.flatnonzero(vals == top)
    return SparsePolynomial(
        p.n_vars,
        [(p.exponents[i], p.coefficients[i]) for i in keep],
    )


def upper_bound_constant(p: SparsePolynomial) -> float:
    """C = sum |c_l|, giving |p(x)| <= C * p^tr(x) on the positive orthant."""
    return float(np.abs(p.coefficients).sum())


def lower_bound_constant(p: SparsePolynomial) -> float:
    """min |c_l|; for positive-coefficient p, min c * p^tr <= p holds."""
    return float(np.abs(p.coefficients).min())


def eval_log(p: SparsePolynomial, y) -> LogValue:
    """Evaluate p(e^y) as (log_abs, unit phase), overflow-free.

    The tropical maximum M is factored out first, so every exponential
    in the inner sum has a non-positive argument:

        p(e^y) = e^M * sum_l c_l e^{<y,l> - M}.

    Exact cancellation of the inner sum returns log_abs = -inf (the
    is_zero flag); for a denominator polynomial that is a witness that
    the input is not completely non-vanishing, and the caller decides.
    """
    arr = _y_vector(p, y)
    vals = p.exponents @ arr
    top = vals.max()
    inner = complex((p.coefficients * np.exp(vals - top)).sum())
    mag = abs(inner)
    if mag == 0.0:
        return LogValue(-math.inf, complex(1.0))
    return LogValue(float(top) + math.log(mag), inner / mag)


def eval_log_power(value: LogValue, power: complex) -> LogValue:
    """value^power on the principal branch of log.

    Documented, not configurable: log p = log_abs + i*arg(phase) with
    arg in (-pi, pi].  Zero base: positive real part of the power gives
    zero, anything else is undefined and raises.
    """
    if value.is_zero:
        if power.real > 0:
            return LogValue(-math.inf, complex(1.0))
        raise TropicalError("0 raised to a power with non-positive real part")
    logp = complex(value.log_abs, cmath.phase(value.phase))
    w = power * logp
    return LogValue(w.real, cmath.exp(complex(0.0, w.imag)))


def parse_polynomial_text(text: str, n_vars: int | None = None) -> SparsePolynomial:
    """Parse the one-term-per-line format: `coeff_re coeff_im e1 ... en`.

    Lines starting with # (and blank lines) are ignored.  n_vars is
    inferred from the first term when not given.
    """
    terms = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 3:
            raise TropicalError(
                f"line {lineno}: expected `coeff_re coeff_im e1 ... en`")
        try:
            re_c, im_c = float(parts[0]), float(parts[1])
            exps = [int(tok) for tok in parts[2:]]
        except ValueError as exc:
            raise TropicalError(f"line {lineno}: {exc}") from None
        if n_vars is None:
            n_vars = len(exps)
        if len(exps) != n_vars:
            raise TropicalError(
                f"line {lineno}: expected {n_vars} exponents, got {len(exps)}")
        terms.append((exps, complex(re_c, im_c)))
    if n_vars is None or not terms:
        raise TropicalError("no terms found")
    return SparsePolynomial(n_vars, terms)


def format_polynomial_text(p: SparsePolynomial) -> str:
    lines = []
    for row, c in zip(p.exponents, p.coefficients):
        exps = " ".join(str(int(v)) for v in row)
        lines.append(f"{float(c.real)!r} {float(c.imag)!r} {exps}")
    return "\n".join(lines) + "\n"
