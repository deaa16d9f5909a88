"""Command-line front end.

Human-readable text goes to stderr, machine-readable JSON to stdout,
so `troquad integrate g.json -n 1000000 | jq .estimate` works.  Exit
codes: 0 success, 2 parse/validation failure, 3 divergent input,
4 rejection budget exceeded.
"""

import cmath
import hashlib
import itertools
import json
import math
import sys
import time
from fractions import Fraction
from pathlib import Path

import click
import numpy as np

from . import kernels, mc
from .feynman import (ExceptionalKinematics, FeynmanGraph,
                      build_feynman_tables, estimate_feynman,
                      exceptional_subsets, load_graph, make_graph,
                      r_function, subgraph_data)
from .mc import RejectionBudgetExceeded
from .permutahedron import (DivergentInput, load_subset_table, sample_gp,
                            save_subset_table, table_memory_estimate)
from .rng import RandomStream
from .sectors import (DivergentDirection, FanError, build_refined_fan,
                      estimate_per_sector, load_sector_table)
from .tropical import TropicalError, eval_log, parse_polynomial_text, trop_eval_log

EXIT_PARSE = 2
EXIT_DIVERGENT = 3
EXIT_BUDGET = 4

TABLE_SUFFIX = ".tropfeyn"
CACHE_DIR = ".troquad-cache"


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(obj) -> None:
    print(json.dumps(obj))


def _fail(code: int, msg: str):
    _say(f"error: {msg}")
    sys.exit(code)


def _parse_bytes(text: str) -> int:
    """'2G', '512M', '64K' or a plain integer byte count."""
    s = text.strip()
    mult = {"K": 1 << 10, "M": 1 << 20, "G": 1 << 30}.get(s[-1:].upper())
    try:
        if mult:
            return int(float(s[:-1]) * mult)
        return int(s)
    except ValueError:
        raise click.BadParameter(f"cannot parse byte size {text!r}")


class _Guard:
    """Maps domain exceptions to the documented exit codes."""

    def __enter__(self):
        return self

    def __exit__(self, etype, exc, tb):
        if exc is None:
            return False
        # divergence subclasses ValueError: test the specific ones first
        if isinstance(exc, (DivergentInput, DivergentDirection)):
            _fail(EXIT_DIVERGENT, str(exc))
        if isinstance(exc, RejectionBudgetExceeded):
            _fail(EXIT_BUDGET, str(exc))
        if isinstance(exc, (ExceptionalKinematics, FanError, TropicalError,
                            ValueError, KeyError, OSError, RuntimeError,
                            json.JSONDecodeError, MemoryError)):
            _fail(EXIT_PARSE, str(exc))
        return False


# ---------------------------------------------------------------------------
# table cache


def _graph_digest(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    h.update(b"TROPFEYN1")  # table format version: changing it invalidates
    return h.hexdigest()[:32]


def _cache_path(graph_path) -> Path:
    p = Path(graph_path)
    return p.parent / CACHE_DIR / (_graph_digest(p) + TABLE_SUFFIX)


def _resolve_table(graph_path, g: FeynmanGraph, table_opt, max_mem,
                   quiet=False):
    """(table, seconds_preprocess).  Explicit --table wins; otherwise a
    content-hash cache next to the graph file is consulted and filled."""
    explicit = Path(table_opt) if table_opt else None
    target = explicit if explicit else _cache_path(graph_path)
    if target.exists():
        t0 = time.perf_counter()
        try:
            t = load_subset_table(target)
        except ValueError as e:
            if explicit:
                raise
            _say(f"table cache: discarding corrupt {target} ({e})")
        else:
            if t.n != g.num_edges:
                raise ValueError(
                    f"table {target} has n = {t.n}, graph has "
                    f"{g.num_edges} edges")
            if not quiet:
                _say(f"table cache: loaded {target}")
            return t, time.perf_counter() - t0
    t0 = time.perf_counter()
    t = build_feynman_tables(g, max_bytes=max_mem, quiet=quiet)
    dt = time.perf_counter() - t0
    target.parent.mkdir(parents=True, exist_ok=True)
    save_subset_table(t, target)
    if not quiet:
        _say(f"table cache: built and saved {target}")
    return t, dt


# ---------------------------------------------------------------------------
# commands

_OPT_MAXMEM = click.option(
    "--max-mem", default="2G", show_default=True,
    help="Refuse subset tables larger than this (bytes; K/M/G suffixes).")
_OPT_SEED = click.option("--seed", default=42, show_default=True, type=int)
_OPT_SAMPLES = click.option("-n", "--samples", "n_samples", default=1_000_000,
                            show_default=True, type=int)
_OPT_TABLE = click.option(
    "--table", default=None, type=click.Path(),
    help="Subset-table file to load (or create if missing); overrides "
    "the automatic cache.")
_OPT_REJECT = click.option(
    "--reject-threshold", default=mc.DEFAULT_REJECT_THRESHOLD,
    show_default=True, type=float,
    help="Abort when the rejected fraction exceeds this.")


@click.group()
@click.version_option(package_name="artifact", message="%(version)s")
def main():
    """Tropical importance-sampling quadrature for projective algebraic
    integrals and Euclidean Feynman integrals."""


@main.command()
@click.argument("graph_file", type=click.Path(exists=True, dir_okay=False))
@_OPT_MAXMEM
def check(graph_file, max_mem):
    """Convergence report: omega, loops, min r over proper subgraphs.

    Exit 0 iff every non-empty proper subgraph has r > 0.
    """
    with _Guard():
        g = load_graph(graph_file)
        cap = _parse_bytes(max_mem)
        need = table_memory_estimate(g.num_edges)
        if need > cap:
            raise MemoryError(
                f"subgraph sweep needs ~{need} bytes, over the cap "
                f"(raise --max-mem)")
        loops, mm = subgraph_data(g)
        r = r_function(g, loops, mm)
        full = (1 << g.num_edges) - 1
        proper = r[1:full]
        k = int(np.argmin(proper)) + 1
        min_r = float(r[k])
        witness = tuple(e for e in range(g.num_edges) if (k >> e) & 1)
        n_mm = int(mm[1:full].sum())
        _say(f"graph {g.name}: V = {g.num_vertices}, E = {g.num_edges}, "
             f"loops = {g.loops}")
        _say(f"omega = {g.omega:g}, min r = {min_r:g} at edge subset "
             f"{witness}")
        _say(f"mass-momentum-spanning proper subgraphs: {n_mm} of "
             f"{full - 1}")
        if g.phi_is_identically_zero():
            _say("note: Φ ≡ 0 (pure period); fine while ω = 0")
        warn = exceptional_subsets(g)
        if warn is None:
            _say("exceptional-kinematics scan skipped (too many momentum "
                 "vertices)")
        elif warn:
            for sub in warn:
                _say(f"warning: momenta of vertices {sub} sum to zero "
                     "(exceptional kinematics; convergence theory assumes "
                     "otherwise)")
        convergent = min_r > 0.0
        _say("convergent" if convergent else
             "DIVERGENT: the tropical normalization does not exist")
        _emit({"name": g.name, "num_edges": g.num_edges, "loops": g.loops,
               "omega": g.omega, "min_r": min_r,
               "argmin_subset": list(witness), "mm_proper_subgraphs": n_mm,
               "convergent": convergent,
               "exceptional_witnesses":
                   None if warn is None else [list(s) for s in warn]})
        if not convergent:
            sys.exit(EXIT_DIVERGENT)


@main.command()
@click.argument("graph_file", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", default=None, type=click.Path(),
              help="Table file to write (default: the automatic cache).")
@_OPT_MAXMEM
def preprocess(graph_file, output, max_mem):
    """Build the 2^E subset table (r, log J, loops, flags) and save it."""
    with _Guard():
        g = load_graph(graph_file)
        target = Path(output) if output else _cache_path(graph_file)
        t0 = time.perf_counter()
        t = build_feynman_tables(g, max_bytes=_parse_bytes(max_mem))
        dt = time.perf_counter() - t0
        target.parent.mkdir(parents=True, exist_ok=True)
        save_subset_table(t, target)
        nbytes = table_memory_estimate(t.n)
        _say(f"wrote {target}: n = {t.n}, {nbytes} bytes, "
             f"I^tr = {t.I_tr:.9g}, {dt:.3g} s")
        _emit({"path": str(target), "n": t.n, "table_bytes": nbytes,
               "I_tr": t.I_tr, "log_I_tr": t.log_I_tr,
               "seconds_preprocess": dt})


@main.command()
@click.argument("graph_file", type=click.Path(exists=True, dir_okay=False))
@_OPT_TABLE
@_OPT_MAXMEM
def hepp(graph_file, table, max_mem):
    """Print the tropical normalization I^tr (the Hepp-bound analogue:
    a kinematics-independent invariant when omega = 0)."""
    with _Guard():
        g = load_graph(graph_file)
        t, dt = _resolve_table(graph_file, g, table, _parse_bytes(max_mem))
        _say(f"I^tr = {t.I_tr:.12g}   log I^tr = {t.log_I_tr:.12g}   "
             f"({dt:.3g} s)")
        _emit({"name": g.name, "I_tr": t.I_tr, "log_I_tr": t.log_I_tr})


@main.command()
@click.argument("graph_file", type=click.Path(exists=True, dir_okay=False))
@_OPT_SAMPLES
@_OPT_SEED
@click.option("--workers", default=1, show_default=True, type=int)
@click.option("--eps-order", default=0, show_default=True, type=int,
              help="Expansion order in the dimension shift D -> D - 2*eps.")
@click.option("--backend", default=None,
              type=click.Choice(["compiled", "fallback"]),
              help="Sampling kernel (default: compiled when built).")
@_OPT_TABLE
@_OPT_MAXMEM
@_OPT_REJECT
def integrate(graph_file, n_samples, seed, workers, eps_order, backend,
              table, max_mem, reject_threshold):
    """Estimate the integral: preprocess (or load cache), sample, report."""
    with _Guard():
        g = load_graph(graph_file)
        t, dt = _resolve_table(graph_file, g, table, _parse_bytes(max_mem))
        rep = estimate_feynman(
            g, t, n_samples, seed, workers, order=eps_order,
            reject_threshold=reject_threshold, backend=backend,
            seconds_preprocess=dt)
        est = np.atleast_1d(rep.estimate)
        se = np.atleast_1d(rep.std_error)
        for k in range(len(est)):
            tag = f"eps^{k}: " if len(est) > 1 else ""
            _say(f"{tag}{est[k]:.9g} +/- {se[k]:.3g}")
        _say(f"N = {rep.n_samples} accepted, {rep.n_rejected} rejected, "
             f"{rep.samples_per_second:.3g} samples/s, "
             f"backend {kernels.get_backend(backend).NAME}")
        _emit(rep.to_json_dict())


@main.command()
@click.argument("graph_file", type=click.Path(exists=True, dir_okay=False))
@click.option("-n", "--samples", "n_samples", default=10, show_default=True,
              type=int)
@_OPT_SEED
@_OPT_TABLE
@_OPT_MAXMEM
def sample(graph_file, n_samples, seed, table, max_mem):
    """Draw tropical samples; one JSON object per line on stdout."""
    with _Guard():
        g = load_graph(graph_file)
        t, _ = _resolve_table(graph_file, g, table, _parse_bytes(max_mem))
        rng = RandomStream(seed)
        for _ in range(n_samples):
            s = sample_gp(t, rng)
            _emit({"log_x": [float(v) for v in s.log_x],
                   "permutation": list(s.permutation)})


def _load_homogeneous(path):
    p = parse_polynomial_text(Path(path).read_text())
    if not p.homogeneous:
        degs = sorted({int(v) for v in p.exponents.sum(axis=1)})
        raise TropicalError(
            f"polynomial {path}: not homogeneous (term degrees {degs})")
    return p, p.degree


@main.command("euler-mellin")
@click.option("--poly-num", "num_files", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Numerator polynomial file (repeatable).")
@click.option("--poly-den", "den_files", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Denominator polynomial file (repeatable).")
@click.option("--powers", required=True,
              help="Comma-separated rational exponents, numerators first "
              "(e.g. '1,2' for a^1 / b^2).")
@click.option("--sectors", default="auto", show_default=True,
              help="Sector-table file, or 'auto' to build the refined fan.")
@click.option("-n", "--samples", "n_samples", default=100_000,
              show_default=True, type=int,
              help="Total sample budget, split evenly across sectors.")
@_OPT_SEED
@_OPT_REJECT
def euler_mellin(num_files, den_files, powers, sectors, n_samples, seed,
                 reject_threshold):
    """Estimate a projective integral of prod a_i^nu_i / prod b_j^rho_j
    over the positive orthant by per-sector tropical sampling."""
    with _Guard():
        try:
            pw = [Fraction(tok) for tok in powers.split(",")]
        except (ValueError, ZeroDivisionError):
            raise TropicalError(f"cannot parse --powers {powers!r}")
        files = list(num_files) + list(den_files)
        if len(pw) != len(files):
            raise TropicalError(
                f"--powers has {len(pw)} entries for {len(files)} "
                "polynomials")
        if any(p <= 0 for p in pw):
            raise TropicalError("--powers must all be positive")
        polys, degs = [], []
        for f in files:
            p, d = _load_homogeneous(f)
            polys.append(p)
            degs.append(d)
        n_vars = {p.n_vars for p in polys}
        if len(n_vars) != 1:
            raise TropicalError(
                f"polynomials disagree on variable count: {sorted(n_vars)}")
        n = n_vars.pop()
        k_num = len(num_files)
        deg_num = sum(pw[i] * degs[i] for i in range(k_num))
        deg_den = sum(pw[k_num + j] * degs[k_num + j]
                      for j in range(len(den_files)))
        if deg_num != deg_den:
            raise TropicalError(
                f"degree imbalance: numerator {deg_num}, denominator "
                f"{deg_den}; the projective integrand must be degree 0")

        def minkowski(idx):
            pts = set()
            for combo in itertools.product(
                    *[map(tuple, polys[i].exponents) for i in idx]):
                pts.add(tuple(sum(pw[i] * Fraction(v[d])
                                  for i, v in zip(idx, combo))
                              for d in range(n)))
            return sorted(pts)

        if sectors == "auto":
            t = build_refined_fan(minkowski(range(k_num)),
                                  minkowski(range(k_num, len(files))))
            _say(f"refined fan: {len(t.sectors)} sectors, "
                 f"I^tr = {t.total:.9g}")
        else:
            t = load_sector_table(sectors)
            if t.n != n:
                raise TropicalError(
                    f"sector table is {t.n}-dimensional, polynomials have "
                    f"{n} variables")

        complex_out = any(np.abs(p.coefficients.imag).max() > 0
                          for p in polys)

        def f(s):
            log_m, phase = 0.0, 0.0
            for i, p in enumerate(polys):
                lv = eval_log(p, s.log_x)
                sign = 1.0 if i < k_num else -1.0
                log_m += sign * float(pw[i]) * (lv.log_abs - trop_eval_log(p, s.log_x))
                phase += sign * float(pw[i]) * cmath.phase(lv.phase)
            m = math.exp(log_m)
            if complex_out:
                return [m * math.cos(phase), m * math.sin(phase)]
            return m * math.cos(phase)

        n_per = max(2, -(-n_samples // len(t.sectors)))
        rep = estimate_per_sector(
            t, f, n_per, RandomStream(seed),
            n_orders=2 if complex_out else 1,
            reject_threshold=reject_threshold)
        est = np.atleast_1d(rep.estimate)
        se = np.atleast_1d(rep.std_error)
        if complex_out:
            _say(f"estimate = {est[0]:.9g} + {est[1]:.9g}i "
                 f"+/- ({se[0]:.3g}, {se[1]:.3g})")
        else:
            _say(f"estimate = {est[0]:.9g} +/- {se[0]:.3g}")
        _say(f"{n_per} samples in each of {len(t.sectors)} sectors, "
             f"{rep.n_rejected} rejected")
        _emit(rep.to_json_dict())


# ---------------------------------------------------------------------------
# benchmark


def _phi4_like_graph(E: int, seed: int, max_mem: int):
    """Pseudo-random 4-regular multigraph on (E+4)/2 vertices with one
    vertex deleted: E edges, loops = E/2, omega = 0 at D = 4, nu = 1.

    Configuration-model pairing; retries until the result is connected,
    simple enough to validate, and free of divergent subgraphs (double
    edges give r = 0).  Deterministic in (E, seed).
    """
    if E < 6 or E % 2:
        raise ValueError(f"need even E >= 6, got {E}")
    W = (E + 4) // 2
    for attempt in range(1000):
        rng = RandomStream(seed, stream=10_000 + attempt)
        stubs = [v for v in range(W) for _ in range(4)]
        for i in range(len(stubs) - 1, 0, -1):
            j = int(rng.uniform() * (i + 1))
            stubs[i], stubs[j] = stubs[j], stubs[i]
        pairs = [(stubs[2 * i], stubs[2 * i + 1]) for i in range(2 * W)]
        if any(u == v for u, v in pairs):
            continue
        edges = [(u - 1, v - 1) for u, v in pairs if u != 0 and v != 0]
        if len(edges) != E:
            continue
        try:
            g = make_graph(f"phi4-E{E}-s{seed}", W - 1, edges, D=4.0)
            t0 = time.perf_counter()
            t = build_feynman_tables(g, max_bytes=max_mem, quiet=True)
            return g, t, time.perf_counter() - t0
        except (DivergentInput, ValueError):
            continue
    raise RuntimeError(f"no convergent 4-regular graph found at E = {E}")


@main.command()
@click.option("-e", "--edges", default="6,8,10,12", show_default=True,
              help="Comma-separated edge counts (even, >= 6).")
@click.option("-n", "--samples", "n_samples", default=200_000,
              show_default=True, type=int)
@_OPT_SEED
@click.option("--backend", default="both", show_default=True,
              type=click.Choice(["compiled", "fallback", "both"]))
@_OPT_MAXMEM
def bench(edges, n_samples, seed, backend, max_mem):
    """Throughput/quality table on generated phi^4-like periods.

    Rows report sigma_I/I (per-sample relative deviation), samples per
    second, preprocessing seconds, and table bytes.  Graphs are random:
    trend comparison only, absolute values are not reproducible
    constants.
    """
    with _Guard():
        want = [b for b in ("compiled", "fallback")
                if backend in (b, "both")]
        missing = [b for b in want if b not in kernels.available_backends()]
        if missing:
            raise ValueError(
                f"backend {missing[0]} not built (set TROQUAD_BACKEND or "
                "rebuild)")
        cap = _parse_bytes(max_mem)
        rows = []
        hdr = (f"{'E':>4} {'loops':>6} {'backend':>9} {'sigma_I/I':>10} "
               f"{'samples/s':>11} {'prep_s':>9} {'bytes':>10}")
        _say(hdr)
        for etxt in edges.split(","):
            E = int(etxt)
            if table_memory_estimate(E) > cap:
                _say(f"{E:>4}  skipped: table would need "
                     f"{table_memory_estimate(E)} bytes (over --max-mem)")
                rows.append({"E": E, "skipped": "over memory cap"})
                continue
            g, t, prep = _phi4_like_graph(E, seed, cap)
            for be in want:
                rep = estimate_feynman(g, t, n_samples, seed, 1, backend=be)
                soi = mc.sigma_over_I(rep)
                row = {"E": E, "loops": g.loops, "backend": be,
                       "sigma_over_I": soi,
                       "samples_per_second": rep.samples_per_second,
                       "seconds_preprocess": prep,
                       "table_bytes": table_memory_estimate(E)}
                rows.append(row)
                _say(f"{E:>4} {g.loops:>6} {be:>9} {soi:>10.3g} "
                     f"{rep.samples_per_second:>11.3g} {prep:>9.3g} "
                     f"{table_memory_estimate(E):>10}")
        _say("(trend comparison only: graphs are generated, not the "
             "originals behind published timings)")
        _emit(rows)


if __name__ == "__main__":
    main()
