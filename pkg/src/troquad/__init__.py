"""troquad: tropical importance-sampling quadrature.

Monte Carlo evaluation of projective integrals of the form

    int_{x > 0} prod_i a_i(x)^{nu_i} / prod_j b_j(x)^{rho_j}  Omega

(Euclidean Feynman integrals being the flagship case) by sampling from
the tropical approximation of the integrand, which turns the singular
integrand into a bounded one.  Preprocessing is either an explicit
sector table (general polynomials, desk scale) or, for integrands
whose Newton polytopes are generalized permutahedra, a 2^n subset
table that skips triangulation entirely.
"""

from .feynman import (FeynmanGraph, build_feynman_tables, estimate_feynman,
                      load_graph, make_graph, psi_phi_eval, psi_phi_reference)
from .mc import EstimateReport, EstimatorState, RejectionBudgetExceeded, merge
from .permutahedron import (BooleanTable, DivergentInput, SubsetTable,
                            build_subset_table, check_supermodular,
                            load_subset_table, sample_gp, save_subset_table,
                            vertex_from_permutation)
from .rng import RandomStream
from .sectors import SectorTable, build_refined_fan, load_sector_table
from .tropical import (LogPoint, SparsePolynomial, TropicalSample, eval_log,
                       parse_polynomial_text, trop_eval_log, truncate,
                       upper_bound_constant)

__version__ = "0.1.0"

__all__ = [
    "BooleanTable", "DivergentInput", "EstimateReport", "EstimatorState",
    "FeynmanGraph", "LogPoint", "RandomStream", "RejectionBudgetExceeded",
    "SectorTable", "SparsePolynomial", "SubsetTable", "TropicalSample",
    "build_feynman_tables", "build_refined_fan", "build_subset_table",
    "check_supermodular", "estimate_feynman", "eval_log", "load_graph",
    "load_sector_table", "load_subset_table", "make_graph", "merge",
    "parse_polynomial_text", "psi_phi_eval", "psi_phi_reference",
    "sample_gp", "save_subset_table", "trop_eval_log", "truncate",
    "upper_bound_constant", "vertex_from_permutation",
]
