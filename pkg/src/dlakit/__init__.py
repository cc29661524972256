"""Diffusion-limited aggregation on graphs.

Graph families, exact and Monte Carlo potential theory, the DLA chain,
bound formulas, Beurling-estimate checks and growth-record analysis.
"""

from .errors import (BudgetError, ConstructionError, DLAKitError, DomainError,
                     ResourceError, SamplingError, SolverError)
from .graphs import (Carpet, Graph, Lattice, PercolationCluster, RegularTree,
                     ball_size, build_percolation_cluster, dist, is_in_carpet, neighbors,
                     parse_family)
from .rng import RandomStream
from .potential import (PotentialSolveResult, SolverConfig, WalkOutcome,
                        capacity_sandwich_check, green_mc, heat_kernel_diag, run_walk,
                        solve_escape, spectral_capacity_check)
from .dla import (Aggregate, LaunchConfig, RecordSink, grow, init_aggregate,
                  sample_attachment)
from .bounds import (EnvelopeSpec, PhiSpec, d_of_n, envelope, fill_in_order_bound,
                     i_phi, ld_tail_bound, poisson_binomial_tail)
from .beurling import BeurlingReport, beurling_report, enumerate_connected_sets
from .growth import GrowthRecord, envelope_ratio, first_passage, fit_exponent

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "BudgetError",
    "ConstructionError",
    "DLAKitError",
    "DomainError",
    "ResourceError",
    "SamplingError",
    "SolverError",
    "Carpet",
    "Graph",
    "Lattice",
    "PercolationCluster",
    "RegularTree",
    "ball_size",
    "build_percolation_cluster",
    "dist",
    "is_in_carpet",
    "neighbors",
    "parse_family",
    "RandomStream",
    "PotentialSolveResult",
    "SolverConfig",
    "WalkOutcome",
    "capacity_sandwich_check",
    "green_mc",
    "heat_kernel_diag",
    "run_walk",
    "solve_escape",
    "spectral_capacity_check",
    "Aggregate",
    "LaunchConfig",
    "RecordSink",
    "grow",
    "init_aggregate",
    "sample_attachment",
    "EnvelopeSpec",
    "PhiSpec",
    "d_of_n",
    "envelope",
    "fill_in_order_bound",
    "i_phi",
    "ld_tail_bound",
    "poisson_binomial_tail",
    "BeurlingReport",
    "beurling_report",
    "enumerate_connected_sets",
    "GrowthRecord",
    "envelope_ratio",
    "first_passage",
    "fit_exponent",
]
