"""Interpolatory model order reduction of SISO bilinear systems.

BIRKA and TBIRKA with direct or Petrov-Galerkin iterative solves, H2 and
H-infinity norms of Volterra kernels, and experiments on the backward
stability of TBIRKA with respect to inexact linear solves.
"""

from .mor import (
    MorConfig,
    MorTrace,
    ReducedSystem,
    birka,
    eig_change,
    orthonormal_basis,
    project,
    tbirka,
    verify_truncated_interpolation,
)
from .norms import (
    FrequencyGrid,
    NormResult,
    h2_distance,
    h2_error_norm,
    h2_subsystem_quadrature,
    h2_truncated_gramian,
    h_infinity_estimate,
)
from .solvers import RecycleSpace, SolveReport, bicg, bicg_deflated, check_residual_orthogonality
from .sylvester import SolveBackend, solve_birka_coupled, solve_tbirka_cascade, spectral_data
from .systems import (
    BilinearSystem,
    PerturbedSystem,
    TruncatedSeries,
    demo_system,
    make_perturbation,
    perturbed_transfer_eval,
    simulate,
    transfer_eval,
)
from .tensor_ops import kron, unvec, vec

__version__ = "0.1.0"

__all__ = [
    "BilinearSystem", "FrequencyGrid", "MorConfig", "MorTrace", "NormResult",
    "PerturbedSystem", "RecycleSpace", "ReducedSystem", "SolveBackend", "SolveReport",
    "TruncatedSeries", "bicg", "bicg_deflated", "birka", "check_residual_orthogonality",
    "demo_system", "eig_change", "h2_distance", "h2_error_norm", "h2_subsystem_quadrature",
    "h2_truncated_gramian", "h_infinity_estimate", "kron", "make_perturbation",
    "orthonormal_basis", "perturbed_transfer_eval", "project", "simulate",
    "solve_birka_coupled", "solve_tbirka_cascade", "spectral_data", "tbirka",
    "transfer_eval", "unvec", "vec", "verify_truncated_interpolation",
]
