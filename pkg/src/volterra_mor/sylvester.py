"""Kronecker-structured solves for the BIRKA and TBIRKA bases.

With the reduced spectral data ``(Λ, R, b2, c2, N2)`` the BIRKA primal basis
solves the coupled system

    (-Λ ⊗ I - I ⊗ A - N2^T ⊗ N) vec(V) = b2 ⊗ b,

and the dual basis solves the transposed system with right-hand side
``c2 ⊗ c``. TBIRKA truncates the Neumann expansion of that matrix into a
cascade of block-diagonal solves, which decouples into one shifted solve
``(-λ_l I - A) v = rhs_l`` per column.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as spla
from scipy.linalg import lapack

from . import solvers
from .solvers import SolveReport
from .systems import SINGULAR_COND, SingularShiftError
from .tensor_ops import kron, unvec, vec

#: Largest ``n r`` for which the coupled BIRKA matrix is assembled densely.
MAX_ASSEMBLED_DIM = 4000
EIGVEC_COND_LIMIT = 1e12

BACKENDS = ("direct", "bicg", "bicg_deflated")
SIDES = ("primal", "dual")


class NonDiagonalizableError(np.linalg.LinAlgError):
    """The reduced state matrix has an ill-conditioned eigenvector basis."""


@dataclass(frozen=True)
class ReducedSpectralData:
    """Eigen-decomposition ``A_r = R diag(lam) R^-1`` and the transformed data.

    ``b2 = R^-1 b_r``, ``c2 = c_r R`` and ``N2 = (R^-1 N_r R)^T``, so that the
    coupling term of the Kronecker system is ``N2^T ⊗ N``.
    """

    lam: np.ndarray
    R: np.ndarray
    b2: np.ndarray
    c2: np.ndarray
    N2: np.ndarray

    @property
    def r(self):
        return self.lam.shape[0]


def spectral_data(Ar, Nr, br, cr, warn=True):
    """Diagonalize the reduced quadruple.

    With ``warn`` set, an inaccurate reconstruction or an unstable reduced
    model triggers a ``RuntimeWarning``.

    Raises
    ------
    NonDiagonalizableError
        If the eigenvector matrix has condition number above 1e12.
    """
    Ar = np.asarray(Ar, dtype=float)
    lam, R = np.linalg.eig(Ar)
    kappa = np.linalg.cond(R)
    if not np.isfinite(kappa) or kappa > EIGVEC_COND_LIMIT:
        raise NonDiagonalizableError(
            f"reduced A is not safely diagonalizable (eigenvector condition {kappa:.2e})"
        )
    Rinv = np.linalg.inv(R)
    scale = max(np.linalg.norm(Ar), np.finfo(float).tiny)
    recon = np.linalg.norm(R @ np.diag(lam) @ Rinv - Ar) / scale
    if warn and recon > 1e-10:
        warnings.warn(f"eigen-decomposition reconstructs reduced A only to {recon:.1e}",
                      RuntimeWarning, stacklevel=2)
    if warn and np.any(lam.real >= 0):
        warnings.warn("reduced model is unstable (eigenvalue with nonnegative real part)",
                      RuntimeWarning, stacklevel=2)
    b2 = Rinv @ np.asarray(br)
    c2 = np.asarray(cr) @ R
    N2 = (Rinv @ np.asarray(Nr) @ R).T
    return ReducedSpectralData(lam, R, b2, c2, N2)


@dataclass(frozen=True)
class SolveBackend:
    """Linear-solve strategy for the basis computations.

    ``recycle_dim`` is the deflation-space size used by ``bicg_deflated``.
    """

    kind: str = "direct"
    tolerance: float = 1e-10
    max_iterations: int = 1000
    recycle_dim: int = 2

    def __post_init__(self):
        if self.kind not in BACKENDS:
            raise ValueError(f"unknown backend {self.kind!r}; choose from {BACKENDS}")
        if not 0 < self.tolerance < 1:
            raise ValueError(f"tolerance must lie in (0, 1), got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.recycle_dim < 0:
            raise ValueError("recycle_dim must be nonnegative")

    @property
    def iterative(self):
        return self.kind != "direct"


def _check_side(side):
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got {side!r}")


def lu_checked(K, label):
    """LU-factor ``K``, raising :class:`SingularShiftError` when it is singular."""
    K = np.asarray(K, dtype=complex)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", spla.LinAlgWarning)
        lu, piv = spla.lu_factor(K, check_finite=False)
    anorm = np.linalg.norm(K, 1)
    rcond, info = lapack.zgecon(lu, anorm, norm="1")
    if anorm == 0 or info != 0 or rcond * SINGULAR_COND < 1:
        cond = np.inf if rcond == 0 else 1.0 / rcond
        raise SingularShiftError(f"{label} is numerically singular (condition ~{cond:.2e})")
    return lu, piv


def _relres(K_apply, x, rhs):
    bn = np.linalg.norm(rhs)
    return float(np.linalg.norm(rhs - K_apply(x)) / bn) if bn > 0 else 0.0


def _iterative(backend, apply, apply_t, rhs, recycle, key):
    if backend.kind == "bicg":
        return solvers.bicg(apply, apply_t, rhs, tol=backend.tolerance,
                            maxit=backend.max_iterations)
    space = None if recycle is None else recycle.get(key)
    x, rep, new = solvers.bicg_deflated(apply, apply_t, rhs, tol=backend.tolerance,
                                        maxit=backend.max_iterations, recycle=space,
                                        keep=backend.recycle_dim)
    if recycle is not None:
        recycle[key] = new
    return x, rep


def birka_operator(sys, spec, side="primal"):
    """Matrix-free actions ``(apply, apply_transpose)`` of the coupled system."""
    _check_side(side)
    n, r = sys.n, spec.r
    lam, N2 = spec.lam, spec.N2

    def fwd(v):
        X = unvec(v, n, r)
        return vec(-sys.A @ X - X * lam - sys.N @ X @ N2)

    def bwd(v):
        X = unvec(v, n, r)
        return vec(-sys.A.T @ X - X * lam - sys.N.T @ X @ N2.T)

    return (fwd, bwd) if side == "primal" else (bwd, fwd)


def birka_matrix(sys, spec):
    """The assembled ``nr x nr`` primal matrix ``-Λ⊗I - I⊗A - N2^T⊗N``."""
    n, r = sys.n, spec.r
    return (-kron(np.diag(spec.lam), np.eye(n)) - kron(np.eye(r), sys.A)
            - kron(spec.N2.T, sys.N))


def birka_rhs(sys, spec, side="primal"):
    _check_side(side)
    if side == "primal":
        return kron(spec.b2[:, None], sys.b[:, None])[:, 0]
    return kron(spec.c2[:, None], sys.c[:, None])[:, 0]


def solve_birka_coupled(sys, spec, side="primal", backend=SolveBackend(), factors=None,
                        recycle=None):
    """Solve the coupled BIRKA system for the primal or dual basis.

    Parameters
    ----------
    sys
        Full-order system.
    spec
        Spectral data of the current reduced model.
    side
        ``"primal"`` for ``V`` or ``"dual"`` for ``W``.
    backend
        Direct assembly or a matrix-free Krylov solve.
    factors, recycle
        Optional dicts shared between calls. ``factors`` caches the LU of the
        assembled matrix so the dual solve reuses the primal factorization;
        ``recycle`` holds deflation spaces between calls.

    Returns
    -------
    X : ndarray, complex, shape (n, r)
    report : SolveReport
    """
    _check_side(side)
    n, r = sys.n, spec.r
    rhs = birka_rhs(sys, spec, side)
    apply, apply_t = birka_operator(sys, spec, side)
    if backend.kind == "direct":
        if n * r > MAX_ASSEMBLED_DIM:
            raise ValueError(
                f"n r = {n * r} exceeds {MAX_ASSEMBLED_DIM}; use an iterative backend"
            )
        lu = None if factors is None else factors.get("birka")
        if lu is None:
            lu = lu_checked(birka_matrix(sys, spec), "the coupled BIRKA matrix")
            if factors is not None:
                factors["birka"] = lu
        x = spla.lu_solve(lu, rhs, trans=0 if side == "primal" else 1, check_finite=False)
        report = SolveReport(iterations=0, final_relative_residual=_relres(apply, x, rhs),
                             converged=True)
    else:
        x, report = _iterative(backend, apply, apply_t, rhs, recycle, ("birka", side))
    report.residual = unvec(rhs - apply(x), n, r)
    return unvec(x, n, r), report


def _merge(column_reports, residual):
    return SolveReport(
        iterations=sum(c.iterations for c in column_reports),
        final_relative_residual=max(c.final_relative_residual for c in column_reports),
        residual_history=[c.residual_history for c in column_reports],
        breakdown_flag=any(c.breakdown_flag for c in column_reports),
        converged=all(c.converged for c in column_reports),
        residual=residual,
        column_reports=column_reports,
    )


def solve_tbirka_cascade(sys, spec, M, side="primal", backend=SolveBackend(), factors=None,
                         recycle=None):
    """Cascaded TBIRKA solves ``V_1, ..., V_M`` without Kronecker products.

    Column ``l`` of ``V_1`` solves ``(-λ_l I - A) v = b2_l b``; column ``l``
    of ``V_j`` solves ``(-λ_l I - A) v = (N V_{j-1} N2) e_l``. The dual side
    uses ``A^T``, ``N^T``, ``c2`` and ``N2^T``.

    Returns
    -------
    Vs : list of ndarray
        The ``M`` complex ``n x r`` blocks.
    reports : list of SolveReport
        One per cascade step, each merging its ``r`` column reports and
        carrying the residual matrix ``R_j``.
    """
    _check_side(side)
    if int(M) != M or M < 1:
        raise ValueError(f"M must be an integer >= 1, got {M}")
    n, r = sys.n, spec.r
    primal = side == "primal"
    A = sys.A if primal else sys.A.T
    Nm = sys.N if primal else sys.N.T
    N2 = spec.N2 if primal else spec.N2.T
    first = sys.b if primal else sys.c
    weights = spec.b2 if primal else spec.c2
    factors = {} if factors is None else factors
    eye = np.eye(n)

    Vs, reports = [], []
    prev = None
    for j in range(1, M + 1):
        if j == 1:
            B = np.outer(first, weights).astype(complex)
        else:
            B = Nm @ prev @ N2
        X = np.zeros((n, r), dtype=complex)
        res = np.zeros((n, r), dtype=complex)
        col_reports = []
        for ell in range(r):
            lam = spec.lam[ell]
            rhs = B[:, ell]

            def apply(v, lam=lam):
                return -lam * v - A @ v

            def apply_t(v, lam=lam):
                return -lam * v - A.T @ v

            if backend.kind == "direct":
                lu = factors.get(("shift", lam))
                if lu is None:
                    lu = lu_checked(-lam * eye - sys.A, f"shifted matrix -({lam:.6g}) I - A")
                    factors[("shift", lam)] = lu
                x = spla.lu_solve(lu, rhs, trans=0 if primal else 1, check_finite=False)
                rep = SolveReport(iterations=0, final_relative_residual=_relres(apply, x, rhs),
                                  converged=True)
            else:
                x, rep = _iterative(backend, apply, apply_t, rhs, recycle, (side, ell))
            X[:, ell] = x
            res[:, ell] = rhs - apply(x)
            col_reports.append(rep)
        Vs.append(X)
        reports.append(_merge(col_reports, res))
        prev = X
    return Vs, reports


def cascade_kronecker_oracle(sys, spec, M, side="primal"):
    """Dense-inverse evaluation of the cascade, for testing.

    Applies ``(-Λ⊗I - I⊗A)^-1 (N2^T⊗N)`` repeatedly with explicit inverses.
    """
    _check_side(side)
    n, r = sys.n, spec.r
    K0 = -kron(np.diag(spec.lam), np.eye(n)) - kron(np.eye(r), sys.A)
    C = kron(spec.N2.T, sys.N)
    rhs = birka_rhs(sys, spec, side)
    if side == "dual":
        K0, C = K0.T, C.T
    Kinv = np.linalg.inv(K0)
    v = Kinv @ rhs
    out = [unvec(v, n, r)]
    for _ in range(1, M):
        v = Kinv @ (C @ v)
        out.append(unvec(v, n, r))
    return out
