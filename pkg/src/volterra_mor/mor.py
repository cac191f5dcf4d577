"""BIRKA and TBIRKA fixed-point iterations and their building blocks."""

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg as spla
from scipy.optimize import linear_sum_assignment

from . import sylvester
from .solvers import check_residual_orthogonality
from .sylvester import SolveBackend, lu_checked, spectral_data
from .systems import BilinearSystem

PROJECTION_COND_LIMIT = 1e12
INIT_RULES = ("random", "coordinate")


class ProjectionError(np.linalg.LinAlgError):
    """``W^T V`` is too ill-conditioned to form the reduced model."""


class RankDeficiencyWarning(UserWarning):
    """A basis lost rank and was padded with random orthonormal columns."""


class ReducedSystem(BilinearSystem):
    """A bilinear system produced by projection, with ``r``-subscripted aliases."""

    @property
    def Ar(self):
        return self.A

    @property
    def Nr(self):
        return self.N

    @property
    def br(self):
        return self.b

    @property
    def cr(self):
        return self.c

    @property
    def r(self):
        return self.n


@dataclass(frozen=True)
class MorConfig:
    """Settings shared by :func:`birka` and :func:`tbirka`.

    ``M`` is ignored by BIRKA. ``init`` is ``"random"`` (seeded stable
    reduced quadruple) or ``"coordinate"`` (projection onto the first ``r``
    coordinates).
    """

    r: int
    M: int = 1
    tol: float = 1e-8
    max_outer_iterations: int = 500
    init: str = "random"
    backend: SolveBackend = field(default_factory=SolveBackend)
    seed: int = 0

    def __post_init__(self):
        if int(self.r) != self.r or self.r < 1:
            raise ValueError(f"r must be a positive integer, got {self.r}")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be an integer >= 1, got {self.M}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be at least 1")
        if self.init not in INIT_RULES:
            raise ValueError(f"init must be one of {INIT_RULES}, got {self.init!r}")


@dataclass
class IterationRecord:
    eigenvalues: np.ndarray
    change: float
    reports: list
    orthogonality: object
    stable: bool
    notes: list = field(default_factory=list)


@dataclass
class MorTrace:
    """History of one outer iteration run."""

    method: str
    initial_eigenvalues: np.ndarray
    records: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self):
        return len(self.records)

    @property
    def changes(self):
        return [rec.change for rec in self.records]

    @property
    def eigenvalue_history(self):
        return [self.initial_eigenvalues] + [rec.eigenvalues for rec in self.records]

    @property
    def flagged(self):
        """Non-convergence or any iterative solve that missed its target."""
        return not self.converged or any(
            rep.flagged for rec in self.records for rep in rec.reports
        )


def project(sys, V, W):
    """Petrov-Galerkin reduction with ``(W^T V)^-1``-weighted formulas.

    Raises
    ------
    ProjectionError
        If ``cond(W^T V) > 1e12``.
    """
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    if V.shape != W.shape or V.shape[0] != sys.n:
        raise ValueError(f"V {V.shape} and W {W.shape} must both be {sys.n} x r")
    E = W.T @ V
    kappa = np.linalg.cond(E)
    if not np.isfinite(kappa) or kappa > PROJECTION_COND_LIMIT:
        raise ProjectionError(
            f"W^T V has condition {kappa:.2e}; re-orthonormalize the bases or change the shifts"
        )
    lu = spla.lu_factor(E)
    Ar = spla.lu_solve(lu, W.T @ sys.A @ V)
    Nr = spla.lu_solve(lu, W.T @ sys.N @ V)
    br = spla.lu_solve(lu, W.T @ sys.b)
    return ReducedSystem(Ar, Nr, br, sys.c @ V)


def _pad(Q, r, rng):
    n = Q.shape[0]
    extra = rng.standard_normal((n, r - Q.shape[1]))
    extra -= Q @ (Q.T @ extra)
    extra -= Q @ (Q.T @ extra)
    Qe, _ = np.linalg.qr(extra)
    return np.hstack([Q, Qe])


def orthonormal_basis(X, r=None, tol=None, rng=None, return_rank=False):
    """Real orthonormal basis for the span of ``[Re X, Im X]``.

    Parameters
    ----------
    X
        ``n x k`` array, possibly complex.
    r
        Number of columns to return (default ``k``). A numerically deficient
        span is padded with seeded random orthonormal columns, a richer one is
        truncated to the ``r`` leading pivoted directions.
    tol
        Relative rank tolerance on the pivoted-QR diagonal.
    rng
        Generator for the padding (default: seed 0).
    return_rank
        Also return the detected numerical rank.
    """
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    r = k if r is None else int(r)
    if not 1 <= r <= n:
        raise ValueError(f"cannot build {r} orthonormal columns in dimension {n}")
    Y = np.hstack([X.real, X.imag]) if np.iscomplexobj(X) else X.astype(float)
    Q, R, _ = spla.qr(Y, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        raise np.linalg.LinAlgError("basis matrix has numerical rank 0")
    tol = max(n, Y.shape[1]) * np.finfo(float).eps * 10 if tol is None else tol
    rank = int(np.sum(d > tol * d[0]))
    Q = Q[:, :min(rank, r)]
    if rank < r:
        warnings.warn(f"basis has numerical rank {rank} < {r}; padding with random directions",
                      RankDeficiencyWarning, stacklevel=2)
        Q = _pad(Q, r, np.random.default_rng(0) if rng is None else rng)
    return (Q, rank) if return_rank else Q


def eig_change(prev, curr):
    """Largest relative eigenvalue change after optimal pairing.

    The two multisets are matched by minimizing the total ``|λ - μ|``, so the
    result does not depend on eigenvalue order.
    """
    prev = np.asarray(prev, dtype=complex).ravel()
    curr = np.asarray(curr, dtype=complex).ravel()
    if prev.shape != curr.shape:
        raise ValueError(f"eigenvalue sets differ in size: {prev.size} vs {curr.size}")
    if prev.size == 0:
        return 0.0
    cost = np.abs(prev[:, None] - curr[None, :])
    rows, cols = linear_sum_assignment(cost)
    denom = np.maximum(np.abs(prev[rows]), np.finfo(float).tiny)
    return float(np.max(cost[rows, cols] / denom))


def _random_reduced(sys, r, rng):
    scale = float(np.median(np.abs(sys.eigenvalues)))
    scale = scale if scale > 0 else 1.0
    Ar = np.zeros((r, r))
    for i in range(0, r - 1, 2):
        a = -scale * rng.uniform(0.5, 1.5)
        w = scale * rng.uniform(0.1, 1.0)
        Ar[i:i + 2, i:i + 2] = [[a, w], [-w, a]]
    if r % 2:
        Ar[-1, -1] = -scale * rng.uniform(0.5, 1.5)
    Nr = rng.standard_normal((r, r))
    nn = np.linalg.norm(sys.N, 2)
    Nr *= 0.1 * nn / np.linalg.norm(Nr, 2) if nn > 0 else 0.0
    br = rng.standard_normal(r)
    cr = rng.standard_normal(r)
    return ReducedSystem(Ar, Nr, br / np.linalg.norm(br), cr / np.linalg.norm(cr))


def initial_guess(sys, cfg):
    """Starting reduced model for the fixed-point iteration."""
    if cfg.r > sys.n:
        raise ValueError(f"r = {cfg.r} exceeds the system dimension {sys.n}")
    if cfg.init == "coordinate":
        E = np.eye(sys.n)[:, :cfg.r]
        return project(sys, E, E)
    return _random_reduced(sys, cfg.r, np.random.default_rng(cfg.seed))


def _run(sys, cfg, method, solve_pair):
    rng = np.random.default_rng([cfg.seed, 1])
    red = initial_guess(sys, cfg)
    prev = np.linalg.eigvals(red.A)
    trace = MorTrace(method, prev)
    recycle = {}
    for _ in range(cfg.max_outer_iterations):
        spec = spectral_data(red.A, red.N, red.b, red.c, warn=False)
        factors = {}
        Vs, Ws, reps_v, reps_w = solve_pair(spec, factors, recycle)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RankDeficiencyWarning)
            Vr = orthonormal_basis(sum(Vs), cfg.r, rng=rng)
            Wr = orthonormal_basis(sum(Ws), cfg.r, rng=rng)
        red = project(sys, Vr, Wr)
        eigs = np.linalg.eigvals(red.A)
        change = eig_change(prev, eigs)
        ortho = check_residual_orthogonality(Vs, Ws, [rp.residual for rp in reps_v],
                                        [rp.residual for rp in reps_w])
        trace.records.append(IterationRecord(
            eigenvalues=eigs, change=change, reports=reps_v + reps_w, orthogonality=ortho,
            stable=bool(np.all(eigs.real < 0)), notes=[str(w.message) for w in caught],
        ))
        prev = eigs
        if change < cfg.tol:
            trace.converged = True
            break
    return red, trace


def birka(sys, cfg):
    """Bilinear IRKA with the coupled Kronecker solves.

    Returns the last reduced model and the trace; non-convergence within
    ``cfg.max_outer_iterations`` is reported through ``trace.converged``.
    """
    def pair(spec, factors, recycle):
        V, rv = sylvester.solve_birka_coupled(sys, spec, "primal", cfg.backend, factors, recycle)
        W, rw = sylvester.solve_birka_coupled(sys, spec, "dual", cfg.backend, factors, recycle)
        return [V], [W], [rv], [rw]

    return _run(sys, cfg, "birka", pair)


def tbirka(sys, cfg):
    """Truncated BIRKA with ``cfg.M`` cascaded, column-decoupled solves."""
    def pair(spec, factors, recycle):
        Vs, rv = sylvester.solve_tbirka_cascade(sys, spec, cfg.M, "primal", cfg.backend,
                                                factors, recycle)
        Ws, rw = sylvester.solve_tbirka_cascade(sys, spec, cfg.M, "dual", cfg.backend,
                                                factors, recycle)
        return Vs, Ws, rv, rw

    return _run(sys, cfg, "tbirka", pair)


class InterpolationResiduals(NamedTuple):
    value_residual: float
    derivative_residual: float


def _interpolation_sums(sys, spec, M):
    """Per-order weighted sums ``sum_l phi_l H_k(-λ_l)`` and their derivative sums.

    The residue-weighted sum over all index tuples factorizes into the
    cascade recursion, so no ``r^k`` enumeration is needed.
    """
    n, r = sys.n, spec.r
    lus = [lu_checked(-lam * np.eye(n) - sys.A, f"shifted matrix at -({lam:.6g})")
           for lam in spec.lam]

    def solve(B):
        return np.column_stack([spla.lu_solve(lus[l], B[:, l]) for l in range(r)])

    values, derivs = [], []
    X = solve(np.outer(sys.b, spec.b2).astype(complex))
    D = -solve(X)
    for k in range(1, M + 1):
        if k > 1:
            X_new = solve(sys.N @ X @ spec.N2)
            D = solve(sys.N @ D @ spec.N2) - solve(X_new)
            X = X_new
        values.append(complex(sys.c @ X @ spec.c2))
        derivs.append(complex(sys.c @ D @ spec.c2))
    return np.array(values), np.array(derivs)


def interpolation_sides(sys, red, M):
    """Both sides of the value and derivative conditions, per order ``k``.

    Returns ``(full_values, reduced_values, full_derivs, reduced_derivs)``,
    each of length ``M``.
    """
    spec = spectral_data(red.A, red.N, red.b, red.c, warn=False)
    fv, fd = _interpolation_sums(sys, spec, M)
    rv, rd = _interpolation_sums(red, spec, M)
    return fv, rv, fd, rd


def _rel(a, b):
    scale = max(abs(a), abs(b))
    return float(abs(a - b) / scale) if scale > 0 else 0.0


def verify_truncated_interpolation(sys, red, M):
    """Relative mismatch of the truncated interpolation conditions.

    The residues ``phi`` and poles ``λ`` come from the eigen-decomposition of
    the reduced model. The value condition compares
    ``sum_{k<=M} sum_l phi_l H_k(-λ_l)`` between the full and reduced
    systems; the derivative condition does the same with
    ``sum_j d/ds_j H_k``, each derivative inserting one extra resolvent
    factor ``-K(s_j)^-1`` at slot ``j``.
    """
    if int(M) != M or M < 1:
        raise ValueError(f"M must be an integer >= 1, got {M}")
    fv, rv, fd, rd = interpolation_sides(sys, red, M)
    return InterpolationResiduals(_rel(fv.sum(), rv.sum()), _rel(fd.sum(), rd.sum()))
