"""Petrov-Galerkin Krylov solvers: BiCG and a deflation-projected BiCG.

Both solvers use the unconjugated bilinear form ``<x, y> = x^T y``, so the
dual recurrence runs with the plain transpose and the same step lengths as
the primal one. A single run therefore solves ``A x = b`` and
``A^T x_d = d`` together when the shadow right-hand side is ``d``, and the
primal residual is orthogonal (in that bilinear form) to the dual Krylov
space ``span{d, A^T d, ...}``.
"""

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

_EPS = np.finfo(float).eps
_MAX_REPLACEMENTS = 5


class DeflationFallbackWarning(UserWarning):
    """The recycle space was unusable and plain BiCG was run instead."""


@dataclass
class SolveReport:
    """Outcome of one iterative solve.

    ``final_relative_residual`` is always recomputed from the returned
    iterate, never taken from the recurrence.
    """

    iterations: int
    final_relative_residual: float
    residual_history: list = field(default_factory=list)
    breakdown_flag: bool = False
    converged: bool = False
    orthogonality_metric: float = 0.0
    dual_relative_residual: float = None
    iterates: list = None
    residual: np.ndarray = None
    column_reports: list = None

    @property
    def flagged(self):
        return self.breakdown_flag or not self.converged


@dataclass(frozen=True)
class RecycleSpace:
    """Primal and dual deflation bases, each ``n x p``."""

    U: np.ndarray
    U_dual: np.ndarray

    def __post_init__(self):
        if self.U.shape != self.U_dual.shape or self.U.ndim != 2:
            raise ValueError("recycle bases must be n x p matrices of equal shape")
        if self.U.shape[1] > self.U.shape[0]:
            raise ValueError("recycle dimension p cannot exceed n")

    @classmethod
    def empty(cls, n, dtype=complex):
        return cls(np.zeros((n, 0), dtype=dtype), np.zeros((n, 0), dtype=dtype))

    @property
    def p(self):
        return self.U.shape[1]


def _as_actions(apply, apply_transpose):
    if isinstance(apply, np.ndarray):
        mat = apply
        apply = mat.__matmul__
        if apply_transpose is None:
            apply_transpose = mat.T.__matmul__
    elif isinstance(apply_transpose, np.ndarray):
        apply_transpose = apply_transpose.__matmul__
    if apply_transpose is None:
        raise ValueError("apply_transpose is required for a matrix-free operator")
    return apply, apply_transpose


class _CoreResult(NamedTuple):
    x: np.ndarray
    x_dual: np.ndarray
    report: SolveReport
    directions: list
    dual_directions: list


def _bicg_core(apply, apply_t, rhs, tol, maxit, shadow, x0, x0_dual, check_dual,
               record_iterates, keep, bnorm=None, dnorm=None):
    dtype = np.result_type(rhs, shadow, x0 if x0 is not None else 0.0, float)
    rhs = np.asarray(rhs, dtype=dtype)
    shadow = np.asarray(shadow, dtype=dtype)
    n = rhs.shape[0]
    bnorm = np.linalg.norm(rhs) if bnorm is None else bnorm
    dnorm = np.linalg.norm(shadow) if dnorm is None else dnorm

    x = np.zeros(n, dtype=dtype) if x0 is None else np.array(x0, dtype=dtype)
    xd = np.zeros(n, dtype=dtype) if x0_dual is None else np.array(x0_dual, dtype=dtype)
    r = rhs - apply(x) if x0 is not None else rhs.copy()
    rd = shadow - apply_t(xd) if x0_dual is not None else shadow.copy()

    def rel(v, ref):
        return np.linalg.norm(v) / ref if ref > 0 else 0.0

    history = [rel(r, bnorm)]
    iterates = [] if record_iterates else None
    directions, dual_directions = [], []
    breakdown = False
    converged = history[0] <= tol and (not check_dual or rel(rd, dnorm) <= tol)
    best_res, best_x, best_xd = history[0], x.copy(), xd.copy()
    p, pd = r.copy(), rd.copy()
    rho = rd @ r
    it = 0
    replacements = 0
    while not converged and it < maxit:
        if abs(rho) <= _EPS * np.linalg.norm(rd) * np.linalg.norm(r):
            breakdown = True
            break
        q = apply(p)
        qd = apply_t(pd)
        sigma = pd @ q
        if abs(sigma) <= _EPS * np.linalg.norm(pd) * np.linalg.norm(q):
            breakdown = True
            break
        alpha = rho / sigma
        x = x + alpha * p
        xd = xd + alpha * pd
        r = r - alpha * q
        rd = rd - alpha * qd
        it += 1
        res = rel(r, bnorm)
        history.append(res)
        if record_iterates:
            iterates.append(x.copy())
        if keep:
            directions = (directions + [p])[-keep:]
            dual_directions = (dual_directions + [pd])[-keep:]
        if res <= best_res:
            best_res, best_x, best_xd = res, x.copy(), xd.copy()
        if res <= tol and (not check_dual or rel(rd, dnorm) <= tol):
            r_true = rhs - apply(x)
            rd_true = shadow - apply_t(xd)
            if rel(r_true, bnorm) <= tol and (not check_dual or rel(rd_true, dnorm) <= tol):
                converged = True
                break
            if replacements >= _MAX_REPLACEMENTS:
                break
            replacements += 1
            r, rd = r_true, rd_true
        rho_new = rd @ r
        beta = rho_new / rho
        p = r + beta * p
        pd = rd + beta * pd
        rho = rho_new

    if not converged:
        x, xd = best_x, best_xd
    report = SolveReport(
        iterations=it,
        final_relative_residual=float(rel(rhs - apply(x), bnorm)),
        residual_history=[float(h) for h in history],
        breakdown_flag=breakdown,
        converged=converged,
        dual_relative_residual=float(rel(shadow - apply_t(xd), dnorm)),
        iterates=iterates,
    )
    return _CoreResult(x, xd, report, directions, dual_directions)


def bicg(apply, apply_transpose, rhs, tol=1e-10, maxit=None, shadow_rhs=None, x0=None,
         x0_dual=None, return_dual=False, record_iterates=False):
    """Biconjugate gradients for ``A x = rhs``.

    Parameters
    ----------
    apply, apply_transpose
        Actions ``v -> A v`` and ``v -> A^T v``. A dense matrix may be passed
        as ``apply`` with ``apply_transpose=None``.
    rhs
        Right-hand side.
    tol
        Target relative residual ``|rhs - A x| / |rhs|``.
    maxit
        Iteration cap, ``10 n`` by default.
    shadow_rhs
        Start of the dual Krylov space (default ``rhs``). With
        ``return_dual=True`` this is the right-hand side of the dual system
        ``A^T x_d = shadow_rhs``, whose residual then also enters the stop test.
    x0, x0_dual
        Optional initial guesses.
    record_iterates
        Keep a copy of every iterate in ``report.iterates``.

    Returns
    -------
    x, report
        Or ``x, x_dual, report`` when ``return_dual`` is set. On breakdown or
        an exhausted budget the best iterate seen is returned with the report
        flagged.
    """
    apply, apply_transpose = _as_actions(apply, apply_transpose)
    rhs = np.asarray(rhs)
    if not 0 < tol < 1:
        raise ValueError(f"tol must lie in (0, 1), got {tol}")
    maxit = 10 * rhs.shape[0] if maxit is None else int(maxit)
    shadow = rhs if shadow_rhs is None else np.asarray(shadow_rhs)
    out = _bicg_core(apply, apply_transpose, rhs, tol, maxit, shadow, x0, x0_dual,
                     return_dual, record_iterates, keep=0)
    if return_dual:
        return out.x, out.x_dual, out.report
    return out.x, out.report


def _harvest(lead, directions, keep):
    cols = [v / np.linalg.norm(v) for v in [lead] + directions[::-1] if np.linalg.norm(v) > 0]
    if not cols or keep == 0:
        return np.zeros((lead.shape[0], 0), dtype=lead.dtype)
    Q, R = np.linalg.qr(np.stack(cols, axis=1))
    d = np.abs(np.diag(R))
    good = d > 1e-10 * d.max()
    return Q[:, good][:, :keep]


def bicg_deflated(apply, apply_transpose, rhs, tol=1e-10, maxit=None, recycle=None,
                  shadow_rhs=None, return_dual=False, record_iterates=False, keep=None):
    """BiCG on the oblique-deflated operator with a recycled subspace.

    With ``E = U_d^T A U``, the initial guess is ``U E^-1 U_d^T rhs`` and BiCG is
    run on ``P A`` with ``P = I - A U E^-1 U_d^T``; the two pieces are then
    recombined into a solution of the original system. An empty recycle
    space runs exactly the plain BiCG iteration.

    Returns ``x, report, updated_recycle`` (``x, x_dual, report,
    updated_recycle`` with ``return_dual``). The updated space holds the
    solution direction followed by the most recent search directions,
    ``keep`` columns in total (default: the current ``p``).
    """
    apply, apply_transpose = _as_actions(apply, apply_transpose)
    rhs = np.asarray(rhs)
    n = rhs.shape[0]
    if not 0 < tol < 1:
        raise ValueError(f"tol must lie in (0, 1), got {tol}")
    maxit = 10 * n if maxit is None else int(maxit)
    recycle = RecycleSpace.empty(n) if recycle is None else recycle
    keep = recycle.p if keep is None else int(keep)
    shadow = rhs if shadow_rhs is None else np.asarray(shadow_rhs)

    U, Ud = recycle.U, recycle.U_dual
    usable = recycle.p > 0
    if usable:
        AU = np.stack([apply(U[:, i]) for i in range(recycle.p)], axis=1)
        AtUd = np.stack([apply_transpose(Ud[:, i]) for i in range(recycle.p)], axis=1)
        E = Ud.T @ AU
        rank_ok = (np.linalg.matrix_rank(U) == recycle.p
                   and np.linalg.matrix_rank(Ud) == recycle.p)
        if not rank_ok or np.linalg.cond(E) > 1e12:
            warnings.warn("recycle space is rank deficient; falling back to plain BiCG",
                          DeflationFallbackWarning, stacklevel=2)
            usable = False

    if not usable:
        out = _bicg_core(apply, apply_transpose, rhs, tol, maxit, shadow, None, None,
                         return_dual, record_iterates, keep)
        x, xd, report = out.x, out.x_dual, out.report
    else:
        x0 = U @ np.linalg.solve(E, Ud.T @ rhs)
        xd0 = Ud @ np.linalg.solve(E.T, U.T @ shadow)

        def proj(v):
            return v - AU @ np.linalg.solve(E, Ud.T @ v)

        def proj_t(v):
            return v - Ud @ np.linalg.solve(E.T, AU.T @ v)

        def op(v):
            return proj(apply(v))

        def op_t(v):
            return apply_transpose(proj_t(v))

        dual_rhs = shadow - AtUd @ np.linalg.solve(E.T, U.T @ shadow)
        out = _bicg_core(op, op_t, proj(rhs), tol, maxit, dual_rhs, None, None,
                         return_dual, record_iterates, keep,
                         bnorm=np.linalg.norm(rhs), dnorm=np.linalg.norm(shadow))
        y, yd = out.x, out.x_dual
        x = x0 + y - U @ np.linalg.solve(E, AtUd.T @ y)
        xd = xd0 + yd - Ud @ np.linalg.solve(E.T, AU.T @ yd)
        report = out.report
        report.final_relative_residual = float(np.linalg.norm(rhs - apply(x)) / np.linalg.norm(rhs)) \
            if np.linalg.norm(rhs) > 0 else 0.0
        sn = np.linalg.norm(shadow)
        report.dual_relative_residual = float(
            np.linalg.norm(shadow - apply_transpose(xd)) / sn) if sn > 0 else 0.0
        if record_iterates:
            report.iterates = [x0 + v - U @ np.linalg.solve(E, AtUd.T @ v)
                               for v in report.iterates]

    updated = RecycleSpace(_harvest(x, out.directions, keep),
                           _harvest(xd, out.dual_directions, keep))
    if updated.U.shape != updated.U_dual.shape:
        k = min(updated.U.shape[1], updated.U_dual.shape[1])
        updated = RecycleSpace(updated.U[:, :k], updated.U_dual[:, :k])
    if return_dual:
        return x, xd, report, updated
    return x, report, updated


class OrthogonalityMetrics(NamedTuple):
    """Residual-orthogonality measurements for a cascade of solves.

    ``metric_b``/``metric_c`` take the worst individual residual;
    ``summed_b``/``summed_c`` test the summed residual instead.
    """

    metric_b: float
    metric_c: float
    summed_b: float
    summed_c: float


def _ortho_ratio(basis, resid):
    num = np.linalg.norm(basis.conj().T @ resid)
    den = np.linalg.norm(basis) * np.linalg.norm(resid)
    return float(num / (den + 1e-300))


def check_residual_orthogonality(V_list, W_list, primal_residuals, dual_residuals):
    """Measure how far ``sum_j W_j ⊥ R_bj`` and ``sum_j V_j ⊥ R_cj`` hold.

    Each metric is ``|S^H R|_F / (|S|_F |R|_F)``, which lies in ``[0, 1]``.
    """
    Vs = sum(np.asarray(v) for v in V_list)
    Ws = sum(np.asarray(w) for w in W_list)
    mb = max(_ortho_ratio(Ws, np.asarray(R)) for R in primal_residuals)
    mc = max(_ortho_ratio(Vs, np.asarray(R)) for R in dual_residuals)
    sb = _ortho_ratio(Ws, sum(np.asarray(R) for R in primal_residuals))
    sc = _ortho_ratio(Vs, sum(np.asarray(R) for R in dual_residuals))
    return OrthogonalityMetrics(mb, mc, sb, sc)
