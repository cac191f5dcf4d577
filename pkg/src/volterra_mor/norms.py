"""H2 and H-infinity norms of Volterra kernels.

Two independent routes to the H2 norm are provided. The quadrature route
integrates ``|H_k(iw_1, ..., iw_k)|^2`` over ``R^k`` after the substitution
``w = scale * tan(theta)`` with a composite midpoint rule in ``theta``. The
Gramian route evaluates the closed Kronecker-sum expression

    (c ⊗ c) Σ_j [L^-1 (N ⊗ N)]^j L^-1 (b ⊗ b),   L = -A ⊗ I - I ⊗ A,

whose ``j``-th term is ``|H_{j+1}|^2_{H2}``.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as spla
from scipy.optimize import minimize_scalar

from . import kernels
from .systems import UnstableSystemError
from .tensor_ops import kron

#: Largest state dimension for which the ``n^2 x n^2`` Kronecker matrix is assembled.
MAX_GRAMIAN_DIM = 60
_CHUNK = 20000


@dataclass(frozen=True)
class FrequencyGrid:
    """Tensor grid on ``R^axes`` built from the map ``w = scale * tan(theta)``.

    ``points`` midpoint nodes per axis are used for quadrature; the H-infinity
    search uses the ``points - 1`` interior lattice nodes, which include
    ``w = 0`` and are nested under doubling.
    """

    points: int = 64
    axes: int = 1
    scale: float = 1.0
    mapping: str = "tan"

    def __post_init__(self):
        if self.points < 16 or self.points % 2:
            raise ValueError(f"points per axis must be even and >= 16, got {self.points}")
        if self.axes < 1:
            raise ValueError("axes must be >= 1")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.mapping != "tan":
            raise ValueError(f"unsupported mapping {self.mapping!r}")

    @classmethod
    def for_system(cls, sys, points=64, axes=1):
        """Grid whose scale is the median eigenvalue modulus of ``sys.A``."""
        scale = float(np.median(np.abs(np.linalg.eigvals(np.asarray(sys.A)))))
        return cls(points=points, axes=axes, scale=scale if scale > 0 else 1.0)

    def with_axes(self, axes):
        return replace(self, axes=axes)

    def refined(self):
        return replace(self, points=2 * self.points)

    def nodes(self):
        """Midpoint nodes ``w`` and weights (Jacobian and ``1/2pi`` included)."""
        return _midpoint_nodes(self.points, self.scale)

    def lattice(self):
        """Interior lattice in ``theta``, returned as frequencies ``w``."""
        h = np.pi / self.points
        theta = -0.5 * np.pi + h * np.arange(1, self.points)
        return self.scale * np.tan(theta)


def _midpoint_nodes(points, scale):
    h = np.pi / points
    theta = -0.5 * np.pi + h * (np.arange(points) + 0.5)
    omega = scale * np.tan(theta)
    weights = scale * h / (2.0 * np.pi) / np.cos(theta) ** 2
    return omega, weights


@dataclass(frozen=True)
class NormResult:
    """A norm value with its provenance.

    ``terms`` holds the squared per-term contributions when the method
    produces a breakdown (Gramian route: one entry per kernel order).
    """

    value: float
    method: str
    estimated_error: float = 0.0
    terms: tuple = ()

    def partial(self, count):
        """Norm of the sum of the first ``count`` squared terms."""
        return float(np.sqrt(max(0.0, float(np.sum(self.terms[:count])))))

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class HinfEstimate:
    """Grid lower bound on an H-infinity norm with its refinement trace."""

    value: float
    argmax: tuple
    trace: tuple = field(default=())
    lower_bound: bool = True

    def __float__(self):
        return float(self.value)


def _resolvents(A, omega):
    n = A.shape[0]
    K = 1j * omega[:, None, None] * np.eye(n) - A[None, :, :]
    return np.linalg.solve(K, np.broadcast_to(np.eye(n), K.shape))


def _quadrature_energy(A, N, b, c, k, points, scale):
    omega, w = _midpoint_nodes(points, scale)
    kinv = _resolvents(np.asarray(A, dtype=float), omega)
    ck = np.einsum("i,pij->pj", np.asarray(c, dtype=complex), kinv)
    return kernels.chain_energy(kinv, ck, N, b, w, k)


def h2_subsystem_quadrature(sys, k, grid=None):
    """Quadrature value of ``|H_k|_{H2}`` with a half-resolution error estimate."""
    sys.require_stable("the H2 norm")
    if k < 1:
        raise ValueError("kernel order must be >= 1")
    if k > kernels.MAX_QUADRATURE_ORDER:
        raise ValueError(
            f"quadrature is limited to order {kernels.MAX_QUADRATURE_ORDER}; "
            "use h2_truncated_gramian for higher orders"
        )
    grid = FrequencyGrid.for_system(sys, axes=k) if grid is None else grid
    fine = _quadrature_energy(sys.A, sys.N, sys.b, sys.c, k, grid.points, grid.scale)
    coarse = _quadrature_energy(sys.A, sys.N, sys.b, sys.c, k, grid.points // 2, grid.scale)
    value = np.sqrt(max(fine, 0.0))
    return NormResult(
        value=float(value),
        method="quadrature",
        estimated_error=float(abs(value - np.sqrt(max(coarse, 0.0)))),
        terms=(fine,),
    )


def _tensor_points(axis_points, k):
    mesh = np.meshgrid(*([axis_points] * k), indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def h2_function_quadrature(evaluator, k, grid):
    """Squared H2 norm ``(1/2pi)^k ∫ |G(iw)|_F^2 dw`` of a vectorised evaluator.

    ``evaluator`` receives an ``(npts, k)`` array of points ``s = i w`` and
    returns an array whose leading axis runs over the points.
    """
    omega, w = grid.nodes()
    pts = _tensor_points(omega, k)
    wts = np.prod(_tensor_points(w, k), axis=1)
    total = 0.0
    for start in range(0, pts.shape[0], _CHUNK):
        vals = np.asarray(evaluator(1j * pts[start : start + _CHUNK]))
        sq = np.abs(vals.reshape(vals.shape[0], -1)) ** 2
        total += float(wts[start : start + _CHUNK] @ sq.sum(axis=1))
    return total


class _KronSumSolver:
    """Factored ``-A ⊗ I - I ⊗ A`` for repeated solves."""

    def __init__(self, A):
        n = A.shape[0]
        if n > MAX_GRAMIAN_DIM:
            raise ValueError(
                f"Kronecker assembly limited to dimension {MAX_GRAMIAN_DIM}, got {n}"
            )
        eye = np.eye(n)
        self.matrix = -kron(A, eye) - kron(eye, A)
        self.lu = spla.lu_factor(self.matrix, check_finite=False)
        if np.min(np.abs(np.diag(self.lu[0]))) == 0.0:
            raise np.linalg.LinAlgError("Kronecker-sum matrix is singular")

    def solve(self, rhs):
        return spla.lu_solve(self.lu, rhs)


def _gramian_terms(A, N, b, c, count):
    solver = _KronSumSolver(A)
    NN = kron(N, N)
    cc = kron(c[None, :], c[None, :]).reshape(-1)
    x = solver.solve(kron(b[:, None], b[:, None]).reshape(-1))
    terms = [float(cc @ x)]
    for _ in range(1, count):
        x = solver.solve(NN @ x)
        terms.append(float(cc @ x))
    return tuple(terms)


def h2_truncated_gramian(ts):
    """``|ζ^M|_{H2}`` from the Kronecker-sum series with ``M`` terms."""
    sys = ts.system
    sys.require_stable("the H2 norm")
    terms = _gramian_terms(sys.A, sys.N, sys.b, sys.c, ts.M)
    return NormResult(
        value=float(np.sqrt(max(0.0, sum(terms)))),
        method="gramian",
        terms=terms,
    )


def _augmented(sys1, sys2):
    A = spla.block_diag(sys1.A, sys2.A)
    N = spla.block_diag(sys1.N, sys2.N)
    b = np.concatenate([sys1.b, sys2.b])
    c = np.concatenate([sys1.c, -sys2.c])
    return A, N, b, c


def h2_error_norm(ts, F):
    """Error-system norm between ``ζ^M`` and its ``A + F`` perturbation.

    The augmented ``2n`` system ``diag(A, A+F)``, ``diag(N, N)``, ``[b; b]``,
    ``[c, -c]`` is summed over ``j = 0..M``, so
    ``terms`` has ``M + 1`` entries and term ``j`` is the error of kernel
    order ``j + 1``. ``result.partial(M)`` gives the ``M``-kernel value.
    """
    sys = ts.system
    F = np.asarray(F, dtype=float)
    sys.require_stable("the H2 error norm")
    pert = sys.replace(A=sys.A + F)
    if not pert.stable:
        raise UnstableSystemError(
            "A + F is unstable (spectral abscissa "
            f"{pert.spectral_abscissa:.3e}); the perturbation is too large"
        )
    terms = _gramian_terms(*_augmented(sys, pert), ts.M + 1)
    return NormResult(
        value=float(np.sqrt(max(0.0, sum(terms)))),
        method="gramian",
        terms=terms,
    )


def h2_distance(sys1, sys2, M):
    """``|ζ_1^M - ζ_2^M|_{H2}`` for two systems of any dimensions (``M`` kernels)."""
    sys1.require_stable("the H2 distance")
    sys2.require_stable("the H2 distance")
    terms = _gramian_terms(*_augmented(sys1, sys2), M)
    return NormResult(
        value=float(np.sqrt(max(0.0, sum(terms)))),
        method="gramian",
        terms=terms,
    )


# ---------------------------------------------------------------------------
# H-infinity
# ---------------------------------------------------------------------------


def _spectral_norms(vals):
    vals = np.asarray(vals)
    if vals.ndim == 1:
        return np.abs(vals)
    if vals.ndim == 2:
        return np.linalg.norm(vals, axis=1)
    return np.linalg.norm(vals, 2, axis=(1, 2))


def _max_on(evaluator, theta_pts, scale):
    best, arg = -np.inf, None
    for start in range(0, theta_pts.shape[0], _CHUNK):
        chunk = theta_pts[start : start + _CHUNK]
        norms = _spectral_norms(evaluator(1j * scale * np.tan(chunk)))
        i = int(np.argmax(norms))
        if norms[i] > best:
            best, arg = float(norms[i]), chunk[i].copy()
    return best, arg


def h_infinity_estimate(evaluator, k, grid, refine=4):
    """Lower bound on ``max_w |G(iw_1, ..., iw_k)|_2`` by grid search.

    A coarse search over the interior lattice is followed by ``refine``
    rounds of local ``5^k`` searches around the incumbent, each halving the
    spacing. The returned value is the largest norm seen, so it can only
    grow with more rounds.
    """
    h = np.pi / grid.points
    theta = -0.5 * np.pi + h * np.arange(1, grid.points)
    best, arg = _max_on(evaluator, _tensor_points(theta, k), grid.scale)
    trace = [best]
    offsets = _tensor_points(np.arange(-2, 3, dtype=float), k)
    lim = 0.5 * np.pi * (1.0 - 1e-12)
    for _ in range(refine):
        h *= 0.5
        local = np.clip(arg[None, :] + h * offsets, -lim, lim)
        cand, carg = _max_on(evaluator, local, grid.scale)
        if cand > best:
            best, arg = cand, carg
        trace.append(best)
    omega = tuple(float(x) for x in grid.scale * np.tan(arg))
    return HinfEstimate(value=best, argmax=omega, trace=tuple(trace))


def resolvent_evaluator(A):
    """Batched ``(sI - A)^-1``."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]

    def evaluate(points):
        s = np.asarray(points)[:, 0]
        K = s[:, None, None] * np.eye(n) - A[None]
        return np.linalg.solve(K, np.broadcast_to(np.eye(n), K.shape))

    return evaluate


def subsystem_evaluator(sys, k):
    """Batched ``H_k`` at an ``(npts, k)`` array of points."""
    A, N = sys.A, sys.N
    n = sys.n

    def evaluate(points):
        points = np.asarray(points)
        eye = np.eye(n)
        x = np.broadcast_to(sys.b.astype(complex), (points.shape[0], n))[..., None]
        for j in range(k):
            if j:
                x = N @ x
            K = points[:, j, None, None] * eye - A[None]
            x = np.linalg.solve(K, x)
        return (sys.c @ x)[:, 0]

    return evaluate


def resolvent_hinf(A, points=256, refine=8):
    """``max_w |(iw I - A)^-1|_2`` by grid search plus a bounded 1-D polish."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    scale = float(np.median(np.abs(np.linalg.eigvals(A)))) or 1.0
    est = h_infinity_estimate(resolvent_evaluator(A), 1, FrequencyGrid(points, 1, scale), refine)

    def neg_smin(theta):
        s = 1j * scale * np.tan(theta)
        return np.linalg.svd(s * np.eye(n) - A, compute_uv=False)[-1]

    theta0 = np.arctan(est.argmax[0] / scale)
    h = np.pi / points
    lo, hi = max(theta0 - h, -0.5 * np.pi + 1e-9), min(theta0 + h, 0.5 * np.pi - 1e-9)
    res = minimize_scalar(neg_smin, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    polished = 1.0 / res.fun if res.fun > 0 else np.inf
    return float(max(est.value, polished))


def resolvent_h2_squared(A, left=None, right=None):
    """``|L (sI - A)^-1 R|^2_{H2}`` from the Lyapunov equation ``A P + P A^T + R R^T = 0``.

    ``left`` and ``right`` default to the identity; pass ``c[None, :]`` or
    ``b[:, None]`` for the row and column resolvent factors.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    R = np.eye(n) if right is None else np.asarray(right, dtype=float).reshape(n, -1)
    L = np.eye(n) if left is None else np.asarray(left, dtype=float).reshape(-1, n)
    if np.max(np.linalg.eigvals(A).real) >= 0:
        raise UnstableSystemError("resolvent H2 norm needs a stable A")
    P = spla.solve_continuous_lyapunov(A, -R @ R.T)
    return float(np.trace(L @ P @ L.T))
