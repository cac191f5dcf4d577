"""SISO bilinear systems ``x' = A x + N x u + b u``, ``y = c x``."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as spla

from . import kernels

#: Largest admissible real part of an eigenvalue of a "stable" state matrix.
STABILITY_MARGIN = -1e-12
#: Shifted matrices ``sI - A`` with a larger 2-norm condition number are singular.
SINGULAR_COND = 1e14


class SingularShiftError(np.linalg.LinAlgError):
    """A shifted matrix ``s I - A`` is numerically singular."""


class UnstableSystemError(ValueError):
    """An operation needing a Hurwitz state matrix received an unstable one."""


class SimulationBlowUpError(FloatingPointError):
    """Time integration produced a non-finite state."""

    def __init__(self, message, time):
        super().__init__(message)
        self.time = time


def _as_real(name, value, ndim):
    arr = np.array(value, dtype=np.float64 if not np.iscomplexobj(value) else complex)
    if np.iscomplexobj(arr):
        if np.any(arr.imag != 0):
            raise ValueError(f"{name} must be real-valued")
        arr = arr.real.copy()
    if ndim == 1:
        arr = arr.reshape(-1)
    elif arr.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got ndim {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class BilinearSystem:
    """The quadruple ``(A, N, b, c)`` of a SISO bilinear system.

    ``b`` and ``c`` are stored as 1-D arrays; ``c`` is understood as a row.
    Arrays are copied on construction and made read-only.
    """

    A: np.ndarray
    N: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        A = _as_real("A", self.A, 2)
        N = _as_real("N", self.N, 2)
        b = _as_real("b", self.b, 1)
        c = _as_real("c", self.c, 1)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got shape {A.shape}")
        if N.shape != (n, n):
            raise ValueError(f"N has shape {N.shape}, expected {(n, n)}")
        if b.shape != (n,):
            raise ValueError(f"b has length {b.size}, expected {n}")
        if c.shape != (n,):
            raise ValueError(f"c has length {c.size}, expected {n}")
        for name, arr in zip("ANbc", (A, N, b, c)):
            object.__setattr__(self, name, arr)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def eigenvalues(self):
        return np.linalg.eigvals(self.A)

    @property
    def spectral_abscissa(self):
        return float(np.max(self.eigenvalues.real))

    @property
    def stable(self):
        """All eigenvalues of ``A`` lie strictly in the open left half plane."""
        return self.spectral_abscissa < STABILITY_MARGIN

    def require_stable(self, what="this operation"):
        if not self.stable:
            raise UnstableSystemError(
                f"{what} needs a stable A; spectral abscissa is {self.spectral_abscissa:.3e}"
            )

    def replace(self, **changes):
        fields = {"A": self.A, "N": self.N, "b": self.b, "c": self.c}
        fields.update(changes)
        return type(self)(**fields)

    def transfer(self, *points):
        return transfer_eval(self, points)

    def allclose(self, other, rtol=0.0, atol=0.0):
        return all(
            np.allclose(getattr(self, k), getattr(other, k), rtol=rtol, atol=atol)
            for k in "ANbc"
        )


@dataclass(frozen=True)
class TruncatedSeries:
    """The first ``M`` Volterra kernels ``H_1, ..., H_M`` of ``system``."""

    system: BilinearSystem
    M: int

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"truncation index must be an integer >= 1, got {self.M}")


@dataclass(frozen=True)
class PerturbedSystem:
    """``base`` with its state matrix replaced by ``A + F``."""

    base: BilinearSystem
    F: np.ndarray

    def __post_init__(self):
        F = _as_real("F", self.F, 2)
        if F.shape != self.base.A.shape:
            raise ValueError(f"F has shape {F.shape}, expected {self.base.A.shape}")
        object.__setattr__(self, "F", F)

    @property
    def effective(self):
        return self.base.replace(A=self.base.A + self.F)


def shifted_solve(A, s, rhs, label="s"):
    """Solve ``(s I - A) x = rhs``, refusing numerically singular shifts."""
    K = s * np.eye(A.shape[0]) - A
    if np.linalg.cond(K) > SINGULAR_COND:
        raise SingularShiftError(f"{label} = {s!r} makes (sI - A) singular")
    return spla.solve(K, rhs)


def _chain(A, N, b, c, points):
    points = list(points)
    if len(points) < 1:
        raise ValueError("need at least one frequency point")
    x = shifted_solve(A, points[0], b.astype(complex), label="s_1")
    for i, s in enumerate(points[1:], start=2):
        x = shifted_solve(A, s, N @ x, label=f"s_{i}")
    return complex(c @ x)


def transfer_eval(sys, points):
    """Evaluate ``H_k(s_1, ..., s_k) = c K(s_k)^-1 N ... N K(s_1)^-1 b``.

    ``K(s) = s I - A``; the chain is applied right to left by shifted solves.
    """
    return _chain(sys.A, sys.N, sys.b, sys.c, points)


def perturbed_transfer_eval(p, points):
    """:func:`transfer_eval` with the state matrix ``A + F``."""
    base = p.base
    return _chain(base.A + p.F, base.N, base.b, base.c, points)


def simulate(sys, u, t_grid, x0=None):
    """RK4 output trajectory of the bilinear system on a uniform time grid.

    Parameters
    ----------
    sys
        The system to integrate.
    u
        Either a callable ``u(t)`` or an array of input samples on ``t_grid``
        (midpoint values are then linearly interpolated).
    t_grid
        Uniform, increasing time grid.
    x0
        Initial state; zero by default.

    Returns
    -------
    y : ndarray
        Output ``c x(t)`` at every grid point.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise ValueError("t_grid needs at least two points")
    steps = np.diff(t)
    h = steps[0]
    if h <= 0 or not np.allclose(steps, h, rtol=1e-9, atol=0.0):
        raise ValueError("t_grid must be uniform with positive step")
    if callable(u):
        ug = np.array([u(ti) for ti in t], dtype=float)
        um = np.array([u(ti + 0.5 * h) for ti in t[:-1]], dtype=float)
    else:
        ug = np.asarray(u, dtype=float)
        if ug.shape != t.shape:
            raise ValueError(f"input samples have shape {ug.shape}, expected {t.shape}")
        um = 0.5 * (ug[:-1] + ug[1:])
    x0 = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float)
    if x0.shape != (sys.n,):
        raise ValueError(f"x0 has length {x0.size}, expected {sys.n}")
    y, bad = kernels.rk4_bilinear(sys.A, sys.N, sys.b, sys.c, ug, um, h, x0)
    if bad >= 0:
        raise SimulationBlowUpError(f"state became non-finite at t = {t[bad]:.6g}", t[bad])
    return y


def make_perturbation(n, target_norm, seed):
    """Seeded dense random matrix rescaled to spectral norm ``target_norm``."""
    if not target_norm > 0:
        raise ValueError(f"target_norm must be positive, got {target_norm}")
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((n, n))
    return F * (target_norm / np.linalg.norm(F, 2))


def demo_system(n, seed, resolvent_target=0.8, margin=0.25):
    """Seeded stable test system with a contractive resolvent.

    ``A`` is a scaled Gaussian matrix shifted left until
    ``|K^-1|_{H-inf} < resolvent_target``; ``N`` is then scaled so that
    ``|K^-1|_{H-inf} |N|_2 = margin``, which keeps the Volterra kernels
    decaying geometrically.
    """
    from .norms import resolvent_hinf

    if n < 2:
        raise ValueError(f"demo systems need n >= 2, got {n}")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) / np.sqrt(n)
    A -= (np.max(np.linalg.eigvals(A).real) + 1.0) * np.eye(n)
    h = resolvent_hinf(A)
    while h >= resolvent_target:
        A -= 0.25 * np.eye(n)
        h = resolvent_hinf(A)
    N = rng.standard_normal((n, n))
    N *= margin / (h * np.linalg.norm(N, 2))
    b = rng.standard_normal(n)
    c = rng.standard_normal(n)
    return BilinearSystem(A, N, b, c)
