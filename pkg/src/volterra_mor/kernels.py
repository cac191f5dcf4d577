"""Hot inner loops, each with a numba kernel and a pure-numpy twin.

The public wrappers dispatch on :data:`volterra_mor._accel.USE_NUMBA` at call
time, so flipping that attribute (or setting ``VOLTERRA_MOR_NUMBA=0`` before
import) switches every caller to the numpy path.
"""

import numpy as np

from . import _accel
from ._accel import njit, prange

MAX_QUADRATURE_ORDER = 3


# ---------------------------------------------------------------------------
# Weighted energy of a resolvent chain over a tensor grid
# ---------------------------------------------------------------------------


@njit(parallel=True)
def _chain_energy_nb(kinv, ck, nmat, b, w, k):
    P = w.shape[0]
    n = b.shape[0]
    partial = np.zeros(P)
    for p1 in prange(P):
        x1 = np.zeros(n, dtype=np.complex128)
        for i in range(n):
            acc = 0j
            for j in range(n):
                acc += kinv[p1, i, j] * b[j]
            x1[i] = acc
        if k == 1:
            h = 0j
            for i in range(n):
                h += ck[p1, i] * b[i]
            partial[p1] = w[p1] * (h.real * h.real + h.imag * h.imag)
            continue
        y1 = np.zeros(n, dtype=np.complex128)
        for i in range(n):
            acc = 0j
            for j in range(n):
                acc += nmat[i, j] * x1[j]
            y1[i] = acc
        total = 0.0
        if k == 2:
            for p2 in range(P):
                h = 0j
                for i in range(n):
                    h += ck[p2, i] * y1[i]
                total += w[p2] * (h.real * h.real + h.imag * h.imag)
        else:
            x2 = np.zeros(n, dtype=np.complex128)
            y2 = np.zeros(n, dtype=np.complex128)
            for p2 in range(P):
                for i in range(n):
                    acc = 0j
                    for j in range(n):
                        acc += kinv[p2, i, j] * y1[j]
                    x2[i] = acc
                for i in range(n):
                    acc = 0j
                    for j in range(n):
                        acc += nmat[i, j] * x2[j]
                    y2[i] = acc
                inner = 0.0
                for p3 in range(P):
                    h = 0j
                    for i in range(n):
                        h += ck[p3, i] * y2[i]
                    inner += w[p3] * (h.real * h.real + h.imag * h.imag)
                total += w[p2] * inner
        partial[p1] = w[p1] * total
    out = 0.0
    for p1 in range(P):
        out += partial[p1]
    return out


def _chain_energy_np(kinv, ck, nmat, b, w, k):
    if k == 1:
        h = ck @ b
        return float(np.sum(w * np.abs(h) ** 2))
    y1 = (kinv @ b) @ nmat.T
    if k == 2:
        h = y1 @ ck.T
        return float(w @ (np.abs(h) ** 2) @ w)
    x2 = np.einsum("qij,pj->pqi", kinv, y1)
    h = (x2 @ nmat.T) @ ck.T
    return float(np.einsum("a,b,c,abc->", w, w, w, np.abs(h) ** 2))


def chain_energy(kinv, ck, nmat, b, w, k):
    """Weighted sum of ``|c K_k N ... N K_1 b|^2`` over all grid tuples.

    Parameters
    ----------
    kinv
        Resolvents at the grid nodes, shape ``(P, n, n)``.
    ck
        Rows ``c @ kinv[p]``, shape ``(P, n)``.
    nmat
        Coupling matrix ``N``.
    b
        Input vector.
    w
        Per-axis quadrature weights, shape ``(P,)``.
    k
        Chain order, 1 to 3.
    """
    if not 1 <= k <= MAX_QUADRATURE_ORDER:
        raise ValueError(f"chain order must be in 1..{MAX_QUADRATURE_ORDER}, got {k}")
    kinv = np.ascontiguousarray(kinv, dtype=np.complex128)
    ck = np.ascontiguousarray(ck, dtype=np.complex128)
    nmat = np.ascontiguousarray(nmat, dtype=np.complex128)
    b = np.ascontiguousarray(b, dtype=np.complex128)
    w = np.ascontiguousarray(w, dtype=np.float64)
    if _accel.USE_NUMBA:
        return float(_chain_energy_nb(kinv, ck, nmat, b, w, int(k)))
    return _chain_energy_np(kinv, ck, nmat, b, w, int(k))


# ---------------------------------------------------------------------------
# Classical RK4 for x' = A x + N x u + b u
# ---------------------------------------------------------------------------


@njit
def _rk4_nb(A, N, b, c, u, umid, h, x0):
    T = u.shape[0]
    n = x0.shape[0]
    y = np.zeros(T)
    x = x0.copy()
    acc = 0.0
    for i in range(n):
        acc += c[i] * x[i]
    y[0] = acc
    k1 = np.zeros(n)
    k2 = np.zeros(n)
    k3 = np.zeros(n)
    k4 = np.zeros(n)
    tmp = np.zeros(n)
    for step in range(T - 1):
        for stage in range(4):
            if stage == 0:
                uu = u[step]
                for i in range(n):
                    tmp[i] = x[i]
            elif stage == 1:
                uu = umid[step]
                for i in range(n):
                    tmp[i] = x[i] + 0.5 * h * k1[i]
            elif stage == 2:
                uu = umid[step]
                for i in range(n):
                    tmp[i] = x[i] + 0.5 * h * k2[i]
            else:
                uu = u[step + 1]
                for i in range(n):
                    tmp[i] = x[i] + h * k3[i]
            for i in range(n):
                s = b[i] * uu
                for j in range(n):
                    s += (A[i, j] + uu * N[i, j]) * tmp[j]
                if stage == 0:
                    k1[i] = s
                elif stage == 1:
                    k2[i] = s
                elif stage == 2:
                    k3[i] = s
                else:
                    k4[i] = s
        finite = True
        for i in range(n):
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not np.isfinite(x[i]):
                finite = False
        if not finite:
            return y, step + 1
        acc = 0.0
        for i in range(n):
            acc += c[i] * x[i]
        y[step + 1] = acc
    return y, -1


def _rk4_np(A, N, b, c, u, umid, h, x0):
    T = u.shape[0]
    y = np.zeros(T)
    x = x0.copy()
    y[0] = c @ x

    def f(z, uu):
        return A @ z + uu * (N @ z) + b * uu

    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(T - 1):
            k1 = f(x, u[step])
            k2 = f(x + 0.5 * h * k1, umid[step])
            k3 = f(x + 0.5 * h * k2, umid[step])
            k4 = f(x + h * k3, u[step + 1])
            x = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                return y, step + 1
            y[step + 1] = c @ x
    return y, -1


def rk4_bilinear(A, N, b, c, u, umid, h, x0):
    """Integrate the bilinear state equation with fixed-step RK4.

    ``u`` holds the input at the grid points and ``umid`` at the step
    midpoints. Returns ``(y, bad)`` where ``bad`` is the first grid index
    with a non-finite state, or -1.
    """
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (A, N, b, c, u, umid)]
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    if _accel.USE_NUMBA:
        y, bad = _rk4_nb(*args, float(h), x0)
    else:
        y, bad = _rk4_np(*args, float(h), x0)
    return y, int(bad)
