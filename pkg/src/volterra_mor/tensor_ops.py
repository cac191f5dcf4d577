"""Kronecker products and the column-stacking ``vec`` operator.

All ordering is column-major: ``vec`` stacks columns, so that
``vec(A @ X @ B) == kron(B.T, A) @ vec(X)``.
"""

import numpy as np


def kron(P, Q):
    """Kronecker product with block ``(i, j)`` equal to ``P[i, j] * Q``."""
    P = np.atleast_2d(np.asarray(P))
    Q = np.atleast_2d(np.asarray(Q))
    return np.kron(P, Q)


def vec(P):
    """Stack the columns of ``P`` into one vector."""
    P = np.asarray(P)
    if P.ndim == 1:
        return P.copy()
    if P.ndim != 2:
        raise ValueError(f"vec expects a matrix, got an array of ndim {P.ndim}")
    return P.reshape(-1, order="F")


def unvec(v, m, n):
    """Inverse of :func:`vec` for an ``m x n`` matrix."""
    v = np.asarray(v)
    if v.ndim != 1 or v.size != m * n:
        raise ValueError(
            f"cannot reshape vector of length {v.size} into a {m}x{n} matrix "
            f"(needs length {m * n})"
        )
    return v.reshape((m, n), order="F")


def kron_sum(A, B):
    """``A ⊗ I + I ⊗ B`` for square ``A`` and ``B``."""
    A = np.atleast_2d(np.asarray(A))
    B = np.atleast_2d(np.asarray(B))
    return np.kron(A, np.eye(B.shape[0])) + np.kron(np.eye(A.shape[0]), B)
