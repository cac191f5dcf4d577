import warnings

import numpy as np
import pytest

from volterra_mor import SolveBackend, solve_birka_coupled, solve_tbirka_cascade, spectral_data
from volterra_mor import mor, sylvester
from volterra_mor.sylvester import NonDiagonalizableError, cascade_kronecker_oracle, lu_checked
from volterra_mor.systems import SingularShiftError
from volterra_mor.tensor_ops import kron, unvec, vec

from conftest import random_stable


def instance(n=5, r=3, seed=0, n_scale=0.3):
    sys = random_stable(n, seed, n_scale=n_scale)
    red = mor._random_reduced(sys, r, np.random.default_rng(seed + 50))
    red = red.replace(N=0.3 * np.random.default_rng(seed).standard_normal((r, r)))
    return sys, red, spectral_data(red.A, red.N, red.b, red.c)


def test_spectral_data_relations():
    _, red, spec = instance()
    R, lam = spec.R, spec.lam
    Rinv = np.linalg.inv(R)
    np.testing.assert_allclose(R @ np.diag(lam) @ Rinv, red.A, atol=1e-12)
    np.testing.assert_allclose(R @ spec.b2, red.b, atol=1e-12)
    np.testing.assert_allclose(spec.c2, red.c @ R, atol=1e-12)
    np.testing.assert_allclose(R @ spec.N2.T @ Rinv, red.N, atol=1e-12)
    assert spec.r == 3


def _original_coordinates_solution(sys, red, side):
    # A X + X Ar^T + N X Nr^T + b br^T = 0 (primal) and its transpose (dual).
    n, r = sys.n, red.r
    if side == "primal":
        A, N, Ar, Nr, u, v = sys.A, sys.N, red.A, red.N, sys.b, red.b
    else:
        A, N, Ar, Nr, u, v = sys.A.T, sys.N.T, red.A.T, red.N.T, sys.c, red.c
    L = kron(np.eye(r), A) + kron(Ar, np.eye(n)) + kron(Nr, N)
    return unvec(np.linalg.solve(L, -vec(np.outer(u, v))), n, r)


@pytest.mark.parametrize("side", ["primal", "dual"])
def test_coupled_solve_matches_sylvester_in_original_coordinates(side):
    sys, red, spec = instance(seed=1)
    X, rep = solve_birka_coupled(sys, spec, side)
    ref = _original_coordinates_solution(sys, red, side)
    got = X @ spec.R.T if side == "primal" else X @ np.linalg.inv(spec.R)
    np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-12)
    assert rep.converged and rep.final_relative_residual < 1e-12


def test_operator_and_matrix_agree():
    sys, _, spec = instance(seed=2)
    K = sylvester.birka_matrix(sys, spec)
    fwd, bwd = sylvester.birka_operator(sys, spec, "primal")
    v = np.random.default_rng(0).standard_normal(K.shape[0]) + 0j
    np.testing.assert_allclose(fwd(v), K @ v, atol=1e-12)
    np.testing.assert_allclose(bwd(v), K.T @ v, atol=1e-12)
    dfwd, dbwd = sylvester.birka_operator(sys, spec, "dual")
    np.testing.assert_allclose(dfwd(v), K.T @ v, atol=1e-12)


@pytest.mark.parametrize("kind", ["bicg", "bicg_deflated"])
@pytest.mark.parametrize("side", ["primal", "dual"])
def test_coupled_iterative_matches_direct(kind, side):
    sys, _, spec = instance(seed=3)
    X, _ = solve_birka_coupled(sys, spec, side)
    Y, rep = solve_birka_coupled(sys, spec, side, SolveBackend(kind, 1e-12), recycle={})
    np.testing.assert_allclose(Y, X, rtol=1e-9, atol=1e-10)
    assert rep.residual.shape == X.shape


def test_coupled_dual_reuses_factorization():
    sys, _, spec = instance(seed=4)
    factors = {}
    solve_birka_coupled(sys, spec, "primal", factors=factors)
    lu = factors["birka"]
    solve_birka_coupled(sys, spec, "dual", factors=factors)
    assert factors["birka"] is lu


@pytest.mark.parametrize("side", ["primal", "dual"])
def test_cascade_matches_dense_oracle(side):
    sys, _, spec = instance(n=4, r=3, seed=5)
    Vs, reps = solve_tbirka_cascade(sys, spec, 3, side)
    for got, want in zip(Vs, cascade_kronecker_oracle(sys, spec, 3, side)):
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-13)
    assert len(reps) == 3 and all(len(r.column_reports) == 3 for r in reps)


@pytest.mark.parametrize("side", ["primal", "dual"])
def test_cascade_sum_converges_to_coupled_solution(side):
    sys, _, spec = instance(seed=6, n_scale=0.2)
    X, _ = solve_birka_coupled(sys, spec, side)
    errs = [np.linalg.norm(sum(solve_tbirka_cascade(sys, spec, M, side)[0]) - X)
            for M in (1, 3, 6, 12)]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] <= 1e-10 * np.linalg.norm(X)


@pytest.mark.parametrize("kind", ["bicg", "bicg_deflated"])
def test_cascade_iterative_matches_direct(kind):
    sys, _, spec = instance(seed=7)
    Vs, _ = solve_tbirka_cascade(sys, spec, 3, "dual")
    Ys, reps = solve_tbirka_cascade(sys, spec, 3, "dual", SolveBackend(kind, 1e-12),
                                    recycle={})
    for a, b in zip(Ys, Vs):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-10)
    assert all(rep.converged for rep in reps)


def test_cascade_residuals_are_true_residuals():
    sys, _, spec = instance(seed=8)
    Vs, reps = solve_tbirka_cascade(sys, spec, 2, "primal", SolveBackend("bicg", 1e-6))
    B1 = np.outer(sys.b, spec.b2)
    R1 = B1 - (-sys.A @ Vs[0] - Vs[0] * spec.lam)
    np.testing.assert_allclose(reps[0].residual, R1, atol=1e-12)


def test_cascade_shift_factor_cache():
    sys, _, spec = instance(seed=9)
    factors = {}
    solve_tbirka_cascade(sys, spec, 2, "primal", factors=factors)
    keys = set(factors)
    solve_tbirka_cascade(sys, spec, 2, "dual", factors=factors)
    assert set(factors) == keys and len(keys) == spec.r


def test_non_diagonalizable_reduced_model():
    J = np.array([[-1.0, 1.0], [0.0, -1.0]])
    with pytest.raises(NonDiagonalizableError):
        spectral_data(J, np.zeros((2, 2)), np.ones(2), np.ones(2))


def test_unstable_reduced_model_warns():
    with pytest.warns(RuntimeWarning, match="unstable"):
        spectral_data(np.diag([1.0, -1.0]), np.zeros((2, 2)), np.ones(2), np.ones(2))


def test_singular_shift_detected():
    with pytest.raises(SingularShiftError):
        lu_checked(np.array([[1.0, 1.0], [1.0, 1.0]]), "K")
    sys = random_stable(3, 0)
    lam = np.linalg.eigvals(sys.A)
    spec = sylvester.ReducedSpectralData(-lam[:1], np.eye(1), np.ones(1), np.ones(1),
                                         np.zeros((1, 1)))
    with pytest.raises(SingularShiftError):
        solve_tbirka_cascade(sys, spec, 1)


@pytest.mark.parametrize("kwargs", [
    dict(kind="lu"), dict(tolerance=0.0), dict(max_iterations=0), dict(recycle_dim=-1)])
def test_backend_validation(kwargs):
    with pytest.raises(ValueError):
        SolveBackend(**kwargs)


def test_side_and_order_validation():
    sys, _, spec = instance()
    with pytest.raises(ValueError, match="side"):
        solve_birka_coupled(sys, spec, "left")
    with pytest.raises(ValueError, match="M must"):
        solve_tbirka_cascade(sys, spec, 0)
