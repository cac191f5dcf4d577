import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volterra_mor import RecycleSpace, bicg, bicg_deflated, check_residual_orthogonality
from volterra_mor.solvers import DeflationFallbackWarning


def well_conditioned(n, seed, shift=3.0, dtype=float):
    rng = np.random.default_rng(seed)
    A = shift * np.eye(n) + rng.standard_normal((n, n)) / np.sqrt(n)
    if dtype is complex:
        A = A + 1j * rng.standard_normal((n, n)) / np.sqrt(n)
    return A, rng.standard_normal(n)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 40))
def test_bicg_matches_direct(seed, n):
    A, b = well_conditioned(n, seed)
    x, rep = bicg(A, None, b, tol=1e-10)
    assert rep.converged and not rep.flagged
    np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-8, atol=1e-8)
    assert rep.final_relative_residual <= 1e-10
    assert rep.final_relative_residual == pytest.approx(
        np.linalg.norm(b - A @ x) / np.linalg.norm(b))


def test_bicg_finite_termination_on_diagonal():
    A = np.diag(np.arange(1.0, 6.0))
    x, rep = bicg(A, None, np.ones(5), tol=1e-12)
    assert rep.iterations <= 5
    np.testing.assert_allclose(x, 1 / np.arange(1.0, 6.0), rtol=1e-12)


def test_bicg_dual_solution():
    A, b = well_conditioned(25, 3)
    d = np.random.default_rng(9).standard_normal(25)
    x, xd, rep = bicg(A, None, b, tol=1e-11, shadow_rhs=d, return_dual=True)
    np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-9, atol=1e-10)
    np.testing.assert_allclose(xd, np.linalg.solve(A.T, d), rtol=1e-9, atol=1e-10)
    assert rep.dual_relative_residual <= 1e-10


def test_bicg_complex_matrix_free():
    A, b = well_conditioned(20, 4, dtype=complex)
    x, rep = bicg(lambda v: A @ v, lambda v: A.T @ v, b.astype(complex), tol=1e-10)
    np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-8, atol=1e-9)


def test_bicg_residual_orthogonal_to_shadow_space():
    A, b = well_conditioned(30, 5)
    _, rep = bicg(A, None, b, tol=1e-3)
    x, _ = bicg(A, None, b, tol=1e-3, maxit=4)
    r = b - A @ x
    K = np.column_stack([np.linalg.matrix_power(A.T, j) @ b for j in range(4)])
    Q, _ = np.linalg.qr(K)
    assert np.linalg.norm(Q.T @ r) <= 1e-8 * np.linalg.norm(r)


def test_bicg_exact_initial_guess():
    A, b = well_conditioned(10, 6)
    x, rep = bicg(A, None, b, x0=np.linalg.solve(A, b))
    assert rep.iterations == 0 and rep.converged


def test_bicg_zero_rhs():
    x, rep = bicg(np.eye(3) * 2, None, np.zeros(3))
    np.testing.assert_array_equal(x, 0)
    assert rep.converged


def test_bicg_breakdown_flagged():
    # p^T A p = 0 at the first step for this symmetric indefinite matrix.
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    x, rep = bicg(A, None, np.array([1.0, 0.0]), tol=1e-10)
    assert rep.breakdown_flag
    assert rep.flagged


def test_bicg_budget_exhausted_returns_best():
    A, b = well_conditioned(40, 7, shift=0.3)
    x, rep = bicg(A, None, b, tol=1e-12, maxit=3)
    assert not rep.converged
    assert rep.final_relative_residual == pytest.approx(
        np.linalg.norm(b - A @ x) / np.linalg.norm(b))
    assert rep.final_relative_residual == pytest.approx(min(rep.residual_history), rel=1e-8)


def test_bicg_argument_validation():
    with pytest.raises(ValueError, match="tol"):
        bicg(np.eye(2), None, np.ones(2), tol=0)
    with pytest.raises(ValueError, match="apply_transpose"):
        bicg(lambda v: v, None, np.ones(2))


def test_deflated_empty_space_is_plain_bicg():
    A, b = well_conditioned(30, 8)
    _, plain = bicg(A, None, b, tol=1e-10, record_iterates=True)
    x, defl, space = bicg_deflated(A, None, b, tol=1e-10, record_iterates=True)
    assert defl.iterations == plain.iterations
    for a, c in zip(plain.iterates, defl.iterates):
        np.testing.assert_array_equal(a, c)
    assert space.p == 0


def test_deflated_exact_space_needs_no_iterations():
    A, b = well_conditioned(20, 9)
    x_true = np.linalg.solve(A, b)
    y_true = np.linalg.solve(A.T, b)
    space = RecycleSpace(x_true[:, None], y_true[:, None])
    x, rep, _ = bicg_deflated(A, None, b, tol=1e-10, recycle=space)
    assert rep.iterations == 0
    np.testing.assert_allclose(x, x_true, rtol=1e-10)


def test_deflated_matches_direct_with_random_space():
    A, b = well_conditioned(30, 10)
    rng = np.random.default_rng(0)
    space = RecycleSpace(rng.standard_normal((30, 3)), rng.standard_normal((30, 3)))
    x, xd, rep, new = bicg_deflated(A, None, b, tol=1e-11, recycle=space, return_dual=True)
    np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-8, atol=1e-9)
    np.testing.assert_allclose(xd, np.linalg.solve(A.T, b), rtol=1e-8, atol=1e-9)
    assert new.p == 3


def test_recycling_saves_iterations_on_drifting_shifts():
    rng = np.random.default_rng(11)
    n = 60
    B = rng.standard_normal((n, n)) / np.sqrt(n)
    b = rng.standard_normal(n)
    plain = recycled = 0
    space = None
    for shift in np.linspace(2.0, 2.2, 6):
        A = B + shift * np.eye(n)
        plain += bicg(A, None, b, tol=1e-10)[1].iterations
        x, rep, space = bicg_deflated(A, None, b, tol=1e-10, recycle=space, keep=4)
        recycled += rep.iterations
        np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-8, atol=1e-9)
    assert recycled < plain


def test_rank_deficient_space_falls_back():
    A, b = well_conditioned(10, 12)
    u = np.ones((10, 1))
    space = RecycleSpace(np.hstack([u, u]), np.hstack([u, u]))
    with pytest.warns(DeflationFallbackWarning):
        x, rep, _ = bicg_deflated(A, None, b, recycle=space)
    np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-8)


def test_recycle_space_validation():
    with pytest.raises(ValueError):
        RecycleSpace(np.zeros((3, 2)), np.zeros((3, 1)))
    with pytest.raises(ValueError):
        RecycleSpace(np.zeros((2, 3)), np.zeros((2, 3)))


def test_orthogonality_metrics_extremes():
    W = np.eye(4)[:, :2]
    V = np.eye(4)[:, 2:]
    R_perp = np.eye(4)[:, 2:]
    m = check_residual_orthogonality([V], [W], [R_perp], [W])
    assert m.metric_b == 0.0 and m.metric_c == 0.0
    m = check_residual_orthogonality([V], [W], [W], [V])
    assert m.metric_b == pytest.approx(1 / np.sqrt(2)) and m.summed_c == pytest.approx(1 / np.sqrt(2))


def test_orthogonality_metrics_bounded():
    rng = np.random.default_rng(0)
    Vs = [rng.standard_normal((6, 2)) for _ in range(3)]
    Ws = [rng.standard_normal((6, 2)) for _ in range(3)]
    Rs = [rng.standard_normal((6, 2)) for _ in range(3)]
    m = check_residual_orthogonality(Vs, Ws, Rs, Rs)
    assert all(0.0 <= v <= 1.0 for v in m)
