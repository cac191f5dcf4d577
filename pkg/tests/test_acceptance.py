"""Acceptance criteria 1 to 9 at their stated tolerances and runtime budgets.

Each test records one ``criterion N: PASS|FAIL`` line, printed in the pytest
terminal summary. Run standalone with ``python3 tests/test_acceptance.py``.
"""

import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_stable
from volterra_mor import (
    BilinearSystem,
    FrequencyGrid,
    MorConfig,
    SolveBackend,
    TruncatedSeries,
    bicg,
    bicg_deflated,
    demo_system,
    h2_subsystem_quadrature,
    h2_truncated_gramian,
    kron,
    make_perturbation,
    tbirka,
    unvec,
    vec,
    verify_truncated_interpolation,
)
from volterra_mor import mor, stability
from volterra_mor.cli import main
from volterra_mor.sylvester import cascade_kronecker_oracle, solve_tbirka_cascade, spectral_data


class Criterion:
    """Context manager timing a criterion and recording its verdict line."""

    def __init__(self, number, budget):
        self.number = number
        self.budget = budget
        self.details = []

    def note(self, text):
        self.details.append(text)

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        ok = exc_type is None and elapsed < self.budget
        detail = "; ".join(self.details)
        if exc_type is not None:
            detail = f"{detail}; {exc_type.__name__}: {exc}".lstrip("; ")
        ACCEPTANCE_LINES[self.number] = (
            f"criterion {self.number}: {'PASS' if ok else 'FAIL'} "
            f"({elapsed:.2f}s of {self.budget:g}s) {detail}"
        )
        if exc_type is None and elapsed >= self.budget:
            raise AssertionError(f"criterion {self.number} took {elapsed:.1f}s, budget {self.budget}s")
        return False


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_criterion_1_kronecker_identities():
    with Criterion(1, 1.0) as c:
        rng = np.random.default_rng(1)
        worst_vec = worst_mixed = 0.0
        for _ in range(50):
            m, p, q, s = rng.integers(1, 6, size=4)
            A = rng.standard_normal((m, p))
            X = rng.standard_normal((p, q))
            B = rng.standard_normal((q, s))
            worst_vec = max(worst_vec, _rel(kron(B.T, A) @ vec(X), vec(A @ X @ B)))
            assert np.allclose(unvec(vec(X), p, q), X, rtol=0, atol=0)
            C = rng.standard_normal((p, rng.integers(1, 6)))
            D = rng.standard_normal((s, rng.integers(1, 6)))
            worst_mixed = max(worst_mixed, _rel(kron(A, B) @ kron(C, D), kron(A @ C, B @ D)))
        c.note(f"max vec error {worst_vec:.1e}, max mixed-product error {worst_mixed:.1e}")
        assert worst_vec <= 1e-12
        assert worst_mixed <= 1e-12


def test_criterion_2_norm_oracles():
    with Criterion(2, 120.0) as c:
        worst = 0.0
        for seed in range(10):
            n = 2 + seed % 4
            M = 1 + seed % 3
            sys = demo_system(n, seed)
            gram = h2_truncated_gramian(TruncatedSeries(sys, M))
            for k in range(1, M + 1):
                quad = h2_subsystem_quadrature(sys, k).value ** 2
                ref = gram.terms[k - 1]
                worst = max(worst, abs(quad - ref) / ref)
        scalar = BilinearSystem([[-1.0]], [[0.0]], [1.0], [1.0])
        h1 = h2_subsystem_quadrature(scalar, 1, FrequencyGrid(points=256)).value
        c.note(f"max relative gap {worst:.2e}; scalar |H1| = {h1:.8f}")
        assert worst <= 5e-3
        assert abs(h1 - 1 / np.sqrt(2)) <= 1e-4


def test_criterion_3_cascade_vs_kronecker():
    with Criterion(3, 30.0) as c:
        worst = 0.0
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            n = int(rng.integers(2, 5))
            r = int(rng.integers(1, min(n, 3) + 1))
            M = int(rng.integers(1, 4))
            sys = random_stable(n, seed, n_scale=0.3)
            red = mor._random_reduced(sys, r, rng)
            spec = spectral_data(red.A, red.N, red.b, red.c, warn=False)
            for side in ("primal", "dual"):
                Vs, _ = solve_tbirka_cascade(sys, spec, M, side)
                ref = cascade_kronecker_oracle(sys, spec, M, side)
                for got, want in zip(Vs, ref):
                    worst = max(worst, _rel(got, want))
        c.note(f"max relative mismatch {worst:.1e}")
        assert worst <= 1e-9


FIXED_POINT_SEEDS = (0, 2, 3, 4)


def test_criterion_4_fixed_point_interpolation():
    with Criterion(4, 120.0) as c:
        residuals = []
        for seed in FIXED_POINT_SEEDS:
            sys = demo_system(8, seed)
            red, trace = tbirka(sys, MorConfig(r=2, M=3, tol=1e-10, seed=seed))
            assert trace.converged, f"seed {seed} did not converge"
            residuals.append(verify_truncated_interpolation(sys, red, 3).value_residual)
        sys = demo_system(8, FIXED_POINT_SEEDS[0])
        control = mor._random_reduced(sys, 2, np.random.default_rng(99))
        neg = verify_truncated_interpolation(sys, control, 3).value_residual
        c.note(f"converged value residuals max {max(residuals):.1e}; negative control {neg:.2e}")
        assert len(residuals) >= 3
        assert max(residuals) <= 1e-6
        assert neg >= 1e-3


SWEEP_CASES = ((4, 11, 2), (5, 12, 3), (6, 13, 2))


def test_criterion_5_second_condition_scaling():
    with Criterion(5, 300.0) as c:
        scales = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2]
        slopes = []
        for n, seed, M in SWEEP_CASES:
            sys = demo_system(n, seed)
            D = make_perturbation(n, 1.0, seed + 1)
            hyp = stability.birka_hypothesis_check(sys, scales[-1] * D)
            assert hyp.perturbation_hypotheses
            res = stability.scaling_sweep(sys, M, D, scales)
            assert not res.dropped
            slopes.append(res.slope)
            slopes.extend(res.subsystem_slopes)
            assert 0.9 <= res.slope <= 1.1
            for s in res.subsystem_slopes:
                assert 0.9 <= s <= 1.1
        c.note(f"slopes in [{min(slopes):.4f}, {max(slopes):.4f}]")


def test_criterion_6_kernel_error_bound():
    with Criterion(6, 300.0) as c:
        ratios = []
        zero_max = 0.0
        for i in range(20):
            M = 1 + i % 2
            n = 2 + i % 4
            sys = demo_system(n, 200 + i)
            F = make_perturbation(n, 10.0 ** -(1 + i % 3), 300 + i)
            hyp = stability.birka_hypothesis_check(sys, F)
            assert hyp.perturbation_hypotheses
            res = stability.kernel_error_bound_check(sys, F, M)
            ratios.append(res.lhs / res.rhs)
            assert res.lhs <= res.rhs * 1.05, f"instance {i}: {res.lhs} > {res.rhs}"
            pts = 1j * np.random.default_rng(i).standard_normal((25, M)) * 3
            U0 = stability.compute_U_batch(sys, np.zeros((n, n)), M, pts)
            zero_max = max(zero_max, float(np.max(np.abs(U0))))
        c.note(f"max lhs/rhs {max(ratios):.3e}; max |U(F=0)| {zero_max:.1e}")
        assert zero_max <= 1e-12


def test_criterion_7_first_condition():
    with Criterion(7, 120.0) as c:
        sys = demo_system(8, 7)
        cfg = MorConfig(r=2, M=3, tol=1e-10, seed=0,
                        backend=SolveBackend("direct", max_iterations=1000))
        table = stability.first_condition_experiment(sys, cfg, [1e-4, 1e-8, 1e-12])
        assert table.reference_converged
        rows = sorted(table.rows, key=lambda r: -r.tolerance)
        dist = [r.eig_distance for r in rows]
        c.note("eig distances " + ", ".join(f"{d:.1e}" for d in dist))
        assert len(rows) == 3
        assert table.monotone
        assert dist[-1] <= 1e-6
        for r in rows:
            for key in ("metric_b", "metric_c", "summed_b", "summed_c"):
                assert np.isfinite(getattr(r, key))


def test_criterion_8_solver_contracts():
    with Criterion(8, 30.0) as c:
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(5, 51))
            A = np.eye(n) * 3 + rng.standard_normal((n, n)) / np.sqrt(n)
            assert np.linalg.cond(A) < 1e3
            rhs = rng.standard_normal(n)
            x, rep = bicg(A, None, rhs, tol=1e-10)
            worst = max(worst, _rel(x, np.linalg.solve(A, rhs)))
            assert rep.converged
        rng = np.random.default_rng(7)
        A = np.eye(30) * 2 + rng.standard_normal((30, 30)) / 6
        rhs = rng.standard_normal(30)
        _, plain = bicg(A, None, rhs, tol=1e-10, record_iterates=True)
        _, defl, _ = bicg_deflated(A, None, rhs, tol=1e-10, record_iterates=True)
        assert defl.iterations == plain.iterations
        assert len(defl.iterates) == len(plain.iterates)
        drift = max(np.max(np.abs(a - b)) for a, b in zip(plain.iterates, defl.iterates))
        c.note(f"max relative error vs direct {worst:.1e}; p=0 iterate drift {drift:.1e}")
        assert worst <= 1e-8
        assert drift == 0.0


CLI_COMMANDS = {
    "reduce": ["reduce", "--demo", "--r", "2", "--M", "2"],
    "h2norm": ["h2norm", "--demo", "--M", "2", "--points", "32"],
    "sweep": ["sweep", "--demo", "--M", "2", "--scales", "1e-5 1e-4 1e-3 1e-2"],
    "first-condition": ["first-condition", "--demo", "--M", "2",
                        "--tolerances", "1e-4 1e-8"],
    "hypo-check": ["hypo-check", "--demo"],
    "generate-demo": ["generate-demo", "--n", "6"],
}


def _run_twice(tmp_path, name, argv):
    cfg = tmp_path / f"{name}.cfg"
    cfg.write_text("seed = 3\n")
    outs = []
    for run in ("a", "b"):
        out = tmp_path / name / run
        assert main(argv + ["--config", str(cfg), "-o", str(out)]) == 0
        outs.append(out)
    return outs


def test_criterion_9_cli_determinism(tmp_path, capsys):
    with Criterion(9, 120.0) as c:
        compared = 0
        for name, argv in CLI_COMMANDS.items():
            a, b = _run_twice(tmp_path, name, argv)
            files = sorted(p.name for p in a.iterdir())
            assert files == sorted(p.name for p in b.iterdir())
            for f in files:
                assert (a / f).read_bytes() == (b / f).read_bytes(), f"{name}: {f} differs"
                compared += f.endswith(".csv")
        red = tmp_path / "reduce" / "a"
        for run in ("a", "b"):
            out = tmp_path / "verify" / run
            assert main(["verify-interp", "--demo", "--M", "2", "--reduced-dir", str(red),
                         "-o", str(out)]) == 0
        va, vb = (tmp_path / "verify" / r / "interpolation.csv" for r in ("a", "b"))
        assert va.read_bytes() == vb.read_bytes()
        compared += 1
        capsys.readouterr()
        c.note(f"{compared} CSV files byte-identical across two runs")


if __name__ == "__main__":
    raise SystemExit(pytest.main([str(Path(__file__)), "-v"]))
