"""The numba kernels and their numpy twins agree."""

import os
import subprocess
import sys

import numpy as np
import pytest

from volterra_mor import _accel, kernels
from volterra_mor.norms import _midpoint_nodes, _resolvents

from conftest import random_stable

needs_numba = pytest.mark.skipif(not _accel.NUMBA_AVAILABLE, reason="numba not installed")


def _chain_inputs(n, points, seed):
    sys = random_stable(n, seed, n_scale=0.5)
    omega, w = _midpoint_nodes(points, 1.0)
    kinv = _resolvents(sys.A, omega)
    ck = np.einsum("i,pij->pj", sys.c.astype(complex), kinv)
    return kinv, ck, sys.N, sys.b, w


def _both(monkeypatch, func, *args):
    monkeypatch.setattr(_accel, "USE_NUMBA", True)
    fast = func(*args)
    monkeypatch.setattr(_accel, "USE_NUMBA", False)
    slow = func(*args)
    return fast, slow


@needs_numba
@pytest.mark.parametrize("k", [1, 2, 3])
def test_chain_energy_parity(monkeypatch, k):
    args = _chain_inputs(4, 20, k)
    fast, slow = _both(monkeypatch, kernels.chain_energy, *args, k)
    assert fast == pytest.approx(slow, rel=1e-12)


def test_chain_energy_brute_force():
    kinv, ck, N, b, w = _chain_inputs(3, 16, 5)
    total = 0.0
    for p in range(w.size):
        for q in range(w.size):
            h = ck[q] @ N @ kinv[p] @ b
            total += w[p] * w[q] * abs(h) ** 2
    assert kernels.chain_energy(kinv, ck, N, b, w, 2) == pytest.approx(total, rel=1e-12)


def test_chain_energy_order_limit():
    with pytest.raises(ValueError, match="1..3"):
        kernels.chain_energy(*_chain_inputs(2, 16, 0), 4)


@needs_numba
def test_rk4_parity(monkeypatch):
    sys = random_stable(5, 3, n_scale=0.5)
    t = np.linspace(0, 5, 201)
    u = np.sin(t)
    um = np.sin(t[:-1] + 0.5 * (t[1] - t[0]))
    (yf, bf), (ys, bs) = _both(monkeypatch, kernels.rk4_bilinear, sys.A, sys.N, sys.b,
                               sys.c, u, um, t[1] - t[0], np.zeros(5))
    assert bf == bs == -1
    np.testing.assert_allclose(yf, ys, rtol=1e-12, atol=1e-14)


def test_env_flag_selects_numpy():
    env = dict(os.environ, VOLTERRA_MOR_NUMBA="0")
    out = subprocess.run(
        [sys.executable, "-c", "from volterra_mor import _accel; print(_accel.USE_NUMBA)"],
        env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"


@needs_numba
def test_configure_threads_clamps():
    assert _accel.configure_threads(1) == 1
    assert _accel.configure_threads(10**6) >= 1
