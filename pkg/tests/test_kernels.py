import os
import subprocess
import sys

import numpy as np
import pytest

from jqlab import _kernels

needs_numba = pytest.mark.skipif(_kernels.numba_impl is None, reason="numba not importable")


def _inputs(R=50, M=7, n=12, d=5, seed=0, dead=()):
    rng = np.random.default_rng(seed)
    log_w = np.log(rng.random(n)) * 3
    for i in dead:
        log_w[i] = -np.inf
    idx = rng.integers(0, n, size=(R, M))
    return idx, log_w, rng.standard_normal((n, d)), rng.standard_normal((n, d)), rng.random((R, M))


@needs_numba
@pytest.mark.parametrize("q", [0.0, 0.5, 1.0])
def test_pool_backends_agree(q):
    args = _inputs(seed=int(q * 10))
    a = _kernels.numpy_impl.pool_estimates(*args[:4], q, args[4], True, True)
    b = _kernels.numba_impl.pool_estimates(*args[:4], q, args[4], True, True)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-13)


@needs_numba
@pytest.mark.parametrize("q", [0.0, 0.5])
def test_degenerate_pools_agree(q):
    idx, log_w, sp, sl, u = _inputs(R=4, M=3, n=3, dead=(0, 1, 2))
    outs = [impl.pool_estimates(idx, log_w, sp, sl, q, u, True, True) for impl in (_kernels.numpy_impl, _kernels.numba_impl)]
    for plugin, rloo, paft, ess, deg in outs:
        assert deg.all()
        assert np.isnan(paft).all()
        if q == 0.0:
            assert (plugin == 0).all() and (rloo == 0).all()
        else:
            assert np.isnan(plugin).all() and np.isnan(rloo).all()


@needs_numba
def test_chain_backends_agree():
    rng = np.random.default_rng(1)
    L, C, V = 4, 3, 5
    cdf = np.cumsum(rng.dirichlet(np.ones(V), size=(L, C, V + 1)), axis=-1)
    cond = rng.integers(0, C, 1000)
    u = rng.random((1000, L))
    a = _kernels.numpy_impl.sample_chains(cdf, cond, u)
    b = _kernels.numba_impl.sample_chains(cdf, cond, u)
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() < V


def _backend_in_subprocess(value):
    env = dict(os.environ, JQLAB_BACKEND=value)
    return subprocess.run(
        [sys.executable, "-c", "from jqlab import _kernels; print(_kernels.BACKEND)"],
        env=env, capture_output=True, text=True,
    )


def test_env_flag_selects_numpy():
    res = _backend_in_subprocess("numpy")
    assert res.returncode == 0 and res.stdout.strip() == "numpy"


def test_env_flag_rejects_unknown():
    res = _backend_in_subprocess("cuda")
    assert res.returncode != 0
    assert "JQLAB_BACKEND" in res.stderr
