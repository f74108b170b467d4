import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jqlab import _kernels
from jqlab.errors import DegeneratePoolError, DomainError, ParticleDegeneracyError
from jqlab.estimators import (
    exact_local_grad,
    exact_plugin_mean,
    garl_plugin,
    garl_rloo,
    paft,
    paft_conditional_mean,
    pool_from_indices,
    predicted_bias,
    resample_indices,
    rloo_centered_weights,
    sample_prior,
)


def _pool(est_model, M=8, seed=0):
    model, ex = est_model
    return sample_prior(model, ex, M, seed)


def test_pool_bookkeeping(est_model):
    pool = _pool(est_model, M=6, seed=3)
    assert pool.M == 6 and pool.seed == 3
    assert 1.0 <= pool.ess <= 6.0
    out = garl_plugin(pool, 0.5)
    assert out.gradient.seed == 3 and out.gradient.M == 6
    assert np.array_equal(out.values[pool.param_index], out.local)


def test_q1_plugin_is_self_normalized(est_model):
    pool = _pool(est_model, seed=1)
    w = np.exp(pool.log_w)
    expect = -(w @ pool.s_joint) / w.sum()
    assert np.allclose(garl_plugin(pool, 1.0).local, expect, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("q", [0.0, 0.4, 1.0])
def test_rloo_weights(est_model, q):
    pool = _pool(est_model, M=5, seed=2)
    c = rloo_centered_weights(pool, q)
    w = np.exp(pool.log_w)
    wbar = w.mean()
    for m in range(5):
        others = np.delete(w, m).mean()
        assert c[m] == pytest.approx(w[m] / wbar**q - others ** (1 - q), rel=1e-10, abs=1e-14)
    if q == 1.0:
        assert abs(c.sum()) < 1e-12


def test_rloo_needs_two(est_model):
    with pytest.raises(DomainError):
        garl_rloo(_pool(est_model, M=1), 0.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.0, 0.25, 0.5, 1.0]))
def test_tower_identity(est_model, seed, q):
    pool = _pool(est_model, M=7, seed=seed)
    a = paft_conditional_mean(pool, q).local
    b = garl_plugin(pool, q).local
    assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.max(np.abs(b)))


def test_paft_average_converges_to_conditional_mean(est_model):
    pool = _pool(est_model, M=8, seed=4)
    rng = np.random.default_rng(0)
    draws = np.mean([paft(pool, 0.5, K=8, rng=rng).local for _ in range(4000)], axis=0)
    target = paft_conditional_mean(pool, 0.5).local
    assert np.allclose(draws, target, atol=0.02 * np.max(np.abs(target)))


def test_resample_frequencies():
    log_w = np.log(np.array([0.1, 0.6, 0.3]))
    r = resample_indices(log_w, 200_000, np.random.default_rng(0))
    assert np.allclose(np.bincount(r, minlength=3) / r.size, [0.1, 0.6, 0.3], atol=5e-3)


def test_normalize(est_model):
    out = garl_plugin(_pool(est_model), 0.5)
    n = out.normalize()
    assert np.allclose(n.values, out.values * 8**-0.5)
    assert n.normalize() is n
    assert garl_plugin(_pool(est_model), 0.5, normalized=True).normalized


def test_q0_plugin_is_exactly_unbiased(est_model):
    model, ex = est_model
    for M in (1, 3, 5):
        assert np.allclose(exact_plugin_mean(model, ex, 0.0, M), exact_local_grad(model, ex, 0.0), atol=1e-14)


def test_finite_m_bias_shrinks_like_predicted(est_model):
    model, ex = est_model
    truth = exact_local_grad(model, ex, 0.5)
    gaps = []
    for M in (32, 128):
        bias = exact_plugin_mean(model, ex, 0.5, M) - truth
        pred = predicted_bias(model, ex, 0.5, M).values[model.enumerate(ex).param_index]
        gaps.append(np.max(np.abs(bias - pred)) / np.max(np.abs(pred)))
    # second-order residual: the relative gap decays like 1/M once M is past the sign change near M = 8
    assert gaps[1] < gaps[0] / 2
    assert gaps[1] < 0.01


def test_predicted_bias_zero_at_q0(est_model):
    model, ex = est_model
    assert np.all(predicted_bias(model, ex, 0.0, 10).values == 0.0)


def _degenerate(pool):
    return dataclasses.replace(pool, log_w=np.full(pool.M, -np.inf))


def test_degenerate_pool(est_model):
    pool = _degenerate(_pool(est_model, M=4))
    assert pool.degenerate
    assert np.all(garl_plugin(pool, 0.0).local == 0.0)
    assert np.all(garl_rloo(pool, 0.0).local == 0.0)
    with pytest.raises(DegeneratePoolError):
        garl_plugin(pool, 0.5)
    with pytest.raises(ParticleDegeneracyError):
        paft(pool, 0.0, rng=0)
    with pytest.raises(ParticleDegeneracyError):
        resample_indices(pool.log_w, 3, 0)


@pytest.mark.parametrize("q", [0.0, 0.3, 1.0])
def test_estimators_match_batched_kernel(est_model, q):
    model, ex = est_model
    en = model.enumerate(ex)
    rng = np.random.default_rng(5)
    idx = model.latent_index(model.sample_latents(ex.x, 6 * 9, rng)).reshape(6, 9)
    u = rng.random((6, 9))
    plugin, rloo, paft_k, ess, deg = _kernels.pool_estimates(idx, en.log_lik, en.s_prior, en.s_lik, q, u)
    assert not deg.any()
    for r in range(6):
        pool = pool_from_indices(en, idx[r])
        assert np.allclose(plugin[r], garl_plugin(pool, q).local, rtol=1e-10, atol=1e-14)
        assert np.allclose(rloo[r], garl_rloo(pool, q).local, rtol=1e-10, atol=1e-14)
        assert ess[r] == pytest.approx(pool.ess, rel=1e-10)
    assert np.all(np.isfinite(paft_k))
