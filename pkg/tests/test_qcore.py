import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jqlab.errors import ColdZeroError, DomainError
from jqlab.qcore import (
    categorical_objective,
    check_simplex,
    dataset_loss,
    dispersion_bound_check,
    escort_minimizer,
    loss_q,
    q_log,
)

qs = st.floats(0.0, 1.0)
probs = st.floats(1e-6, 1.0)


def test_endpoints():
    assert loss_q(0.25, 0.0) == pytest.approx(0.75)
    assert loss_q(0.25, 1.0) == pytest.approx(math.log(4.0))
    assert q_log(1.0, 0.3) == 0.0


def test_continuous_into_log_branch():
    u = 0.37
    for q in (1 - 1e-3, 1 - 1e-5, 1 - 1e-9):
        assert q_log(u, q) == pytest.approx(math.log(u), rel=2e-3)
    # the expm1 branch and the direct quotient agree where both are accurate
    q = 1 - 2e-4
    direct = (u ** (1 - q) - 1) / (1 - q)
    assert q_log(u, q) == pytest.approx(direct, rel=1e-9)


@given(probs, qs)
def test_loss_bounded_and_nonnegative(p, q):
    val = loss_q(p, q)
    assert val >= 0.0
    if q < 1.0:
        assert val <= 1.0 / (1.0 - q) + 1e-12


@given(probs, st.floats(0.0, 0.99), st.floats(0.0, 0.99))
def test_loss_monotone_in_q(p, q1, q2):
    # -log_q p grows with q for p in (0, 1]
    lo, hi = sorted((q1, q2))
    assert loss_q(p, lo) <= loss_q(p, hi) + 1e-12


def test_array_input():
    out = loss_q(np.array([0.5, 1.0]), 0.5)
    assert out.shape == (2,)
    assert out[1] == 0.0


def test_domain_errors():
    with pytest.raises(ColdZeroError):
        loss_q(0.0, 0.5)
    with pytest.raises(DomainError):
        loss_q(1.5, 0.5)
    with pytest.raises(DomainError):
        loss_q(0.5, 1.2)
    with pytest.raises(DomainError):
        loss_q(float("nan"), 0.5)
    with pytest.raises(DomainError):
        dataset_loss([], 0.5)


def test_simplex_checks():
    assert np.allclose(check_simplex([0.5, 0.5 + 5e-10]).sum(), 1.0)
    with pytest.raises(DomainError):
        check_simplex([0.8, 0.3])
    with pytest.raises(DomainError):
        check_simplex([1.0])
    with pytest.raises(DomainError):
        check_simplex([1.2, -0.2])


def test_escort_fixed_points():
    a = np.array([0.8, 0.2])
    assert np.allclose(escort_minimizer(a, 1.0), a)
    assert np.allclose(escort_minimizer(a, 0.5), np.array([0.64, 0.04]) / 0.68)
    assert np.array_equal(escort_minimizer([0.4, 0.4, 0.2], 0.0), [1.0, 0.0, 0.0])


def test_escort_small_q_does_not_underflow():
    th = escort_minimizer([0.6, 0.4], 1e-3)
    assert np.all(np.isfinite(th))
    assert th[0] == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.05, 1.0), min_size=2, max_size=5), st.floats(0.2, 1.0))
def test_escort_is_stationary_minimum(raw, q):
    a = np.array(raw) / np.sum(raw)
    th = escort_minimizer(a, q)
    base = categorical_objective(th, a, q)
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = rng.standard_normal(a.size)
        d -= d.mean()
        cand = th + 1e-3 * d / np.linalg.norm(d)
        if np.all(cand > 0):
            assert categorical_objective(cand / cand.sum(), a, q) >= base - 1e-12


@given(st.lists(probs, min_size=1, max_size=8), st.floats(0.05, 1.0))
def test_dispersion_gap_nonnegative(ps, q):
    lhs, rhs, gap = dispersion_bound_check(ps, q)
    assert gap >= -1e-12
    if len(set(ps)) == 1:
        assert abs(gap) < 1e-9


def test_dispersion_rejects_q0():
    with pytest.raises(DomainError):
        dispersion_bound_check([0.5], 0.0)
