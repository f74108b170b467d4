import math

import numpy as np
import pytest

from jqlab import dynamics as dyn
from jqlab.errors import DomainError, UnreachableTargetError
from jqlab.models import SigmoidModel


def closed_form_time(q, p0, delta):
    """Antiderivatives of 1 / (p**(2-q) (1-p)**2) at q = 0 and q = 1."""
    if q == 0.0:
        F = lambda p: -1.0 / p + 1.0 / (1.0 - p) + 2.0 * math.log(p / (1.0 - p))
    else:
        F = lambda p: math.log(p / (1.0 - p)) + 1.0 / (1.0 - p)
    return F(delta) - F(p0)


@pytest.mark.parametrize("q", [0.0, 1.0])
@pytest.mark.parametrize("p0", [1e-2, 1e-5])
def test_sigmoid_flow_against_closed_form(q, p0):
    tr = dyn.integrate_sigmoid_flow(q, p0, 0.5, 1e12)
    exact = closed_form_time(q, p0, 0.5)
    assert tr.status == dyn.REACHED
    assert tr.crossing_time == pytest.approx(exact, rel=1e-6)
    assert dyn.exact_sigmoid_time(q, p0, 0.5) == pytest.approx(exact, rel=1e-9)


@pytest.mark.parametrize("q", [0.25, 0.5, 0.75])
def test_sigmoid_flow_against_quadrature(q):
    tr = dyn.integrate_sigmoid_flow(q, 1e-4, 0.5, 1e12, extra_levels=(0.1,))
    assert tr.crossing_time == pytest.approx(dyn.exact_sigmoid_time(q, 1e-4, 0.5), rel=1e-6)
    assert tr.crossings[0.1] == pytest.approx(dyn.exact_sigmoid_time(q, 1e-4, 0.1), rel=1e-6)


def test_trace_rates_follow_the_vector_field():
    tr = dyn.integrate_sigmoid_flow(0.5, 1e-3, 0.5, 1e6)
    rate = dyn.sigmoid_rate(0.5)
    assert np.allclose(tr.pdot, [rate(p) for p in tr.p], rtol=1e-12)
    rows = tr.rows()
    assert len(rows) == tr.t.size and math.isnan(rows[-1][3])
    assert np.all(np.diff(tr.p) > 0)


def test_budget_exhaustion():
    tr = dyn.integrate_sigmoid_flow(0.0, 1e-4, 0.5, 10.0)
    assert tr.status == dyn.EXHAUSTED
    assert tr.crossing_time is None
    assert tr.t[-1] == pytest.approx(10.0)


def test_lower_bound_is_below_the_time():
    for q in (0.0, 0.5, 1.0):
        assert dyn.lower_bound_time(q, 1e-4, 0.5) <= dyn.exact_sigmoid_time(q, 1e-4, 0.5)


def test_sigmoid_domain():
    with pytest.raises(DomainError):
        dyn.integrate_sigmoid_flow(0.5, 0.6, 0.5, 1e3)
    with pytest.raises(DomainError):
        dyn.integrate_sigmoid_flow(0.5, 0.1, 0.7, 1e3)


def test_fit_escape_exponent_on_closed_form():
    grid = [10.0**-k for k in range(3, 9)]
    slope, r2 = dyn.fit_escape_exponent(0.0, grid, [closed_form_time(0.0, p, 0.5) for p in grid])
    assert slope == pytest.approx(1.0, abs=1e-3) and r2 > 0.9999
    slope, r2 = dyn.fit_escape_exponent(1.0, grid, [closed_form_time(1.0, p, 0.5) for p in grid])
    assert slope == pytest.approx(1.0, abs=1e-3) and r2 > 0.9999
    with pytest.raises(DomainError):
        dyn.fit_escape_exponent(0.5, grid[:3], [1.0, 2.0, 3.0])
    with pytest.raises(DomainError):
        dyn.fit_escape_exponent(0.5, [1e-3, 2e-3, 3e-3, 4e-3], [1.0, 2.0, 3.0, 4.0])


def test_noise_equilibrium_closed_form():
    assert dyn.noise_equilibrium(1.0, 0.1) == pytest.approx(0.1, rel=1e-12)
    assert dyn.noise_equilibrium(0.5, 0.1) == pytest.approx(1.0 / 82.0, rel=1e-10)
    assert dyn.noise_equilibrium(0.0, 0.1) == 0.0
    pstar = dyn.noise_equilibrium(0.3, 0.2)
    assert abs(dyn.noise_rate(0.3, 0.2)(pstar)) < 1e-15


def test_noise_flow_against_quadrature():
    q, eps = 0.5, 0.1
    eta = dyn.noise_equilibrium(q, eps) / 10
    tr = dyn.integrate_noise_flow(q, eps, eta * 1e-3, eta, 1e15)
    assert tr.crossing_time == pytest.approx(dyn.noise_time_quadrature(q, eps, eta * 1e-3, eta), rel=1e-5)
    assert tr.equilibrium == pytest.approx(1.0 / 82.0)


def test_noise_flow_q0_decreases():
    tr = dyn.integrate_noise_flow(0.0, 0.1, 1e-3, 1e-2, 1e6)
    assert tr.crossing_time is None
    assert np.all(np.diff(tr.ptilde) <= 0)


def test_noise_flow_settles_at_equilibrium():
    tr = dyn.integrate_noise_flow(0.5, 0.1, 1e-3, 1e-3 * 0.5 + 0.5 / 82, 1e12)
    assert tr.status == dyn.REACHED
    star = 1.0 / 82.0
    settle = dyn.integrate_scalar(dyn.noise_rate(0.5, 0.1), 1e-3, [], 1e9, detect_equilibrium=True)
    assert settle.status == dyn.EQUILIBRIUM
    assert settle.p[-1] == pytest.approx(star, rel=1e-6)


def test_unreachable_contamination():
    with pytest.raises(UnreachableTargetError):
        dyn.integrate_noise_flow(0.5, 0.1, 1e-4, 0.02, 1e9)


def test_noise_rate_exponent():
    q, eps = 0.5, 0.1
    eta = dyn.noise_equilibrium(q, eps) / 10
    fit = dyn.noise_rate_exponent(q, eps, [eta * 10.0**-k for k in range(3, 8)], eta)
    assert fit.slope == pytest.approx(0.5, abs=0.05)
    assert fit.r2 > 0.999
    with pytest.raises(DomainError):
        dyn.noise_rate_exponent(0.0, eps, [1e-5, 1e-6, 1e-7, 1e-8], 1e-3)


def test_near_optimality():
    assert dyn.near_optimality_ratio(0.3, 0.3, 1e-2, 1e-6) == 1.0
    r = dyn.near_optimality_ratio(0.0, 1.0, 1e-3, 1e-6)
    assert abs(r - 1.0) < 5e-3
    # closer start, smaller deviation
    assert abs(dyn.near_optimality_ratio(0.0, 1.0, 1e-4, 1e-7) - 1) < abs(r - 1)
    with pytest.raises(DomainError):
        dyn.near_optimality_ratio(0.0, 1.0, 1e-6, 1e-3)


def test_model_flow_tracks_scalar_flow():
    theta0 = math.log(1e-2 / (1 - 1e-2))
    step = 1e-3
    tr = dyn.model_flow(SigmoidModel(theta0), None, 0.5, step, 10**6)
    assert tr.status == dyn.REACHED
    assert tr.crossing_time == pytest.approx(dyn.exact_sigmoid_time(0.5, 1e-2, 0.5), rel=1e-2)
    assert tr.final_model.success_prob() >= 0.5
