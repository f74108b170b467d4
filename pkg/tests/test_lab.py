import json

import numpy as np
import pytest

from jqlab import lab
from jqlab.errors import DomainError
from jqlab.io import read_csv


def test_simultaneous_z():
    assert lab.simultaneous_z(1) == pytest.approx(1.959964, abs=1e-5)
    assert lab.simultaneous_z(10) > lab.simultaneous_z(2) > lab.simultaneous_z(1)


def test_group_bootstrap_matches_iid_se_and_is_deterministic():
    x = np.random.default_rng(0).standard_normal((20_000, 3))
    se = lab.group_bootstrap(x, seed=4)
    assert np.allclose(se, 1.0 / np.sqrt(20_000), rtol=0.15)
    assert np.array_equal(se, lab.group_bootstrap(x, seed=4))
    assert not np.array_equal(se, lab.group_bootstrap(x, seed=5))


def test_group_bootstrap_constant_column_has_zero_se():
    x = np.column_stack([np.ones(500), np.arange(500.0)])
    se = lab.group_bootstrap(x, seed=0, n_boot=200)
    assert se[0] == 0.0 and se[1] > 0.0


def test_run_pools_deterministic(est_model):
    model, ex = est_model
    a = lab.run_pools(model, ex, 0.5, 8, 3000, seed=1)
    b = lab.run_pools(model, ex, 0.5, 8, 3000, seed=1)
    for k in a[0]:
        assert np.array_equal(a[0][k], b[0][k])
    assert np.array_equal(a[3], b[3])


def test_q0_plugin_report(est_model):
    model, ex = est_model
    rep = lab.measure_bias_variance(model, ex, "plugin", 0.0, 4, 5000, seed=2, n_boot=300)
    assert rep.flags["bias_ci_contains_zero"]
    assert rep.flags["degenerate_fraction_ok"]
    assert rep.passed
    assert np.all(rep.predicted == 0.0)
    assert len(rep.rows()) == rep.mean.size
    assert rep.summary()["active_coordinates"] == int(rep.active.sum())


def test_ci_coverage_smoke(est_model):
    """Per-coordinate 95% intervals of an unbiased estimator cover 0 most of the time."""
    model, ex = est_model
    hits = total = 0
    for seed in range(30):
        rep = lab.measure_bias_variance(model, ex, "plugin", 0.0, 4, 2000, seed=seed, n_boot=200)
        act = rep.active
        hits += int(np.sum(np.abs(rep.bias[act]) <= rep.ci[act]))
        total += int(act.sum())
    assert 0.85 <= hits / total <= 1.0


def test_biased_estimator_is_detected(est_model):
    model, ex = est_model
    rep = lab.measure_bias_variance(model, ex, "plugin", 1.0, 2, 20_000, seed=0, n_boot=300)
    assert np.max(np.abs(rep.bias) / np.where(rep.se > 0, rep.se, np.inf)) > 5


def test_unknown_estimator(est_model):
    model, ex = est_model
    with pytest.raises(DomainError):
        lab.measure_bias_variance(model, ex, "reinforce", 0.0, 4, 100, seed=0)


def test_compare_estimators(est_model):
    model, ex = est_model
    rep = lab.compare_estimators(model, ex, 0.5, 8, 8, 5000, seed=3, tower_pools=50, n_boot=300)
    assert rep.flags["tower_identity"]
    assert rep.flags["rloo_mean_matches_plugin"]
    assert rep.flags["paft_mean_matches_plugin"]
    assert 0.0 <= rep.var_order_fraction <= 1.0
    json.dumps(rep.summary())


def test_variance_order_fraction():
    assert lab.variance_order_fraction(np.array([1.0, 2.0, 0.0]), np.array([2.0, 1.0, 0.0])) == 0.5
    assert lab.variance_order_fraction(np.zeros(3), np.zeros(3)) == 1.0


def test_ess_profile(est_model):
    model, ex = est_model
    prof = lab.ess_profile(model, ex, 16, 2000, seed=0)
    assert 1.0 <= prof.median <= 16.0
    qs = prof.quantiles()
    assert qs[0.1] <= qs[0.5] <= qs[0.9]


def _synthetic_report(M, a, b, se, predicted_a):
    d = a.size
    return lab.BiasVarReport(
        "plugin", 0.5, M, 1000, mean=a / M + b / M**2, var=np.ones(d), exact=np.zeros(d),
        predicted=predicted_a / M, se=se, n_degenerate=0,
    )


def test_fit_bias_law_recovers_coefficients():
    a = np.array([0.3, -0.2, 0.0])
    b = np.array([1.0, 0.5, 0.0])
    se = np.array([1e-4, 1e-4, 0.0])
    reps = [_synthetic_report(M, a, b, se, a) for M in (16, 32, 64)]
    fit = lab.fit_bias_law(reps)
    assert np.allclose(fit.a, a, atol=1e-9)
    assert np.allclose(fit.b, b, atol=1e-7)
    assert fit.active.tolist() == [True, True, False]
    assert fit.matches()
    wrong = lab.fit_bias_law([_synthetic_report(M, a, b, se, a * 1.5) for M in (16, 32, 64)])
    assert not wrong.matches()


def test_fit_bias_law_rejects_bad_grids():
    a = np.zeros(2)
    with pytest.raises(DomainError):
        lab.fit_bias_law([_synthetic_report(16, a, a, a, a)])
    with pytest.raises(DomainError):
        lab.fit_bias_law([_synthetic_report(16, a, a, a, a)] * 2)


def test_report_csv(tmp_path, est_model):
    model, ex = est_model
    rep = lab.measure_bias_variance(model, ex, "rloo", 0.0, 4, 500, seed=0, n_boot=50)
    lab.write_report_csv(rep, tmp_path / "r.csv", comment="run_id=x")
    comments, rows = read_csv(tmp_path / "r.csv")
    assert comments == ["run_id=x"]
    assert len(rows) == rep.mean.size
    assert float(rows[0]["mean"]) == rep.mean[0]
