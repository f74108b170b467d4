import dataclasses
import numpy as np
import pytest

from jqlab import trainer as tr
from jqlab.errors import ConfigError, DomainError
from jqlab.models import mean_marginal


@pytest.fixture(scope="module")
def cold_task():
    return tr.make_cold_task(1e-3, seed=0, n_examples=8)


@pytest.fixture(scope="module")
def warm_task():
    return tr.make_warm_task(0.3, seed=0, n_examples=8)


def test_parse_nested_equals_dotted():
    a, ta, _ = tr.parse_config("q: 0.5\neval:\n  k: 4\n  every: 2\ntask:\n  p0: 0.001\n")
    b, tb, _ = tr.parse_config("q: 0.5\neval.k: 4\neval.every: 2\ntask.p0: 0.001\n")
    assert a == b and ta == tb == {"p0": 0.001}
    assert a.eval_k == 4 and a.eval_every == 2


@pytest.mark.parametrize(
    "text",
    [
        "qq: 1\n",
        "method: grpo\nq: 0.5\n",
        "method: sgd\n",
        "M: 2.5\n",
        "M: true\n",
        "q: 2\n",
        "lr: -1\n",
        "stop_on_escape: 1\n",
        "sweep.q: [0, 1]\n",
        "[1, 2]\n",
        "q: [unclosed\n",
        "method: garl\nestimator: rloo\nM: 1\n",
    ],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        tr.parse_config(text)


def test_sweep_keys_allowed_in_sweep_mode():
    _, _, sweep = tr.parse_config("sweep:\n  q: [0, 1]\n  seeds: [1]\n", allow_sweep=True)
    assert sweep == {"q": [0, 1], "seeds": [1]}


def test_paft_cold_warns():
    with pytest.warns(RuntimeWarning):
        tr.TrainConfig(method="paft", scenario="cold")


def test_majority_vote_tie_break():
    assert tr.majority_vote(np.array([[2, 1], [0, 3], [2, 1], [0, 3]])) == (0, 3)
    assert tr.majority_vote(np.array([[1], [1], [0]])) == (1,)


def test_contains_match():
    assert tr.contains_match([1, 2, 3], [2, 3])
    assert not tr.contains_match([1, 2, 3], [3, 2])
    assert tr.contains_match([4, 5], [4, 5])


def test_cold_task_calibrated(cold_task):
    assert mean_marginal(cold_task.model, cold_task.dataset) == pytest.approx(1e-3, rel=1e-3)
    assert len({ex.x for ex in cold_task.dataset}) == 8
    with pytest.raises(DomainError):
        tr.make_cold_task(0.2, seed=0)


def test_noisy_task_layout():
    task = tr.make_noisy_task(0.2, seed=1, n_inputs=3, copies=10)
    assert len(task.dataset) == 30
    assert sum(ex.corrupted for ex in task.dataset) == 6
    assert len(tr.clean_examples(task.dataset)) == 3
    assert tr.contamination(task.model, task.dataset) == pytest.approx(1 / 3)
    with pytest.raises(DomainError):
        tr.make_noisy_task(0.6, seed=0)


def test_evaluate_bounds(warm_task):
    m = tr.evaluate(warm_task.model, warm_task.dataset, 8, 2, np.random.default_rng(0))
    assert 0 <= m.p1 <= m.pk <= 1
    assert 0 <= m.majk <= 1
    assert m.n_samples == 8 * 8 * 2


def test_lr_zero_keeps_model(warm_task):
    cfg = tr.TrainConfig(method="garl", q=0.5, lr=0.0, steps=6, eval_every=2, scenario="warm")
    trace, model = tr.train(cfg, warm_task)
    assert np.array_equal(model.params, warm_task.model.params)
    assert len(set(trace.mean_marginals)) == 1
    assert [r[0] for r in trace.rows] == [0, 2, 4, 6]


def test_training_is_deterministic(warm_task):
    cfg = tr.TrainConfig(method="garl", q=0.5, lr=2.0, steps=10, batch=4, eval_every=5, scenario="warm")
    a, ma = tr.train(cfg, warm_task)
    b, mb = tr.train(cfg, warm_task)
    assert a.rows == b.rows
    assert np.array_equal(ma.params, mb.params)
    c, _ = tr.train(dataclasses.replace(cfg, seed=1), warm_task)
    assert c.rows != a.rows


@pytest.mark.parametrize("method,q", [("grpo", 0.0), ("garl", 0.5), ("paft", 1.0)])
def test_warm_training_improves(warm_task, method, q):
    cfg = tr.TrainConfig(method=method, q=q, lr=1.0, steps=30, eval_every=10, scenario="warm")
    trace, _ = tr.train(cfg, warm_task)
    mm = trace.mean_marginals
    assert trace.status == tr.COMPLETED
    assert mm[-1] > mm[0]


def test_divergence_status(warm_task):
    cfg = tr.TrainConfig(method="garl", q=1.0, lr=1e7, steps=5, scenario="warm")
    trace, model = tr.train(cfg, warm_task)
    assert trace.status == tr.DIVERGED
    assert trace.steps_run < 5
    assert np.max(np.abs(model.params)) > tr.DIVERGENCE_LIMIT


def test_noisy_lower_q_fits_less_noise():
    task = tr.make_noisy_task(0.2, seed=0, n_inputs=4)
    out = {}
    for q in (0.25, 1.0):
        cfg = tr.TrainConfig(method="garl", q=q, lr=4.0, steps=150, eval_every=50, scenario="noisy")
        _, model = tr.train(cfg, task)
        out[q] = tr.contamination(model, task.dataset)
    assert out[0.25] < out[1.0]


def test_escape_detection_and_stop(cold_task):
    cfg = tr.TrainConfig(method="garl", q=1.0, M=8, lr=16.0, steps=2000, eval_every=5, stop_on_escape=True)
    trace, _ = tr.train(cfg, cold_task)
    assert trace.escape_step is not None
    assert trace.steps_run == trace.escape_step
    assert trace.rows[-1][4] > 0.5 >= trace.rows[-2][4]


def test_qsweep_records_errors_and_means(cold_task, monkeypatch):
    real = tr.train

    def flaky(cfg, task):
        if cfg.q == 0.5 and cfg.seed == 1:
            raise RuntimeError("boom")
        return real(cfg, task)

    monkeypatch.setattr(tr, "train", flaky)
    base = tr.TrainConfig(method="garl", M=8, lr=16.0, eval_every=5)
    res = tr.qsweep(base, [1.0, 0.5], [0, 1], cold_task, budget=20)
    assert [r[0] for r in res.rows] == [0.5, 0.5, 1.0, 1.0]
    assert res.rows[1][2].startswith("error: boom")
    table = res.table()
    means = [r for r in table if r[1] == "mean"]
    assert [r[0] for r in means] == [0.5, 1.0]
    assert res.budget == 20 and res.calibration_steps is None
    with pytest.raises(DomainError):
        tr.qsweep(base, [0.5], [0], cold_task, budget=5)


def test_metrics_csv(tmp_path, warm_task):
    cfg = tr.TrainConfig(q=0.5, lr=1.0, steps=2, eval_every=1, scenario="warm")
    trace, _ = tr.train(cfg, warm_task)
    path = trace.write_csv(tmp_path / "m.csv", comment="run_id=abc")
    lines = path.read_text().splitlines()
    assert lines[0] == "# run_id=abc"
    assert lines[1] == ",".join(tr.METRICS_HEADER)
    assert len(lines) == 2 + 3
