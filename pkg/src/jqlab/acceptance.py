"""The numbered acceptance checks, shared by ``jqlab selftest`` and the test suite.

Each ``criterion_N(seed)`` returns a :class:`CriterionResult` whose ``rows``
go to a per-criterion CSV. Only deterministic quantities enter the rows;
wall-clock timings are kept separately.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.special import softmax

from . import dynamics as dyn
from . import lab
from .errors import DomainError
from .io import write_csv
from .models import (
    Example,
    exact_grad_loss,
    expected_reward,
    finite_diff_grad,
    random_latent_model,
)
from .qcore import escort_minimizer
from .seeding import stream
from .trainer import TrainConfig, make_cold_task, make_warm_task, qsweep, train

P0_GRID = tuple(10.0 ** -k for k in range(2, 8))
ESCAPE_DELTA = 0.5
FLOW_BUDGET = 1e12
NOISE_EPS = 0.1

# model used by the estimator checks: four latents, weights with squared CV ~ 1.2
ESTIMATOR_MODEL = dict(seed=28, latent_vocab=2, latent_len=2, out_vocab=2, out_len=1, scale=2.0)
ESTIMATOR_TARGET = (0,)
# cold-task training setup, calibrated so q = 1 escapes in ~130 steps
COLD_TRAIN = dict(method="garl", M=8, lr=16.0, eval_every=5, scenario="cold")


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    value: float
    threshold: str
    header: tuple = ()
    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    seconds: float = math.nan

    @property
    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number:2d} {verdict}  {self.name}: value={self.value:.6g} ({self.threshold})"


def _sub_seed(seed: int, name: str) -> int:
    return int(stream(seed, name).integers(2**31))


def estimator_model():
    cfg = dict(ESTIMATOR_MODEL)
    return random_latent_model(cfg.pop("seed"), **cfg), Example(0, ESTIMATOR_TARGET)


# --------------------------------------------------------------------------
# 1. escort minimizer against numerical minimization
# --------------------------------------------------------------------------

def simplex_oracle(alpha, q: float) -> np.ndarray:
    """Minimize ``sum alpha_j loss_q(theta_j)`` by BFGS over softmax logits."""
    a = np.asarray(alpha, dtype=float)

    def f(u):
        t = softmax(u)
        if q == 1.0:
            val, g = -(a @ np.log(t)), -a / t
        else:
            val, g = a @ ((1.0 - t ** (1.0 - q)) / (1.0 - q)), -a * t ** (-q)
        return val, t * (g - t @ g)

    u = np.zeros_like(a)
    for gtol in (1e-13, 1e-14):
        u = minimize(f, u, jac=True, method="BFGS", options=dict(gtol=gtol, maxiter=10_000)).x
    return softmax(u)


def criterion_1(seed: int) -> CriterionResult:
    rng = stream(seed, "escort")
    rows, worst = [], 0.0
    for i in range(50):
        n = int(rng.integers(2, 7))
        alpha = rng.dirichlet(np.ones(n))
        q = 1.0 - rng.random()
        gap = float(np.max(np.abs(escort_minimizer(alpha, q) - simplex_oracle(alpha, q))))
        worst = max(worst, gap)
        rows.append((i, q, n, gap))
    return CriterionResult(1, "escort minimizer vs simplex minimization", worst < 1e-6, worst,
                           "max coord gap < 1e-6", ("pair", "q", "n", "max_abs_gap"), rows)


# --------------------------------------------------------------------------
# 2. two factorizations of the gradient and finite differences
# --------------------------------------------------------------------------

def criterion_2(seed: int) -> CriterionResult:
    rng = stream(seed, "factorization")
    rows, worst_fact, worst_fd = [], 0.0, 0.0
    for i in range(100):
        dims = dict(
            n_inputs=int(rng.integers(1, 3)),
            latent_vocab=int(rng.integers(2, 4)),
            latent_len=int(rng.integers(1, 3)),
            out_vocab=int(rng.integers(2, 4)),
            out_len=int(rng.integers(1, 3)),
        )
        model = random_latent_model(rng, **dims)
        ex = Example(int(rng.integers(dims["n_inputs"])), tuple(rng.integers(0, dims["out_vocab"], dims["out_len"])))
        q = float(rng.random())
        direct = exact_grad_loss(model, ex, q).values
        P_lin = model.success_prob_linear(ex)
        amplified = P_lin ** (-q) * -model.grad_success_prob(ex)
        attenuated = math.exp((1.0 - q) * model.log_success_prob(ex)) * -np.asarray(model.score(ex))
        scale = max(1.0, float(np.max(np.abs(direct))))
        fact = max(np.max(np.abs(amplified - direct)), np.max(np.abs(attenuated - direct))) / scale
        fd = finite_diff_grad(model, ex, q).values
        fd_rel = float(np.max(np.abs(fd - direct)) / np.max(np.abs(direct)))
        worst_fact, worst_fd = max(worst_fact, fact), max(worst_fd, fd_rel)
        rows.append((i, q, model.n_params, fact, fd_rel))
    passed = worst_fact <= 1e-10 and worst_fd <= 1e-5
    return CriterionResult(2, "gradient factorizations and finite differences", passed, worst_fact,
                           f"factorization gap <= 1e-10, finite-difference rel {worst_fd:.3g} <= 1e-5",
                           ("model", "q", "n_params", "factorization_gap", "fd_rel_err"), rows)


# --------------------------------------------------------------------------
# 3, 4. clean escape times
# --------------------------------------------------------------------------

def escape_times(q: float) -> tuple[list, list]:
    ode, quad = [], []
    for p0 in P0_GRID:
        tr = dyn.integrate_sigmoid_flow(q, p0, ESCAPE_DELTA, FLOW_BUDGET)
        if tr.crossing_time is None:
            raise DomainError(f"no crossing for q={q}, p0={p0}")
        ode.append(tr.crossing_time)
        quad.append(dyn.exact_sigmoid_time(q, p0, ESCAPE_DELTA))
    return ode, quad


def criterion_3(seed: int) -> CriterionResult:
    rows, passed, worst = [], True, 0.0
    for q in (0.0, 0.25, 0.5, 0.75, 1.0):
        ode, _ = escape_times(q)
        slope, r2 = dyn.fit_escape_exponent(q, P0_GRID, ode)
        if q < 1.0:
            err = abs(slope - (1.0 - q))
            ok = err <= 0.05
            worst = max(worst, err)
        else:
            ok = r2 > 0.999
        passed &= ok
        rows.append((q, slope, r2, 1.0 - q if q < 1 else math.nan, ok))
    return CriterionResult(3, "escape-time exponents", passed, worst,
                           "|slope - (1-q)| <= 0.05; r2 > 0.999 at q=1",
                           ("q", "slope", "r2", "expected_slope", "ok"), rows)


def criterion_4(seed: int) -> CriterionResult:
    rows, worst = [], 0.0
    for q in (0.0, 0.25, 0.5, 0.75, 1.0):
        ode, quad = escape_times(q)
        for p0, a, b in zip(P0_GRID, ode, quad):
            rel = abs(a - b) / b
            worst = max(worst, rel)
            rows.append((q, p0, a, b, rel))
    return CriterionResult(4, "integrator vs quadrature", worst < 1e-4, worst, "rel err < 1e-4",
                           ("q", "p0", "T_ode", "T_quad", "rel_err"), rows)


# --------------------------------------------------------------------------
# 5. noise fitting
# --------------------------------------------------------------------------

def noise_grid(q: float, eps: float) -> tuple[float, list]:
    eta = dyn.noise_equilibrium(q, eps) / 10.0
    return eta, [eta * 10.0 ** -k for k in range(3, 8)]


def criterion_5(seed: int) -> CriterionResult:
    rows, checks = [], {}
    # equilibria against the escort root, as a root and as the flow's end state
    worst_eq = 0.0
    for q in (0.25, 0.5, 0.75, 1.0):
        for eps in (0.05, 0.1, 0.2):
            root = dyn.noise_equilibrium(q, eps)
            escort = float(escort_minimizer([1.0 - eps, eps], q)[1])
            settled = dyn.integrate_scalar(dyn.noise_rate(q, eps), 1e-6, [], 1e15,
                                           stop_at_first=False, detect_equilibrium=True)
            gap = max(abs(root - escort), abs(float(settled.p[-1]) - escort))
            worst_eq = max(worst_eq, gap)
            rows.append(("equilibrium", q, eps, root, escort, gap))
    checks["equilibrium"] = worst_eq <= 1e-8
    worst_q1 = 0.0
    for eps in (1e-3, 1e-2, 0.05, 0.1, 0.2):
        rel = abs(dyn.noise_equilibrium(1.0, eps) / eps - 1.0)
        worst_q1 = max(worst_q1, rel)
        rows.append(("q1-equilibrium", 1.0, eps, dyn.noise_equilibrium(1.0, eps), eps, rel))
    checks["q1_equilibrium"] = worst_q1 <= 1e-8
    decreasing = True
    for pt0 in (0.4, 0.1, 1e-3):
        tr = dyn.integrate_noise_flow(0.0, NOISE_EPS, pt0, 0.5, 1e6)
        mono = bool(np.all(np.diff(tr.p) < 0.0)) and tr.crossing_time is None
        decreasing &= mono
        rows.append(("q0-decreasing", 0.0, NOISE_EPS, pt0, float(tr.p[-1]), float(mono)))
    checks["q0_decreasing"] = decreasing
    worst_exp, worst_scale = 0.0, 0.0
    for q in (0.25, 0.5, 0.75, 1.0):
        eta, grid = noise_grid(q, NOISE_EPS)
        fit = dyn.noise_rate_exponent(q, NOISE_EPS, grid, eta)
        scale_err = abs(2.0 * fit.eps_ratio - 1.0)
        worst_scale = max(worst_scale, scale_err)
        if q < 1.0:
            clean, _ = dyn.fit_escape_exponent(q, P0_GRID, escape_times(q)[0])
            worst_exp = max(worst_exp, abs(fit.slope - clean))
            rows.append(("exponent", q, NOISE_EPS, fit.slope, clean, abs(fit.slope - clean)))
        else:
            rows.append(("exponent", q, NOISE_EPS, fit.slope, math.nan, fit.r2))
            checks["q1_linear"] = fit.r2 > 0.999
        rows.append(("eps-doubling", q, NOISE_EPS, fit.eps_ratio, 0.5, scale_err))
    checks["exponent"] = worst_exp <= 0.05
    checks["eps_scaling"] = worst_scale <= 0.2
    res = CriterionResult(5, "noise fitting", all(checks.values()), worst_eq,
                          "equilibrium gap <= 1e-8; exponent gap <= 0.05; T(2eps)/T(eps) = 1/2 within 20%",
                          ("check", "q", "eps", "a", "b", "err"), rows)
    res.notes = [f"{k}: {'ok' if v else 'FAILED'}" for k, v in checks.items()]
    return res


# --------------------------------------------------------------------------
# 6. near-optimality
# --------------------------------------------------------------------------

def criterion_6(seed: int) -> CriterionResult:
    rows = []
    for eps1 in (1e-4, 1e-5, 1e-6, 1e-8):
        r = dyn.near_optimality_ratio(0.0, 1.0, 1e-3, eps1)
        rows.append((0.0, 1.0, 1e-3, eps1, r))
    worst = max(abs(r[-1] - 1.0) for r in rows)
    return CriterionResult(6, "near-optimal phase time ratio", worst < 5e-3, worst, "|T0/T1 - 1| < 5e-3",
                           ("q", "q2", "eps0", "eps1", "ratio"), rows)


# --------------------------------------------------------------------------
# 7-9. estimators
# --------------------------------------------------------------------------

def criterion_7(seed: int) -> CriterionResult:
    model, ex = estimator_model()
    rows, ok = [], True
    for M in (2, 32):
        rep = lab.measure_bias_variance(model, ex, "plugin", 0.0, M, 10_000, _sub_seed(seed, f"unbiased-{M}"))
        flag = rep.bias_contains_zero() and rep.flags["degenerate_fraction_ok"]
        ok &= flag
        rows.append(("q0-plugin-bias", 0.0, M, float(np.max(np.abs(rep.bias))), float(np.max(rep.ci)), flag))
    worst_tower = 0.0
    for q in (0.0, 0.5, 1.0):
        pr = lab.compare_estimators(model, ex, q, 32, 32, 10_000, _sub_seed(seed, f"paired-{q}"))
        flag = pr.flags["rloo_mean_matches_plugin"] and pr.flags["degenerate_fraction_ok"]
        ok &= flag
        worst_tower = max(worst_tower, pr.tower_max_abs)
        rows.append(("rloo-minus-plugin", q, 32, float(np.max(np.abs(pr.diff_mean["plugin-rloo"]))),
                     float(np.max(pr.diff_se["plugin-rloo"])), flag))
        rows.append(("tower", q, 32, pr.tower_max_abs, 1e-12, pr.tower_max_abs <= 1e-12))
    ok &= worst_tower <= 1e-12
    return CriterionResult(7, "unbiasedness and estimator identities", bool(ok), worst_tower,
                           "CIs contain 0; tower gap <= 1e-12",
                           ("check", "q", "M", "value", "scale", "ok"), rows)


def criterion_8(seed: int, R: int = 200_000) -> CriterionResult:
    model, ex = estimator_model()
    fit = lab.measure_bias_law(model, ex, 0.5, (16, 32, 64), R, _sub_seed(seed, "bias-law"))
    z = fit.z_scores()
    rows = [(j, fit.a[j], fit.predicted_a[j], fit.a_se[j], z[j]) for j in range(z.size)]
    act = fit.active
    power = float(np.min(np.abs(fit.predicted_a[act]) / fit.a_se[act])) if act.any() else 0.0
    res = CriterionResult(8, "finite-M bias law", fit.matches(3.0), float(np.max(np.abs(z))),
                          "|a - a_pred| <= 3 SE per coordinate",
                          ("coord", "a_fit", "a_predicted", "a_se", "z"), rows)
    res.notes = [f"smallest |a_pred|/SE over varying coordinates: {power:.3g}"]
    return res


def criterion_9(seed: int) -> CriterionResult:
    model = random_latent_model(stream(seed, "variance-model"), latent_vocab=3, latent_len=2, out_vocab=4, out_len=2)
    ex = Example(0, (1, 2))
    rows, worst = [], 1.0
    for q in (0.25, 0.75):
        pr = lab.compare_estimators(model, ex, q, 32, 32, 10_000, _sub_seed(seed, f"variance-{q}"))
        worst = min(worst, pr.var_order_fraction)
        rows.append((q, 32, 32, pr.var_order_fraction, int(((pr.var["plugin"] > 0) | (pr.var["paft"] > 0)).sum())))
    return CriterionResult(9, "resampling variance dominates plug-in", worst >= 0.95, worst,
                           "fraction of coordinates >= 0.95",
                           ("q", "M", "K", "fraction", "coordinates"), rows)


# --------------------------------------------------------------------------
# 10, 11. training
# --------------------------------------------------------------------------

def criterion_10(seed: int) -> CriterionResult:
    task = make_cold_task(1e-3, _sub_seed(seed, "cold-task"))
    base = TrainConfig(q=1.0, seed=_sub_seed(seed, "cold-train"), **COLD_TRAIN)
    res = qsweep(base, (0.0, 0.25, 0.5, 0.75, 1.0), (base.seed,), task)
    esc = res.escape_by_q()
    passed = res.monotone() and esc[0.0] == 0.0 and esc[1.0] == 1.0
    out = CriterionResult(10, "cold-start escape is monotone in q", passed, float(res.budget),
                          "monotone, q=0 fails, q=1 escapes within 10x the q=1 steps",
                          ("q", "seed", "status", "escaped", "escape_step", "final_marginal", "budget"),
                          list(res.rows))
    out.notes = [f"q=1 escape steps {res.calibration_steps}, budget {res.budget}"]
    return out


def criterion_11(seed: int, steps: int = 100, rollouts: int = 1000) -> CriterionResult:
    task = make_warm_task(0.3, _sub_seed(seed, "warm-task"))
    cfg = TrainConfig(method="grpo", q=0.0, M=8, lr=1.0, steps=steps, eval_every=steps,
                      scenario="warm", seed=_sub_seed(seed, "warm-train"))
    trace, model = train(cfg, task)
    rng = stream(seed, "reward")
    hits, exact = [], []
    for ex in task.dataset:
        r, p = expected_reward(model, ex, rollouts, rng)
        hits.append(r)
        exact.append(p)
    reward = float(np.mean(hits))
    marginal = float(np.mean(exact))
    n = rollouts * len(task.dataset)
    se = math.sqrt(max(reward * (1.0 - reward), 1e-300) / n)
    z = abs(reward - marginal) / se
    loss_proxy = trace.rows[-1][5]
    rows = [(r[0], r[1], 1.0 - r[5], r[4]) for r in trace.rows]
    rows.append(("final", reward, 1.0 - loss_proxy, marginal))
    res = CriterionResult(11, "q=0 loss tracks expected reward", z <= 3.0, z, "|reward - marginal| <= 3 SE",
                          ("step", "sampled_reward", "one_minus_loss", "mean_marginal"), rows)
    res.notes = [f"reward {reward:.5f}, mean marginal {marginal:.5f}, SE {se:.3g}"]
    return res


CRITERIA: dict[int, Callable[[int], CriterionResult]] = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
    11: criterion_11,
}

# seconds allowed per criterion
BUDGETS = {1: 10, 2: 30, 3: 60, 4: 60, 5: 120, 6: 10, 7: 120, 8: 300, 9: 120, 10: 600, 11: 60}
SUMMARY_HEADER = ("criterion", "name", "passed", "value", "threshold")


def run_criterion(n: int, seed: int) -> CriterionResult:
    t0 = time.perf_counter()
    res = CRITERIA[n](seed)
    res.seconds = time.perf_counter() - t0
    return res


def write_results(results: list[CriterionResult], out_dir, comment: str) -> list[Path]:
    """Per-criterion CSVs plus ``summary.csv``; timings go to ``timings.txt``."""
    out_dir = Path(out_dir)
    paths = []
    for r in results:
        paths.append(write_csv(out_dir / f"criterion_{r.number:02d}.csv", r.header, r.rows, comment=comment))
    paths.append(write_csv(
        out_dir / "summary.csv",
        SUMMARY_HEADER,
        [(r.number, r.name, r.passed, r.value, r.threshold) for r in results],
        comment=comment,
    ))
    timing = out_dir / "timings.txt"
    timing.write_text("".join(f"{r.number} {r.seconds:.3f}\n" for r in results), encoding="utf-8")
    paths.append(timing)
    return paths
