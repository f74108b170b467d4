"""Stochastic-gradient training on toy latent-sequence tasks.

Each step draws a minibatch, builds one prior sample pool of ``M`` latents
per example, turns it into a per-example gradient with the configured
estimator (rescaled by ``M**-q``), averages over the batch and takes a plain
SGD step. Every random draw comes from a named stream of the master seed,
so a run is a pure function of ``(config, task)``.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import _kernels
from .errors import ConfigError, DomainError
from .io import write_csv
from .models import (
    Example,
    LatentSeqModel,
    calibrate_temperature,
    exact_marginal,
    temperature_tables,
)
from .qcore import check_q, dataset_loss
from .seeding import stream

METHODS = ("grpo", "garl", "paft")
SCENARIOS = ("cold", "warm", "noisy")
DIVERGENCE_LIMIT = 1e4
ESCAPE_LEVEL = 0.5

COMPLETED = "completed"
DIVERGED = "diverged"


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    """One training run.

    ``method``: ``grpo`` (leave-one-out estimator at q = 0), ``garl``
    (amplified estimator, ``estimator`` picks ``rloo`` or ``plugin``) or
    ``paft`` (importance resampling with ``K`` draws). ``clip`` caps the
    batch-gradient norm when set.
    """

    method: str = "garl"
    q: float = 1.0
    M: int = 8
    K: int | None = None
    lr: float = 1.0
    steps: int = 100
    batch: int = 32
    seed: int = 0
    scenario: str = "cold"
    eval_k: int = 16
    eval_every: int = 10
    eval_groups: int = 1
    estimator: str = "rloo"
    clip: float | None = None
    stop_on_escape: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        try:
            check_q(self.q)
        except DomainError as exc:
            raise ConfigError(str(exc)) from None
        if self.method == "grpo" and self.q != 0.0:
            raise ConfigError("grpo is the q = 0 leave-one-out baseline; set q: 0")
        if self.estimator not in ("rloo", "plugin"):
            raise ConfigError("estimator must be 'rloo' or 'plugin'")
        needs_two = self.method == "grpo" or (self.method == "garl" and self.estimator == "rloo")
        if self.M < (2 if needs_two else 1):
            raise ConfigError("M too small for the chosen estimator")
        if self.K is not None and self.K < 1:
            raise ConfigError("K must be at least 1")
        if self.lr < 0 or not math.isfinite(self.lr):
            raise ConfigError("lr must be a finite non-negative number")
        if self.steps < 0 or self.batch < 1:
            raise ConfigError("steps must be >= 0 and batch >= 1")
        if self.eval_k < 1 or self.eval_every < 1 or self.eval_groups < 1:
            raise ConfigError("eval.k, eval.every and eval.groups must be positive")
        if self.clip is not None and not self.clip > 0:
            raise ConfigError("clip must be positive when set")
        if self.method == "paft" and self.scenario == "cold":
            warnings.warn(
                "resampling at cold start: expect degenerate pools", RuntimeWarning, stacklevel=3
            )

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


# dotted config key -> TrainConfig field
_KEYS = {
    "method": "method",
    "q": "q",
    "M": "M",
    "K": "K",
    "lr": "lr",
    "steps": "steps",
    "batch": "batch",
    "seed": "seed",
    "scenario": "scenario",
    "eval.k": "eval_k",
    "eval.every": "eval_every",
    "eval.groups": "eval_groups",
    "estimator": "estimator",
    "clip": "clip",
    "stop_on_escape": "stop_on_escape",
}
TASK_KEYS = ("task.p0", "task.n_examples", "task.seed", "task.eps", "task.copies")
SWEEP_KEYS = ("sweep.q", "sweep.seeds", "sweep.calibrate", "sweep.budget_factor")
_INTS = {"M", "K", "steps", "batch", "seed", "eval_k", "eval_every", "eval_groups"}


def _flatten(doc: dict, prefix: str = "") -> dict:
    flat = {}
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            flat.update(_flatten(v, key + "."))
        else:
            flat[key] = v
    return flat


def parse_config(text: str, allow_sweep: bool = False) -> tuple[TrainConfig, dict, dict]:
    """Parse a YAML document of dotted keys.

    Returns ``(config, task_options, sweep_options)``; the last two keep the
    ``task.`` / ``sweep.`` prefixes stripped. Unknown keys raise
    :class:`ConfigError`.
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping of keys to values")
    flat = _flatten(doc)
    allowed = set(_KEYS) | set(TASK_KEYS) | (set(SWEEP_KEYS) if allow_sweep else set())
    unknown = sorted(set(flat) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {}
    for key, name in _KEYS.items():
        if key not in flat:
            continue
        val = flat[key]
        try:
            if val is None:
                kwargs[name] = None
            elif name in _INTS:
                if isinstance(val, bool) or float(val) != int(val):
                    raise ValueError
                kwargs[name] = int(val)
            elif name in ("q", "lr", "clip"):
                kwargs[name] = float(val)
            elif name == "stop_on_escape":
                if not isinstance(val, bool):
                    raise ValueError
                kwargs[name] = val
            else:
                kwargs[name] = str(val)
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for {key}: {val!r}") from None
    task = {k[len("task."):]: v for k, v in flat.items() if k.startswith("task.")}
    sweep = {k[len("sweep."):]: v for k, v in flat.items() if k.startswith("sweep.")}
    return TrainConfig(**kwargs), task, sweep


def load_config(path, allow_sweep: bool = False):
    return parse_config(Path(path).read_text(encoding="utf-8"), allow_sweep=allow_sweep)


# --------------------------------------------------------------------------
# tasks
# --------------------------------------------------------------------------

@dataclass
class Task:
    """Initial model plus training set; ``tau`` is the calibrated temperature."""

    kind: str
    model: LatentSeqModel
    dataset: list
    p0: float
    tau: float
    seed: int


DIMS = dict(latent_vocab=3, latent_len=2, out_vocab=4, out_len=2)


def _distinct_targets(n: int, out_vocab: int, out_len: int, rng) -> list[Example]:
    toks = rng.integers(0, out_vocab, size=(n, out_len))
    return [Example(i, tuple(int(t) for t in toks[i])) for i in range(n)]


def _temperature_task(kind, p0, seed, n_examples, dims) -> Task:
    dims = {**DIMS, **(dims or {})}
    dataset = _distinct_targets(n_examples, dims["out_vocab"], dims["out_len"], stream(seed, "task-targets"))
    prior, base = temperature_tables(stream(seed, "task-tables"), dataset, n_examples, **dims)

    def build(tau):
        return LatentSeqModel(prior, tau * base)

    tau, model = calibrate_temperature(build, dataset, p0)
    return Task(kind, model, dataset, p0, tau, seed)


def make_cold_task(p0: float, seed: int, n_examples: int = 32, dims: dict | None = None) -> Task:
    """Task whose mean exact marginal is ``p0`` (to 0.1%), one input per example."""
    if not (1e-6 < p0 < 1e-2):
        raise DomainError("cold-start p0 must lie in (1e-6, 1e-2)")
    return _temperature_task("cold", p0, seed, n_examples, dims)


def make_warm_task(p0: float, seed: int, n_examples: int = 32, dims: dict | None = None) -> Task:
    """Like :func:`make_cold_task` for moderate ``p0``; reachable up to the model's limits."""
    if not (0.0 < p0 < 1.0):
        raise DomainError("p0 must lie in (0, 1)")
    return _temperature_task("warm", p0, seed, n_examples, dims)


def make_noisy_task(
    eps: float,
    seed: int,
    n_inputs: int = 8,
    copies: int = 10,
    dims: dict | None = None,
) -> Task:
    """Each input appears ``copies`` times; ``round(eps * copies)`` copies carry a flipped target.

    The model starts with uniform output tables.
    """
    dims = {"latent_vocab": 3, "latent_len": 2, "out_vocab": 3, "out_len": 1, **(dims or {})}
    if not (0.0 < eps < 0.5):
        raise DomainError("eps must lie in (0, 1/2)")
    if dims["out_vocab"] < 2:
        raise DomainError("need at least two output tokens to flip a target")
    rng = stream(seed, "task-targets")
    n_bad = int(round(eps * copies))
    dataset = []
    for x in range(n_inputs):
        clean = tuple(int(t) for t in rng.integers(0, dims["out_vocab"], size=dims["out_len"]))
        flipped = list(clean)
        flipped[-1] = (clean[-1] + 1 + int(rng.integers(0, dims["out_vocab"] - 1))) % dims["out_vocab"]
        dataset += [Example(x, clean)] * (copies - n_bad) + [Example(x, tuple(flipped), True)] * n_bad
    prior, _ = temperature_tables(stream(seed, "task-tables"), dataset, n_inputs, **dims)
    out = np.zeros((n_inputs, dims["out_len"], dims["latent_vocab"], dims["out_vocab"] + 1, dims["out_vocab"]))
    model = LatentSeqModel(prior, out)
    p0 = float(np.mean([exact_marginal(model, ex) for ex in dataset]))
    return Task("noisy", model, dataset, p0, 0.0, seed)


def contamination(model: LatentSeqModel, dataset: Sequence[Example]) -> float:
    """Mean marginal mass on corrupted targets, one term per distinct corrupted pair."""
    bad = sorted({(ex.x, ex.target) for ex in dataset if ex.corrupted})
    if not bad:
        return 0.0
    return float(np.mean([exact_marginal(model, Example(x, y)) for x, y in bad]))


def clean_examples(dataset: Sequence[Example]) -> list[Example]:
    """Distinct uncorrupted ``(x, target)`` pairs in first-seen order."""
    seen, out = set(), []
    for ex in dataset:
        key = (ex.x, ex.target)
        if not ex.corrupted and key not in seen:
            seen.add(key)
            out.append(Example(ex.x, ex.target))
    return out


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

def majority_vote(samples: np.ndarray) -> tuple:
    """Most frequent row; ties go to the lexicographically smallest row."""
    rows = [tuple(int(t) for t in r) for r in samples]
    counts: dict = {}
    for r in rows:
        counts[r] = counts.get(r, 0) + 1
    top = max(counts.values())
    return min(r for r, c in counts.items() if c == top)


@dataclass
class EvalMetrics:
    p1: float
    pk: float
    majk: float
    n_samples: int


def evaluate(model: LatentSeqModel, dataset: Sequence[Example], k: int, groups: int, rng) -> EvalMetrics:
    """Sampled p@1, p@k and maj@k with exact-match scoring.

    Each example gets ``groups`` independent blocks of ``k`` full rollouts.
    p@1 averages single-rollout correctness; p@k and maj@k are per block.
    """
    if k < 1 or groups < 1:
        raise DomainError("k and groups must be at least 1")
    hits1, hitsk, hitsm, n = 0.0, 0.0, 0.0, 0
    for ex in dataset:
        z = model.sample_latents(ex.x, k * groups, rng)
        y = model.sample_outputs(ex.x, z, rng).reshape(groups, k, -1)
        target = np.asarray(ex.target)
        ok = np.all(y == target, axis=2)
        hits1 += ok.mean()
        hitsk += ok.any(axis=1).mean()
        hitsm += np.mean([majority_vote(block) == ex.target for block in y])
        n += k * groups
    m = len(dataset)
    return EvalMetrics(hits1 / m, hitsk / m, hitsm / m, n)


def contains_match(sample: Sequence[int], target: Sequence[int]) -> bool:
    """Relaxed scoring: does ``target`` occur contiguously in ``sample``?

    Equal to exact match when lengths agree, as they do on the toy tasks.
    """
    s, t = list(sample), list(target)
    return any(s[i : i + len(t)] == t for i in range(len(s) - len(t) + 1))


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

METRICS_HEADER = ("step", "p1", "pk", "majk", "mean_marginal", "loss")


@dataclass
class MetricsTrace:
    rows: list = field(default_factory=list)
    status: str = COMPLETED
    escape_step: int | None = None
    n_degenerate: int = 0
    steps_run: int = 0

    @property
    def mean_marginals(self) -> np.ndarray:
        return np.array([r[4] for r in self.rows])

    def write_csv(self, path, comment: str | None = None) -> Path:
        return write_csv(path, METRICS_HEADER, self.rows, comment=comment)


def _example_grad(model, ex, cfg: TrainConfig, rng) -> tuple[np.ndarray, np.ndarray, bool]:
    """Normalized local gradient for one example plus its parameter indices."""
    en = model.enumerate(ex)
    z = model.sample_latents(ex.x, cfg.M, rng)
    idx = model.latent_index(z)[None, :]
    if cfg.method == "paft":
        K = cfg.M if cfg.K is None else cfg.K
        u = rng.random((1, K))
        _, _, est, _, deg = _kernels.pool_estimates(idx, en.log_lik, en.s_prior, en.s_lik, cfg.q, u, want_rloo=False)
    else:
        rloo = cfg.method == "grpo" or cfg.estimator == "rloo"
        plugin, loo, _, _, deg = _kernels.pool_estimates(idx, en.log_lik, en.s_prior, en.s_lik, cfg.q, want_rloo=rloo)
        est = loo if rloo else plugin
    g = est[0]
    degenerate = bool(deg[0])
    if not np.all(np.isfinite(g)):
        g = np.zeros_like(g)
    return g * float(cfg.M) ** (-cfg.q), en.param_index, degenerate


def _eval_row(model, dataset, cfg, step) -> tuple:
    probs = [exact_marginal(model, ex) for ex in dataset]
    mean_p = float(np.mean(probs))
    loss = dataset_loss(np.maximum(probs, np.finfo(float).tiny), cfg.q)
    m = evaluate(model, dataset, cfg.eval_k, cfg.eval_groups, stream(cfg.seed, "eval", step))
    return (step, m.p1, m.pk, m.majk, mean_p, loss)


def train(config: TrainConfig, task: Task) -> tuple[MetricsTrace, LatentSeqModel]:
    """Run SGD; returns the evaluation trace and the final model.

    Evaluations happen at step 0, every ``eval_every`` steps and at the
    end. A parameter beyond ``1e4`` in magnitude halts with ``diverged``.
    """
    cfg = config
    model = task.model
    data = list(task.dataset)
    n = len(data)
    trace = MetricsTrace()
    theta = model.params
    warned = False

    def record(step):
        row = _eval_row(model, data, cfg, step)
        trace.rows.append(row)
        if trace.escape_step is None and row[4] > ESCAPE_LEVEL:
            trace.escape_step = step

    record(0)
    for step in range(1, cfg.steps + 1):
        if cfg.batch >= n:
            batch = range(n)
        else:
            batch = np.sort(stream(cfg.seed, "batch", step).choice(n, cfg.batch, replace=False))
        rng = stream(cfg.seed, "pools", step)
        grad = np.zeros_like(theta)
        for i in batch:
            g, where, deg = _example_grad(model, data[i], cfg, rng)
            if deg and cfg.q > 0.0:
                trace.n_degenerate += 1
                if cfg.method == "paft" and not warned:
                    warnings.warn("all resampling weights zero; example skipped", RuntimeWarning, stacklevel=2)
                    warned = True
            grad[where] += g
        grad /= len(batch)
        if cfg.clip is not None:
            norm = float(np.linalg.norm(grad))
            if norm > cfg.clip:
                grad *= cfg.clip / norm
        if cfg.lr != 0.0:
            theta = theta - cfg.lr * grad
            model = model.with_params(theta)
        trace.steps_run = step
        if not np.all(np.isfinite(theta)) or np.max(np.abs(theta)) > DIVERGENCE_LIMIT:
            trace.status = DIVERGED
            record(step)
            break
        if step % cfg.eval_every == 0 or step == cfg.steps:
            record(step)
            if cfg.stop_on_escape and trace.escape_step is not None:
                break
    return trace, model


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------

SWEEP_HEADER = ("q", "seed", "status", "escaped", "escape_step", "final_marginal", "budget")


@dataclass
class SweepResult:
    rows: list
    budget: int
    calibration_steps: int | None

    def escape_by_q(self) -> dict:
        """Fraction of seeds that escaped, keyed by q in ascending order."""
        out: dict = {}
        for r in self.rows:
            out.setdefault(r[0], []).append(1.0 if r[3] else 0.0)
        return {q: float(np.mean(v)) for q, v in sorted(out.items())}

    def monotone(self) -> bool:
        vals = list(self.escape_by_q().values())
        return all(b >= a for a, b in zip(vals, vals[1:]))

    def table(self, with_mean: bool = True) -> list:
        rows = list(self.rows)
        if with_mean:
            for q, frac in self.escape_by_q().items():
                finals = [r[5] for r in self.rows if r[0] == q and r[5] is not None]
                rows.append((q, "mean", "", frac, "", float(np.mean(finals)) if finals else math.nan, self.budget))
        return rows


def calibrate_budget(base: TrainConfig, task: Task, factor: int = 10, cap: int = 100_000) -> tuple[int, int]:
    """Budget ``factor`` times the q = 1 escape step measured on ``task``.

    Returns ``(budget, q1_steps)``; raises if q = 1 does not escape within ``cap``.
    """
    probe = dataclasses.replace(base, method="garl", q=1.0, steps=cap, stop_on_escape=True)
    trace, _ = train(probe, task)
    if trace.escape_step is None:
        raise DomainError(f"q = 1 did not escape within {cap} steps; cannot calibrate the budget")
    return factor * trace.escape_step, trace.escape_step


def qsweep(
    base: TrainConfig,
    qs: Sequence[float],
    seeds: Sequence[int],
    task: Task,
    budget: int | None = None,
    factor: int = 10,
) -> SweepResult:
    """Train once per ``(q, seed)`` and record whether the mean marginal passed 1/2.

    Without an explicit ``budget`` the step budget is calibrated from a
    q = 1 run with the base seed. A run that raises is recorded with status
    ``error`` and the sweep continues.
    """
    if len(qs) < 2:
        raise DomainError("a sweep needs at least two q values")
    if not seeds:
        raise DomainError("a sweep needs at least one seed")
    calib = None
    if budget is None:
        budget, calib = calibrate_budget(base, task, factor)
    rows = []
    for q in sorted(float(v) for v in qs):
        method = base.method
        if method == "grpo" and q != 0.0:
            method = "garl"
        for s in seeds:
            try:
                cfg = dataclasses.replace(base, method=method, q=q, seed=int(s), steps=budget, stop_on_escape=True)
                trace, _ = train(cfg, task)
                final = trace.rows[-1][4]
                rows.append((q, int(s), trace.status, trace.escape_step is not None, trace.escape_step, final, budget))
            except Exception as exc:  # recorded per row; the sweep goes on
                rows.append((q, int(s), f"error: {exc}", False, None, None, budget))
    return SweepResult(rows, budget, calib)
