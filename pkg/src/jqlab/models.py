"""Enumerable models with exact marginals and exact gradients.

Three model classes share one small duck-typed surface::

    params                       flat parameter vector (copy)
    with_params(vec)             new model with replaced parameters
    success_prob(ex)             P = p(y* | x*)
    grad_success_prob(ex)        dP/dtheta
    score(ex)                    d log P / dtheta

:class:`LatentSeqModel` is the workhorse: tabular softmax conditionals for a
latent chain ``z`` (length L over V_z tokens) followed by an output chain
``y`` (length T over V_y tokens). Both chains are autoregressive on the
previous token; every output position additionally conditions on the last
latent token. All logit tables are indexed by the input id ``x``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from . import _kernels
from .errors import ColdZeroError, DomainError, EnumerationCapError
from .qcore import check_q, check_simplex, loss_q
from .seeding import as_generator

DEFAULT_CAP = 4096
FD_STEP = 1e-5
FORMAT_TAG = "jqlab-latentseq/1"


@dataclass(frozen=True)
class Example:
    """One supervised pair: input id and target output tokens."""

    x: int
    target: tuple[int, ...]
    corrupted: bool = False

    def __post_init__(self):
        object.__setattr__(self, "target", tuple(int(t) for t in self.target))


@dataclass
class GradientVector:
    """Parameter-space vector plus provenance."""

    values: np.ndarray
    op: str
    q: float | None = None
    M: int | None = None
    seed: int | None = None

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return len(self.values)


# --------------------------------------------------------------------------
# scalar models
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SigmoidModel:
    """``P(theta) = sigmoid(theta)``; the score is ``1 - P``."""

    theta: float = 0.0

    n_params = 1

    @property
    def params(self) -> np.ndarray:
        return np.array([self.theta], dtype=float)

    def with_params(self, vec) -> "SigmoidModel":
        return SigmoidModel(float(np.asarray(vec, dtype=float).ravel()[0]))

    def success_prob(self, ex=None) -> float:
        return math.exp(self.log_success_prob())

    def log_success_prob(self, ex=None) -> float:
        return -float(np.logaddexp(0.0, -self.theta))

    def grad_success_prob(self, ex=None) -> np.ndarray:
        p = self.success_prob()
        return np.array([p * (1.0 - p)])

    def score(self, ex=None) -> np.ndarray:
        return np.array([1.0 - self.success_prob()])


@dataclass(frozen=True, eq=False)
class CategoricalModel:
    """Softmax over K categories, trained against empirical frequencies ``alpha``.

    ``success_prob(ex)`` is the probability of category ``ex.target[0]``.
    """

    logits: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=float)
        alpha = check_simplex(self.alpha)
        if logits.shape != alpha.shape:
            raise DomainError("logits and alpha must have the same length")
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "alpha", alpha)

    @property
    def n_params(self) -> int:
        return self.logits.size

    @property
    def params(self) -> np.ndarray:
        return self.logits.copy()

    def with_params(self, vec) -> "CategoricalModel":
        return CategoricalModel(np.asarray(vec, dtype=float).copy(), self.alpha)

    def probs(self) -> np.ndarray:
        return softmax(self.logits)

    def success_prob(self, ex: Example) -> float:
        return float(self.probs()[ex.target[0]])

    def log_success_prob(self, ex: Example) -> float:
        return float(log_softmax(self.logits)[ex.target[0]])

    def score(self, ex: Example) -> np.ndarray:
        s = -self.probs()
        s[ex.target[0]] += 1.0
        return s

    def grad_success_prob(self, ex: Example) -> np.ndarray:
        return self.success_prob(ex) * self.score(ex)

    def objective(self, q: float) -> float:
        """Frequency-weighted loss ``sum_j alpha_j * loss_q(theta_j)``."""
        return float(np.dot(self.alpha, loss_q(self.probs(), q)))

    def objective_grad(self, q: float) -> np.ndarray:
        """Gradient of :meth:`objective` with respect to the logits."""
        q = check_q(q)
        p = self.probs()
        # d loss_q(p_j) / d logits = -p_j**(1-q) * (e_j - p)
        c = self.alpha * p ** (1.0 - q)
        return -(c - c.sum() * p)


# --------------------------------------------------------------------------
# latent sequence model
# --------------------------------------------------------------------------

@dataclass
class Enumeration:
    """Every latent sequence of one example with its exact log-terms and scores.

    ``s_prior[i]`` is ``d log p(z_i | x) / d theta`` and ``s_lik[i]`` is
    ``d log p(y* | x, z_i) / d theta``, both restricted to the parameters of
    input ``x`` (listed in ``param_index``).
    """

    latents: np.ndarray
    log_prior: np.ndarray
    log_lik: np.ndarray
    s_prior: np.ndarray
    s_lik: np.ndarray
    param_index: np.ndarray
    n_params: int

    @property
    def log_joint(self) -> np.ndarray:
        return self.log_prior + self.log_lik

    @property
    def log_marginal(self) -> float:
        return float(logsumexp(self.log_joint))

    @property
    def s_joint(self) -> np.ndarray:
        return self.s_prior + self.s_lik

    def embed(self, local: np.ndarray) -> np.ndarray:
        full = np.zeros(self.n_params)
        full[self.param_index] = local
        return full

    def posterior(self) -> np.ndarray:
        lj = self.log_joint
        if not np.isfinite(lj.max()):
            raise ColdZeroError("marginal underflowed to zero")
        return np.exp(lj - logsumexp(lj))


@dataclass(frozen=True, eq=False)
class LatentSeqModel:
    """Tabular autoregressive latent-variable model.

    prior_logits : (X, L, V_z + 1, V_z)
        ``p(z_l | x, z_{l-1})``; previous-token index ``V_z`` marks l = 0.
    out_logits : (X, T, V_z, V_y + 1, V_y)
        ``p(y_t | x, z_{L-1}, y_{t-1})``; previous-token index ``V_y`` marks t = 0.
    """

    prior_logits: np.ndarray
    out_logits: np.ndarray
    cap: int = DEFAULT_CAP
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        pl = np.array(self.prior_logits, dtype=float)
        ol = np.array(self.out_logits, dtype=float)
        if pl.ndim != 4 or ol.ndim != 5:
            raise DomainError("prior_logits must be 4-d and out_logits 5-d")
        x, _, vz1, vz = pl.shape
        if vz1 != vz + 1 or vz < 1:
            raise DomainError("prior_logits must have shape (X, L, V_z + 1, V_z)")
        if ol.shape[0] != x or ol.shape[2] != vz or ol.shape[3] != ol.shape[4] + 1:
            raise DomainError("out_logits must have shape (X, T, V_z, V_y + 1, V_y)")
        pl.setflags(write=False)
        ol.setflags(write=False)
        object.__setattr__(self, "prior_logits", pl)
        object.__setattr__(self, "out_logits", ol)

    # ---- dimensions -------------------------------------------------------
    @property
    def n_inputs(self) -> int:
        return self.prior_logits.shape[0]

    @property
    def latent_len(self) -> int:
        return self.prior_logits.shape[1]

    @property
    def latent_vocab(self) -> int:
        return self.prior_logits.shape[3]

    @property
    def out_len(self) -> int:
        return self.out_logits.shape[1]

    @property
    def out_vocab(self) -> int:
        return self.out_logits.shape[4]

    @property
    def n_latents(self) -> int:
        return self.latent_vocab**self.latent_len

    @property
    def n_params(self) -> int:
        return self.prior_logits.size + self.out_logits.size

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.prior_logits.ravel(), self.out_logits.ravel()])

    def with_params(self, vec) -> "LatentSeqModel":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_params,):
            raise DomainError(f"expected {self.n_params} parameters, got {vec.shape}")
        n = self.prior_logits.size
        return LatentSeqModel(
            vec[:n].reshape(self.prior_logits.shape),
            vec[n:].reshape(self.out_logits.shape),
            cap=self.cap,
        )

    def param_block(self, x: int) -> np.ndarray:
        """Flat indices of every parameter that input ``x`` touches."""
        pb = self.prior_logits[0].size
        ob = self.out_logits[0].size
        n_prior = self.prior_logits.size
        return np.concatenate(
            [np.arange(x * pb, (x + 1) * pb), n_prior + np.arange(x * ob, (x + 1) * ob)]
        )

    # ---- cached conditionals ---------------------------------------------
    def _tables(self):
        if "tables" not in self._cache:
            lp = log_softmax(self.prior_logits, axis=-1)
            lo = log_softmax(self.out_logits, axis=-1)
            self._cache["tables"] = (lp, lo, np.exp(lp), np.exp(lo))
        return self._cache["tables"]

    def _latents(self) -> np.ndarray:
        if "latents" not in self._cache:
            grids = np.indices((self.latent_vocab,) * self.latent_len)
            self._cache["latents"] = grids.reshape(self.latent_len, -1).T.copy()
        return self._cache["latents"]

    def _check(self, ex: Example):
        if not (0 <= ex.x < self.n_inputs):
            raise DomainError(f"input id {ex.x} out of range")
        if len(ex.target) != self.out_len:
            raise DomainError(f"target length {len(ex.target)} != output length {self.out_len}")
        if any(not (0 <= t < self.out_vocab) for t in ex.target):
            raise DomainError("target token out of range")

    # ---- exact enumeration -----------------------------------------------
    def enumerate(self, ex: Example) -> Enumeration:
        """Exact log-terms and per-latent scores for ``ex``."""
        self._check(ex)
        if self.n_latents > self.cap:
            raise EnumerationCapError(
                f"latent space {self.n_latents} exceeds enumeration cap {self.cap}"
            )
        key = ("enum", ex.x, ex.target)
        if key in self._cache:
            return self._cache[key]
        lp, lo, pp, po = self._tables()
        x = ex.x
        vz, vy, L, T = self.latent_vocab, self.out_vocab, self.latent_len, self.out_len
        z = self._latents()
        nz = z.shape[0]
        ar = np.arange(nz)

        prev = np.column_stack([np.full(nz, vz), z[:, :-1]])
        pos = np.broadcast_to(np.arange(L), (nz, L))
        log_prior = lp[x, pos, prev, z].sum(axis=1)
        sp = np.zeros((nz, L, vz + 1, vz))
        for l in range(L):
            sp[ar, l, prev[:, l], z[:, l]] += 1.0
            sp[ar, l, prev[:, l]] -= pp[x, l, prev[:, l]]

        y = np.asarray(ex.target)
        yprev = np.concatenate([[vy], y[:-1]])
        c = z[:, -1]
        log_lik = np.zeros(nz)
        so = np.zeros((nz, T, vz, vy + 1, vy))
        for t in range(T):
            log_lik += lo[x, t, c, yprev[t], y[t]]
            so[ar, t, c, yprev[t], y[t]] += 1.0
            so[ar, t, c, yprev[t]] -= po[x, t, c, yprev[t]]

        dp = sp[0].size
        s_prior = np.zeros((nz, dp + so[0].size))
        s_lik = np.zeros_like(s_prior)
        s_prior[:, :dp] = sp.reshape(nz, -1)
        s_lik[:, dp:] = so.reshape(nz, -1)
        out = Enumeration(
            latents=z,
            log_prior=log_prior,
            log_lik=log_lik,
            s_prior=s_prior,
            s_lik=s_lik,
            param_index=self.param_block(x),
            n_params=self.n_params,
        )
        self._cache[key] = out
        return out

    def log_success_prob(self, ex: Example) -> float:
        return self.enumerate(ex).log_marginal

    def success_prob(self, ex: Example) -> float:
        return math.exp(self.log_success_prob(ex))

    def success_prob_linear(self, ex: Example) -> float:
        """Marginal summed in linear space; cross-check for the log-space path."""
        en = self.enumerate(ex)
        return float(np.sum(np.exp(en.log_prior) * np.exp(en.log_lik)))

    def grad_success_prob(self, ex: Example) -> np.ndarray:
        """``dP/dtheta = sum_z p(z, y*) * d log p(z, y*)``, accumulated in linear space."""
        en = self.enumerate(ex)
        return en.embed(np.exp(en.log_joint) @ en.s_joint)

    def score(self, ex: Example) -> np.ndarray:
        """``d log P`` as a posterior-weighted average of joint scores."""
        en = self.enumerate(ex)
        return en.embed(en.posterior() @ en.s_joint)

    # ---- sampling ----------------------------------------------------------
    def sample_latents(self, x: int, M: int, rng) -> np.ndarray:
        """Ancestral samples of ``z ~ p(. | x)``; returns token array (M, L)."""
        rng = as_generator(rng)
        _, _, pp, _ = self._tables()
        cdf = np.cumsum(pp[x], axis=-1)[:, None]
        u = rng.random((M, self.latent_len))
        return _kernels.sample_chains(cdf, np.zeros(M, dtype=np.int64), u)

    def sample_outputs(self, x: int, latents: np.ndarray, rng) -> np.ndarray:
        """Ancestral samples of ``y ~ p(. | x, z)`` for each latent row."""
        rng = as_generator(rng)
        _, _, _, po = self._tables()
        cdf = np.cumsum(po[x], axis=-1)
        u = rng.random((latents.shape[0], self.out_len))
        return _kernels.sample_chains(cdf, latents[:, -1], u)

    def latent_index(self, latents: np.ndarray) -> np.ndarray:
        radix = self.latent_vocab ** np.arange(self.latent_len - 1, -1, -1)
        return latents @ radix


# --------------------------------------------------------------------------
# exact oracles
# --------------------------------------------------------------------------

def exact_marginal(model: LatentSeqModel, ex: Example) -> float:
    """Exact ``P = sum_z p(z|x) p(y*|x,z)`` with log-sum-exp accumulation."""
    return model.success_prob(ex)


def _log_p(model, ex) -> float:
    if hasattr(model, "log_success_prob"):
        lp = model.log_success_prob(ex)
    else:
        lp = math.log(model.success_prob(ex)) if model.success_prob(ex) > 0 else -math.inf
    if lp == -math.inf:
        raise ColdZeroError("success probability underflowed to zero")
    return lp


def exact_grad_loss(model, ex: Example | None, q: float) -> GradientVector:
    """Exact gradient of ``-log_q P``, as ``-P**(1-q) * score``."""
    q = check_q(q)
    lp = _log_p(model, ex)
    return GradientVector(-math.exp((1.0 - q) * lp) * model.score(ex), "exact_grad_loss", q)


def score(model, ex: Example | None) -> GradientVector:
    """Exact ``d log P / d theta``."""
    _log_p(model, ex)
    return GradientVector(np.asarray(model.score(ex), dtype=float), "score")


def finite_diff_grad(model, ex: Example | None, q: float, h: float = FD_STEP) -> GradientVector:
    """Central differences of ``loss_q(P)`` in every parameter.

    ``ex=None`` on a :class:`CategoricalModel` differentiates the
    frequency-weighted objective instead.
    """
    if h <= 0:
        raise DomainError("finite-difference step must be positive")
    q = check_q(q)
    theta = model.params

    if ex is None and isinstance(model, CategoricalModel):
        def f(vec):
            return model.with_params(vec).objective(q)
    else:
        def f(vec):
            return loss_q(model.with_params(vec).success_prob(ex), q)

    grad = np.empty_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (f(up) - f(dn)) / (2.0 * h)
    return GradientVector(grad, "finite_diff_grad", q)


def expected_reward(model: LatentSeqModel, ex: Example, samples: int, rng) -> tuple[float, float]:
    """Monte Carlo exact-match reward of full rollouts, paired with the exact marginal."""
    if samples < 1:
        raise DomainError("need at least one sample")
    rng = as_generator(rng)
    z = model.sample_latents(ex.x, samples, rng)
    y = model.sample_outputs(ex.x, z, rng)
    hits = np.all(y == np.asarray(ex.target)[None, :], axis=1)
    return float(hits.mean()), exact_marginal(model, ex)


# --------------------------------------------------------------------------
# construction helpers
# --------------------------------------------------------------------------

def random_latent_model(
    rng,
    n_inputs: int = 1,
    latent_vocab: int = 3,
    latent_len: int = 2,
    out_vocab: int = 3,
    out_len: int = 2,
    scale: float = 1.0,
    cap: int = DEFAULT_CAP,
) -> LatentSeqModel:
    """Model with i.i.d. normal logits of standard deviation ``scale``."""
    rng = as_generator(rng)
    pl = scale * rng.standard_normal((n_inputs, latent_len, latent_vocab + 1, latent_vocab))
    ol = scale * rng.standard_normal((n_inputs, out_len, latent_vocab, out_vocab + 1, out_vocab))
    return LatentSeqModel(pl, ol, cap=cap)


def mean_marginal(model: LatentSeqModel, dataset: Sequence[Example]) -> float:
    return float(np.mean([exact_marginal(model, ex) for ex in dataset]))


def calibrate_temperature(
    build: Callable[[float], LatentSeqModel],
    dataset: Sequence[Example],
    p0: float,
    lo: float = -50.0,
    hi: float = 50.0,
    rel: float = 1e-3,
    max_iter: int = 200,
) -> tuple[float, LatentSeqModel]:
    """Bisection on a temperature ``tau`` so the mean marginal hits ``p0``.

    ``build(tau)`` must give a mean marginal that decreases in ``tau``.
    Stops once the relative miss is below ``rel``.
    """
    f_lo, f_hi = mean_marginal(build(lo), dataset), mean_marginal(build(hi), dataset)
    if not (f_hi <= p0 <= f_lo):
        raise DomainError(f"p0={p0} unreachable: marginal spans [{f_hi}, {f_lo}]")
    model = build(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        model = build(mid)
        val = mean_marginal(model, dataset)
        if abs(val - p0) <= rel * p0:
            return mid, model
        if val > p0:
            lo = mid
        else:
            hi = mid
    return mid, model


def temperature_tables(
    rng,
    dataset: Sequence[Example],
    n_inputs: int,
    latent_vocab: int,
    latent_len: int,
    out_vocab: int,
    out_len: int,
    prior_scale: float = 0.5,
    spread: float = 0.3,
):
    """Fixed logit tables for a temperature-scaled task model.

    Returns ``(prior_logits, base)`` where ``base`` is a signed output table:
    the target token of each input carries a negative entry (its depth
    depends on the conditioning latent token), every other token a
    non-negative one. ``tau * base`` therefore makes targets less likely as
    ``tau`` grows, and ``tau = 0`` is the uniform output table.
    """
    rng = as_generator(rng)
    prior = prior_scale * rng.standard_normal((n_inputs, latent_len, latent_vocab + 1, latent_vocab))
    base = spread * np.abs(rng.standard_normal((n_inputs, out_len, latent_vocab, out_vocab + 1, out_vocab)))
    depth = 1.0 + 0.5 * rng.random((n_inputs, 1, latent_vocab, 1))
    targets = {}
    for ex in dataset:
        targets.setdefault(ex.x, ex.target)
    for x, y in targets.items():
        for t, tok in enumerate(y):
            base[x, t, :, :, tok] = -depth[x, 0, :, 0][:, None]
    return prior, base


def cold_start_model(
    p0: float,
    dataset: Sequence[Example],
    rng,
    n_inputs: int,
    latent_vocab: int = 3,
    latent_len: int = 2,
    out_vocab: int = 4,
    out_len: int = 2,
    cap: int = DEFAULT_CAP,
) -> tuple[float, LatentSeqModel]:
    """Model whose mean exact marginal over ``dataset`` is ``p0`` (within 0.1%)."""
    prior, base = temperature_tables(
        rng, dataset, n_inputs, latent_vocab, latent_len, out_vocab, out_len
    )

    def build(tau):
        return LatentSeqModel(prior, tau * base, cap=cap)

    return calibrate_temperature(build, dataset, p0)


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def _floats(arr: np.ndarray) -> str:
    return "[" + ", ".join(format(float(v), ".17g") for v in arr.ravel()) + "]"


def dumps_model(model: LatentSeqModel) -> str:
    """Plain-text JSON document; logits row-major with 17 significant digits."""
    dims = {
        "n_inputs": model.n_inputs,
        "latent_vocab": model.latent_vocab,
        "latent_len": model.latent_len,
        "out_vocab": model.out_vocab,
        "out_len": model.out_len,
    }
    return (
        "{\n"
        f'  "format": "{FORMAT_TAG}",\n'
        f'  "dims": {json.dumps(dims, sort_keys=True)},\n'
        f'  "enumeration_cap": {int(model.cap)},\n'
        f'  "prior_logits": {_floats(model.prior_logits)},\n'
        f'  "out_logits": {_floats(model.out_logits)}\n'
        "}\n"
    )


def loads_model(text: str) -> LatentSeqModel:
    doc = json.loads(text)
    if doc.get("format") != FORMAT_TAG:
        raise DomainError(f"unknown model format {doc.get('format')!r}")
    d = doc["dims"]
    x, vz, L, vy, T = d["n_inputs"], d["latent_vocab"], d["latent_len"], d["out_vocab"], d["out_len"]
    prior = np.array(doc["prior_logits"], dtype=float).reshape(x, L, vz + 1, vz)
    out = np.array(doc["out_logits"], dtype=float).reshape(x, T, vz, vy + 1, vy)
    return LatentSeqModel(prior, out, cap=int(doc.get("enumeration_cap", DEFAULT_CAP)))


def save_model(model: LatentSeqModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(model))


def load_model(path) -> LatentSeqModel:
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())
