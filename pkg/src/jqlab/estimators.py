"""Monte Carlo gradient estimators for the q-log loss over a prior sample pool.

Notation for a pool of M latents drawn from ``p(z | x)``::

    w_m  = p(y* | x, z_m)                       likelihood weight
    g_m  = -w_m * d log p(z_m, y* | x)          per-sample RL gradient
    wbar = mean(w)

* ``garl_plugin``   ``mean(g) / wbar**q``
* ``garl_rloo``     leave-one-out centred weights on the prior score
* ``paft``          ``-wbar**(1-q) * mean_k d log p(z_{r_k}, y* | x)`` with
  ``r_k`` resampled proportionally to ``w``

All weight arithmetic happens in log space. Outputs can be rescaled by
``M**-q`` (``normalized=True``), which bounds the per-sample advantage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .errors import ColdZeroError, DegeneratePoolError, DomainError, ParticleDegeneracyError
from .models import Enumeration, Example, GradientVector, LatentSeqModel, exact_grad_loss
from .qcore import check_q
from .seeding import as_generator


@dataclass
class SamplePool:
    """M prior-sampled latents with log weights and per-sample scores.

    Scores are stored in the local coordinates of the example's parameter
    block; ``param_index`` maps them into the full parameter vector.
    """

    latents: np.ndarray
    indices: np.ndarray
    log_w: np.ndarray
    s_prior: np.ndarray
    s_lik: np.ndarray
    param_index: np.ndarray
    n_params: int
    seed: int | None = None

    @property
    def M(self) -> int:
        return self.log_w.size

    @property
    def s_joint(self) -> np.ndarray:
        return self.s_prior + self.s_lik

    @property
    def log_wbar(self) -> float:
        """``log(mean(w))`` by log-sum-exp."""
        return float(logsumexp(self.log_w)) - math.log(self.M)

    @property
    def degenerate(self) -> bool:
        return not np.isfinite(self.log_w.max())

    @property
    def ess(self) -> float:
        """Effective sample size ``(sum w)**2 / sum w**2``; NaN for an all-zero pool."""
        if self.degenerate:
            return math.nan
        return float(math.exp(2.0 * logsumexp(self.log_w) - logsumexp(2.0 * self.log_w)))

    def embed(self, local: np.ndarray) -> np.ndarray:
        full = np.zeros(self.n_params)
        full[self.param_index] = local
        return full


@dataclass
class EstimatorOutput:
    """An estimate of ``d loss_q / d theta`` with its provenance."""

    gradient: GradientVector
    estimator: str
    q: float
    M: int
    K: int | None = None
    normalized: bool = False
    local: np.ndarray | None = None

    @property
    def values(self) -> np.ndarray:
        return self.gradient.values

    def normalize(self) -> "EstimatorOutput":
        """Apply the ``M**-q`` rescale used by the training algorithms."""
        if self.normalized:
            return self
        factor = float(self.M) ** (-self.q)
        grad = replace(self.gradient, values=self.gradient.values * factor)
        local = None if self.local is None else self.local * factor
        return replace(self, gradient=grad, normalized=True, local=local)


def pool_from_indices(en: Enumeration, indices, seed=None) -> SamplePool:
    """Pool over explicit latent indices of an enumeration."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.size < 1:
        raise DomainError("a pool needs at least one latent")
    return SamplePool(
        latents=en.latents[idx],
        indices=idx,
        log_w=en.log_lik[idx].copy(),
        s_prior=en.s_prior[idx],
        s_lik=en.s_lik[idx],
        param_index=en.param_index,
        n_params=en.n_params,
        seed=seed,
    )


def sample_prior(model: LatentSeqModel, ex: Example, M: int, rng, seed: int | None = None) -> SamplePool:
    """Draw M latents ancestrally from ``p(z | x)`` and attach exact weights.

    ``rng`` may be a Generator or an int seed; an int is also recorded as
    the pool's seed.
    """
    if M < 1:
        raise DomainError("M must be at least 1")
    if seed is None and isinstance(rng, (int, np.integer)):
        seed = int(rng)
    rng = as_generator(rng)
    en = model.enumerate(ex)
    z = model.sample_latents(ex.x, M, rng)
    return pool_from_indices(en, model.latent_index(z), seed=seed)


def _require_weight(pool: SamplePool, exc=DegeneratePoolError, q: float = 1.0):
    if pool.degenerate and q > 0.0:
        raise exc(f"all {pool.M} likelihood weights underflowed to zero")


def _output(pool, local, name, q, K=None, normalized=False) -> EstimatorOutput:
    out = EstimatorOutput(
        GradientVector(pool.embed(local), name, q, pool.M, pool.seed),
        name,
        q,
        pool.M,
        K=K,
        local=local,
    )
    return out.normalize() if normalized else out


def garl_plugin(pool: SamplePool, q: float, normalized: bool = False) -> EstimatorOutput:
    """Plug-in estimate ``mean(g) * wbar**(-q)``.

    q = 0 is the plain sample mean of ``g`` (unbiased for the q=0 gradient);
    q = 1 is the self-normalised importance-weighted average.
    """
    q = check_q(q)
    _require_weight(pool, q=q)
    if pool.degenerate:
        return _output(pool, np.zeros(pool.s_prior.shape[1]), "plugin", q, normalized=normalized)
    coef = np.exp(pool.log_w - math.log(pool.M) - q * pool.log_wbar)
    return _output(pool, -(coef @ pool.s_joint), "plugin", q, normalized=normalized)


def rloo_centered_weights(pool: SamplePool, q: float) -> np.ndarray:
    """``c_m = w_m / wbar**q - wbar_{-m}**(1-q)`` computed from log weights."""
    q = check_q(q)
    M = pool.M
    if M < 2:
        raise DomainError("the leave-one-out baseline needs M >= 2")
    _require_weight(pool, q=q)
    if pool.degenerate:
        return np.zeros(M)
    amp = np.exp(pool.log_w - q * pool.log_wbar)
    if q == 1.0:
        return amp - 1.0
    others = np.where(np.eye(M, dtype=bool), -np.inf, pool.log_w[None, :])
    loo = logsumexp(others, axis=1) - math.log(M - 1)
    return amp - np.exp((1.0 - q) * loo)


def garl_rloo(pool: SamplePool, q: float, normalized: bool = False) -> EstimatorOutput:
    """Plug-in estimate with a leave-one-out baseline on the score-function term.

    The pathwise part ``d w_m / wbar**q`` is applied as
    ``w_m / wbar**q * d log p(y* | x, z_m)``.
    """
    q = check_q(q)
    c = rloo_centered_weights(pool, q)
    amp = np.exp(pool.log_w - q * pool.log_wbar) if not pool.degenerate else np.zeros(pool.M)
    local = -(c @ pool.s_prior + amp @ pool.s_lik) / pool.M
    return _output(pool, local, "rloo", q, normalized=normalized)


def resample_indices(log_w: np.ndarray, K: int, rng) -> np.ndarray:
    """K draws with replacement from ``Categorical(logits=log_w)``."""
    if not np.isfinite(np.max(log_w)):
        raise ParticleDegeneracyError("cannot resample: every weight is zero")
    cdf = np.cumsum(np.exp(log_w - logsumexp(log_w)))
    u = as_generator(rng).random(K) * cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), log_w.size - 1)


def paft(pool: SamplePool, q: float, K: int | None = None, rng=None, normalized: bool = False) -> EstimatorOutput:
    """Importance-resampled teacher-forcing gradient attenuated by ``wbar**(1-q)``."""
    q = check_q(q)
    K = pool.M if K is None else int(K)
    if K < 1:
        raise DomainError("K must be at least 1")
    _require_weight(pool, ParticleDegeneracyError)
    r = resample_indices(pool.log_w, K, rng)
    atten = math.exp((1.0 - q) * pool.log_wbar)
    local = -atten * pool.s_joint[r].mean(axis=0)
    return _output(pool, local, "paft", q, K=K, normalized=normalized)


def paft_conditional_mean(pool: SamplePool, q: float, normalized: bool = False) -> EstimatorOutput:
    """Expectation of :func:`paft` over the resampling step, given the pool."""
    q = check_q(q)
    _require_weight(pool, ParticleDegeneracyError)
    snis = np.exp(pool.log_w - logsumexp(pool.log_w))
    local = -math.exp((1.0 - q) * pool.log_wbar) * (snis @ pool.s_joint)
    return _output(pool, local, "paft_mean", q, normalized=normalized)


def weight_moments(model: LatentSeqModel, ex: Example):
    """Exact moments of ``(w, g)`` under the prior.

    Returns ``(mu_w, var_w, mu_g, cov_gw)`` with vectors in local coordinates.
    """
    en = model.enumerate(ex)
    prior = np.exp(en.log_prior)
    w = np.exp(en.log_lik)
    g = -w[:, None] * en.s_joint
    mu_w = float(prior @ w)
    var_w = float(prior @ (w - mu_w) ** 2)
    mu_g = prior @ g
    cov = prior @ ((g - mu_g) * (w - mu_w)[:, None])
    return mu_w, var_w, mu_g, cov


def predicted_bias(model: LatentSeqModel, ex: Example, q: float, M: int) -> GradientVector:
    """Leading-order finite-M bias of :func:`garl_plugin`.

    ``q / (M P**(q+1)) * [(q+1)/2 * grad_l1 * Var(w) - Cov(g, w)]`` with the
    moments computed exactly by enumeration over the prior.
    """
    q = check_q(q)
    if M < 1:
        raise DomainError("M must be at least 1")
    en = model.enumerate(ex)
    mu_w, var_w, mu_g, cov = weight_moments(model, ex)
    if mu_w == 0.0:
        raise ColdZeroError("marginal underflowed to zero")
    grad_l1 = -(en.posterior() @ en.s_joint)
    bracket = 0.5 * (q + 1.0) * grad_l1 * var_w - cov
    local = q / (M * mu_w ** (q + 1.0)) * bracket
    return GradientVector(en.embed(local), "predicted_bias", q, M)


def exact_plugin_mean(model: LatentSeqModel, ex: Example, q: float, M: int) -> np.ndarray:
    """Exact ``E[garl_plugin]`` at finite M by summing over all count vectors.

    Exponential in the number of latents; meant as an oracle for tiny models.
    Returns local coordinates.
    """
    from itertools import combinations_with_replacement

    from scipy.special import gammaln

    q = check_q(q)
    en = model.enumerate(ex)
    nz = en.latents.shape[0]
    log_prior = en.log_prior
    w = np.exp(en.log_lik)
    g = -w[:, None] * en.s_joint
    total = np.zeros(en.s_joint.shape[1])
    for combo in combinations_with_replacement(range(nz), M):
        counts = np.bincount(combo, minlength=nz)
        logp = gammaln(M + 1) - gammaln(counts + 1).sum() + counts @ log_prior
        wbar = counts @ w / M
        if wbar == 0.0:
            continue
        total += math.exp(logp) * (counts @ g / M) * wbar ** (-q)
    return total


def exact_local_grad(model: LatentSeqModel, ex: Example, q: float) -> np.ndarray:
    en = model.enumerate(ex)
    return exact_grad_loss(model, ex, q).values[en.param_index]
