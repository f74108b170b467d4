"""Closed-form mathematics of the Tsallis q-log loss family.

The family is indexed by the commitment ``q`` in ``[0, 1]``::

    log_q(u) = (u**(1 - q) - 1) / (1 - q),   log_1(u) = log(u)
    loss_q(p) = -log_q(p)

``q = 0`` gives the bounded loss ``1 - p``; ``q = 1`` gives ``-log p``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ColdZeroError, DomainError

#: below this distance from q = 1 the expm1 form replaces the direct quotient
STABLE_BRANCH = 1e-4

SIMPLEX_ATOL = 1e-12
SIMPLEX_RENORM = 1e-9


def check_q(q: float) -> float:
    """Validate a commitment parameter and return it as a float."""
    q = float(q)
    if not (0.0 <= q <= 1.0):
        raise DomainError(f"q must lie in [0, 1], got {q!r}")
    return q


def check_prob(p, name: str = "p"):
    """Validate success probabilities in (0, 1]; zero raises ColdZeroError."""
    arr = np.asarray(p, dtype=float)
    if np.any(np.isnan(arr)):
        raise DomainError(f"{name} contains NaN")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"{name} must lie in (0, 1], got {p!r}")
    if np.any(arr == 0.0):
        raise ColdZeroError(f"{name} is exactly zero")
    return arr


def check_simplex(weights: Sequence[float]) -> np.ndarray:
    """Return ``weights`` as a probability vector.

    Sums within 1e-12 of one are accepted as is, drift up to 1e-9 is
    renormalized away, anything beyond is rejected.
    """
    w = np.array(weights, dtype=float)
    if w.ndim != 1 or w.size < 2:
        raise DomainError("a simplex point needs at least two coordinates")
    if np.any(~np.isfinite(w)) or np.any(w < 0.0):
        raise DomainError(f"simplex coordinates must be finite and >= 0: {weights!r}")
    drift = abs(w.sum() - 1.0)
    if drift > SIMPLEX_RENORM:
        raise DomainError(f"weights sum to {float(w.sum()):.12g}, not 1")
    if drift > SIMPLEX_ATOL:
        w = w / w.sum()
    return w


def q_log(u, q: float):
    """Tsallis q-logarithm of ``u`` in (0, 1].

    Accepts scalars or arrays. Near ``q = 1`` the quotient is evaluated as
    ``expm1((1 - q) log u) / (1 - q)``, which is continuous into the
    natural-log branch.
    """
    q = check_q(q)
    arr = check_prob(u, "u")
    logu = np.log(arr)
    one_minus_q = 1.0 - q
    if one_minus_q == 0.0:
        out = logu
    elif one_minus_q < STABLE_BRANCH:
        out = np.expm1(one_minus_q * logu) / one_minus_q
    else:
        out = (arr**one_minus_q - 1.0) / one_minus_q
    return float(out) if np.ndim(out) == 0 else out


def loss_q(p, q: float):
    """Per-example loss ``-log_q(p)``; zero at p = 1, at most 1/(1-q) for q < 1."""
    out = -np.asarray(q_log(p, q))
    return float(out) if out.ndim == 0 else out


def dataset_loss(probs: Sequence[float], q: float) -> float:
    """Arithmetic mean of :func:`loss_q` over a list of success probabilities."""
    arr = np.asarray(probs, dtype=float)
    if arr.size == 0:
        raise DomainError("dataset_loss needs at least one example")
    return float(np.mean(loss_q(arr.ravel(), q)))


def dispersion_bound_check(probs: Sequence[float], q: float) -> tuple[float, float, float]:
    """Jensen gap between the dataset loss and the loss of the mean probability.

    Returns ``(lhs, rhs, gap)`` with ``lhs = dataset_loss(probs, q)`` and
    ``rhs = -log_q(mean(probs))``. For q > 0 the loss is strictly convex, so
    ``gap >= 0`` with equality only for constant lists.
    """
    q = check_q(q)
    if q == 0.0:
        raise DomainError("the dispersion bound is stated for q > 0")
    arr = np.asarray(probs, dtype=float)
    lhs = dataset_loss(arr, q)
    rhs = loss_q(float(np.mean(arr)), q)
    return lhs, rhs, lhs - rhs


def escort_minimizer(alpha: Sequence[float], q: float) -> np.ndarray:
    """Minimizer over the simplex of ``sum_j alpha_j * loss_q(theta_j)``.

    For q > 0 this is the escort distribution of order 1/q,
    ``alpha**(1/q) / sum(alpha**(1/q))``, evaluated in log space so small q
    does not underflow. For q = 0 the objective is linear and the vertex at
    ``argmax(alpha)`` is returned; ties go to the lowest index.
    """
    q = check_q(q)
    a = check_simplex(alpha)
    if q == 0.0:
        out = np.zeros_like(a)
        out[int(np.argmax(a))] = 1.0
        return out
    if np.any(a == 0.0):
        raise DomainError("escort of order 1/q needs strictly positive alpha")
    z = np.log(a) / q
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def categorical_objective(theta: Sequence[float], alpha: Sequence[float], q: float) -> float:
    """``sum_j alpha_j * loss_q(theta_j)`` for a categorical prediction ``theta``."""
    a = check_simplex(alpha)
    t = check_simplex(theta)
    return float(np.dot(a, loss_q(t, q)))
