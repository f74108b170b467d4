"""Success-probability dynamics under gradient flow on the q-log loss.

For one example with score ``s``, gradient flow gives ``pdot = p**(2-q) |s|**2``.
On the sigmoid model ``|s|**2 = (1-p)**2``; the two-label noise model
tracks the contamination ``pt = 1 - p`` with

    pt_dot = [eps * pt**(-q) - (1-eps) * (1-pt)**(-q)] * (1-pt)**2 * pt**2

(and ``pt**0 == 1`` at q = 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import DomainError, UnreachableTargetError
from .models import Example, exact_grad_loss
from .qcore import check_q

RTOL = 1e-9
ATOL = 1e-12
EQUILIBRIUM_RATE = 1e-14
EQUILIBRIUM_STEPS = 10
STALL_FACTOR = 10.0
MAX_STEPS = 2_000_000
QUAD_RTOL = 1e-10

REACHED = "reached-target"
EXHAUSTED = "budget-exhausted"
EQUILIBRIUM = "equilibrium"

# Dormand-Prince 5(4)
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_E = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))


@dataclass
class DynamicsTrace:
    """Time series of a scalar flow plus threshold crossing times."""

    t: np.ndarray
    p: np.ndarray
    pdot: np.ndarray
    status: str
    crossings: dict = field(default_factory=dict)

    @property
    def crossing_time(self) -> float | None:
        """Crossing time of the primary (first requested) threshold."""
        return next(iter(self.crossings.values()), None)

    def rows(self):
        """``(t, p, pdot_predicted, pdot_measured)``; measured is a forward difference."""
        measured = np.full_like(self.p, np.nan)
        dt = np.diff(self.t)
        measured[:-1] = np.diff(self.p) / dt
        return [tuple(r) for r in zip(self.t, self.p, self.pdot, measured)]


@dataclass
class NoiseTrace(DynamicsTrace):
    equilibrium: float = math.nan

    @property
    def ptilde(self) -> np.ndarray:
        return self.p


def _hermite_root(t0, y0, f0, t1, y1, f1, level):
    h = t1 - t0

    def H(s):
        s2, s3 = s * s, s * s * s
        return (
            (2 * s3 - 3 * s2 + 1) * y0
            + (s3 - 2 * s2 + s) * h * f0
            + (-2 * s3 + 3 * s2) * y1
            + (s3 - s2) * h * f1
            - level
        )

    if H(0.0) == 0.0:
        return t0
    if H(1.0) == 0.0:
        return t1
    s = brentq(H, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return t0 + s * h


def integrate_scalar(
    rhs: Callable[[float], float],
    y0: float,
    levels: Sequence[float],
    t_max: float,
    rtol: float = RTOL,
    atol: float = ATOL,
    stop_at_first: bool = True,
    detect_equilibrium: bool = False,
    trace_cls=DynamicsTrace,
) -> DynamicsTrace:
    """Adaptive Dormand-Prince integration of ``y' = rhs(y)`` from t = 0.

    Crossing times of each level (either direction) come from cubic Hermite
    interpolation on the accepted step. Stops at the first crossing of
    ``levels[0]`` if ``stop_at_first``, when ``t_max`` is reached, or, with
    ``detect_equilibrium``, after ten consecutive accepted steps that are
    quiet: ``|y'| < 1e-14 * |y|`` or ``|dy| <= 10 * (atol + rtol * |y|)``. Both tests
    scale with ``y`` so slow growth from a tiny start is not mistaken for a
    stall; the second catches the tolerance-level jitter of an explicit
    method parked on a stiff equilibrium, where the rate never gets that small.
    """
    t, y = 0.0, float(y0)
    f = rhs(y)
    ts, ys, fs = [t], [y], [f]
    crossings = {float(lv): None for lv in levels}
    primary = float(levels[0]) if levels else None
    h = 0.01 * max(abs(y), atol) / abs(f) if f != 0.0 else 1.0
    h = min(h, t_max)
    quiet = 0
    status = EXHAUSTED
    for _ in range(MAX_STEPS):
        if t >= t_max:
            break
        h = min(h, t_max - t)
        k = [f]
        for i in range(1, 7):
            yi = y + h * sum(a * kk for a, kk in zip(_A[i], k))
            k.append(rhs(yi))
        y_new = y + h * sum(b * kk for b, kk in zip(_B5, k))
        err_abs = abs(h * sum(e * kk for e, kk in zip(_E, k)))
        scale = atol + rtol * max(abs(y), abs(y_new))
        err = err_abs / scale
        if not np.isfinite(err):
            h *= 0.1
            continue
        if err <= 1.0:
            t_new, f_new = t + h, k[6]
            moved = abs(y_new - y)
            for lv in crossings:
                if crossings[lv] is None and (y - lv) * (y_new - lv) <= 0.0 and y != lv:
                    crossings[lv] = _hermite_root(t, y, f, t_new, y_new, f_new, lv)
            t, y, f = t_new, y_new, f_new
            ts.append(t)
            ys.append(y)
            fs.append(f)
            if stop_at_first and primary is not None and crossings[primary] is not None:
                status = REACHED
                break
            if detect_equilibrium:
                level = max(abs(y), atol)
                still = abs(f) < EQUILIBRIUM_RATE * level or moved <= STALL_FACTOR * (atol + rtol * abs(y))
                quiet = quiet + 1 if still else 0
                if quiet >= EQUILIBRIUM_STEPS:
                    status = EQUILIBRIUM
                    break
        factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        h *= factor
    return trace_cls(np.array(ts), np.array(ys), np.array(fs), status, crossings)


def _atol(y0: float) -> float:
    # a fixed 1e-12 floor would swamp the relative tolerance for starts below ~1e-3
    return min(ATOL, RTOL * y0)


# --------------------------------------------------------------------------
# clean escape on the sigmoid model
# --------------------------------------------------------------------------

def sigmoid_rate(q: float) -> Callable[[float], float]:
    def rhs(p):
        return p ** (2.0 - q) * (1.0 - p) ** 2

    return rhs


def integrate_sigmoid_flow(q: float, p0: float, delta: float, budget: float, extra_levels=()) -> DynamicsTrace:
    """Integrate ``pdot = p**(2-q) (1-p)**2`` from ``p0`` until ``p`` reaches ``delta``.

    Running out of ``budget`` (a time horizon) returns a trace flagged
    ``budget-exhausted`` rather than raising.
    """
    q = check_q(q)
    if not (0.0 < p0 < delta <= 0.5):
        raise DomainError("need 0 < p0 < delta <= 1/2")
    if budget <= 0:
        raise DomainError("budget must be positive")
    return integrate_scalar(sigmoid_rate(q), p0, [delta, *extra_levels], budget, atol=_atol(p0))


def exact_sigmoid_time(q: float, p0: float, delta: float) -> float:
    """Escape time ``int_{p0}^{delta} du / (u**(2-q) (1-u)**2)`` by adaptive quadrature.

    Integrated in ``v = log u`` so the integrand stays smooth as ``p0 -> 0``.
    """
    q = check_q(q)
    if not (0.0 < p0 <= delta < 1.0):
        raise DomainError("need 0 < p0 <= delta < 1")
    if p0 == delta:
        return 0.0

    def integrand(v):
        u = math.exp(v)
        return u ** (q - 1.0) / (1.0 - u) ** 2

    val, _ = quad(integrand, math.log(p0), math.log(delta), epsabs=0.0, epsrel=QUAD_RTOL, limit=500)
    return val


def lower_bound_time(q: float, p0: float, delta: float, C: float = 1.0) -> float:
    """``(1/C**2) int_{p0}^{delta} u**-(2-q) du`` in closed form."""
    q = check_q(q)
    if q == 1.0:
        return math.log(delta / p0) / C**2
    return (p0 ** (q - 1.0) - delta ** (q - 1.0)) / ((1.0 - q) * C**2)


def _linfit(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(r2)


def _check_grid(grid, min_points=4, min_decades=3.0):
    g = np.asarray(grid, dtype=float)
    if g.size < min_points:
        raise DomainError(f"need at least {min_points} grid points, got {g.size}")
    if np.any(g <= 0):
        raise DomainError("grid values must be positive")
    if math.log10(g.max() / g.min()) < min_decades - 1e-9:
        raise DomainError(f"grid must span at least {min_decades} decades")
    return g


def fit_escape_exponent(q: float, p0_grid: Sequence[float], times: Sequence[float]) -> tuple[float, float]:
    """Slope and r^2 of the escape-time law.

    For q < 1: least squares of ``log T`` on ``log(1/p0)`` (slope ~ 1 - q).
    For q = 1: least squares of ``T`` on ``log(1/p0)``.
    """
    q = check_q(q)
    g = _check_grid(p0_grid)
    T = np.asarray(times, dtype=float)
    if T.shape != g.shape or np.any(~np.isfinite(T)) or np.any(T <= 0):
        raise DomainError("times must be finite, positive and match the grid")
    if q == 1.0:
        return _linfit(np.log(1.0 / g), T)
    return _linfit(np.log(1.0 / g), np.log(T))


# --------------------------------------------------------------------------
# noise fitting on the two-label model
# --------------------------------------------------------------------------

def _check_eps(eps):
    if not (0.0 < eps < 0.5):
        raise DomainError("noise rate must lie in (0, 1/2)")


def noise_rate(q: float, eps: float) -> Callable[[float], float]:
    if q == 0.0:
        def rhs(pt):
            return -(1.0 - 2.0 * eps) * (1.0 - pt) ** 2 * pt**2
    else:
        def rhs(pt):
            p = 1.0 - pt
            return (eps * pt ** (-q) - (1.0 - eps) * p ** (-q)) * p * p * pt * pt

    return rhs


def noise_equilibrium(q: float, eps: float) -> float:
    """Stable root of the contamination flow (0 at q = 0)."""
    q = check_q(q)
    _check_eps(eps)
    if q == 0.0:
        return 0.0

    def balance(pt):
        return q * math.log((1.0 - pt) / pt) + math.log(eps / (1.0 - eps))

    return brentq(balance, 1e-300, 0.5, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def integrate_noise_flow(q: float, eps: float, ptilde0: float, eta: float, budget: float) -> NoiseTrace:
    """Grow contamination from ``ptilde0`` toward level ``eta``.

    At q = 0 the flow is strictly decreasing, so the trace ends with
    ``budget-exhausted`` and no crossing. For q > 0 a level at or beyond
    the equilibrium is unreachable and raises.
    """
    q = check_q(q)
    _check_eps(eps)
    if not (0.0 < ptilde0 < 1.0):
        raise DomainError("ptilde0 must lie in (0, 1)")
    if budget <= 0:
        raise DomainError("budget must be positive")
    star = noise_equilibrium(q, eps)
    if q > 0.0:
        if not ptilde0 < eta:
            raise DomainError("need ptilde0 < eta")
        if eta >= star:
            raise UnreachableTargetError(f"eta={eta} is not below the equilibrium {star}")
    trace = integrate_scalar(
        noise_rate(q, eps), ptilde0, [eta], budget, atol=_atol(ptilde0),
        detect_equilibrium=True, trace_cls=NoiseTrace,
    )
    trace.equilibrium = star
    return trace


def noise_time_quadrature(q: float, eps: float, ptilde0: float, eta: float) -> float:
    """Crossing time of the contamination flow by quadrature (q > 0, eta below equilibrium)."""
    rhs = noise_rate(check_q(q), eps)

    def integrand(v):
        pt = math.exp(v)
        return pt / rhs(pt)

    val, _ = quad(integrand, math.log(ptilde0), math.log(eta), epsabs=0.0, epsrel=QUAD_RTOL, limit=500)
    return val


@dataclass
class NoiseRateFit:
    slope: float
    r2: float
    times: np.ndarray
    doubled_times: np.ndarray
    eps_ratio: float


def noise_rate_exponent(
    q: float,
    eps: float,
    ptilde0_grid: Sequence[float],
    eta: float,
    budget: float = 1e15,
) -> NoiseRateFit:
    """Fit the contamination escape law and its ``1/eps`` scaling.

    ``slope`` is the least-squares slope of ``log T`` on ``log(1/ptilde0)``
    for q < 1, or of ``T`` on ``log(1/ptilde0)`` at q = 1. ``eps_ratio`` is
    ``T(2 eps) / T(eps)`` at the smallest starting contamination.
    """
    q = check_q(q)
    if q == 0.0:
        raise DomainError("no finite noise-fitting time at q = 0")
    g = _check_grid(ptilde0_grid)
    if g.max() >= eta:
        raise DomainError("starting contaminations must lie below eta")

    def times(e):
        out = []
        for p in g:
            tr = integrate_noise_flow(q, e, float(p), eta, budget)
            if tr.crossing_time is None:
                raise DomainError(f"no crossing within budget for ptilde0={p}")
            out.append(tr.crossing_time)
        return np.array(out)

    T = times(eps)
    T2 = times(2.0 * eps)
    x = np.log(1.0 / g)
    slope, r2 = _linfit(x, T) if q == 1.0 else _linfit(x, np.log(T))
    k = int(np.argmin(g))
    return NoiseRateFit(slope, r2, T, T2, float(T2[k] / T[k]))


# --------------------------------------------------------------------------
# near-optimality
# --------------------------------------------------------------------------

def near_optimal_time(q: float, eps0: float, eps1: float) -> float:
    """Time from ``P = 1 - eps0`` to ``1 - eps1`` with ``|s|**2 = (1-p)**2``."""
    q = check_q(q)

    def integrand(v):
        e = math.exp(v)
        return 1.0 / ((1.0 - e) ** (2.0 - q) * e)

    val, _ = quad(integrand, math.log(eps1), math.log(eps0), epsabs=0.0, epsrel=QUAD_RTOL, limit=500)
    return val


def near_optimality_ratio(q: float, q2: float, eps0: float, eps1: float) -> float:
    """``T_q / T_q2`` for the near-optimal phase; ``1 + O(eps0)``."""
    q, q2 = check_q(q), check_q(q2)
    if not (0.0 < eps1 < eps0 < 0.5):
        raise DomainError("need 0 < eps1 < eps0 < 1/2")
    if q == q2:
        return 1.0
    return near_optimal_time(q, eps0, eps1) / near_optimal_time(q2, eps0, eps1)


# --------------------------------------------------------------------------
# discretised flow on an enumerable model
# --------------------------------------------------------------------------

def model_flow(
    model,
    ex: Example,
    q: float,
    step: float,
    budget: int,
    target: float = 0.5,
) -> DynamicsTrace:
    """Explicit Euler on ``theta' = -grad loss_q`` with exact gradients.

    ``t`` is ``k * step``; ``pdot`` holds the predicted rate
    ``p**(2-q) |s|**2`` at each recorded point.
    """
    q = check_q(q)
    if step <= 0 or budget < 1:
        raise DomainError("step must be positive and budget at least one step")
    ps, rates = [], []
    status = EXHAUSTED
    crossing = None
    for k in range(budget + 1):
        p = model.success_prob(ex)
        s = np.asarray(model.score(ex))
        ps.append(p)
        rates.append(p ** (2.0 - q) * float(s @ s))
        if p >= target:
            status = REACHED
            crossing = k * step
            break
        if k == budget:
            break
        grad = exact_grad_loss(model, ex, q).values
        theta = model.params - step * grad
        if not np.all(np.isfinite(theta)):
            raise DomainError("flow diverged")
        model = model.with_params(theta)
    t = step * np.arange(len(ps))
    trace = DynamicsTrace(t, np.array(ps), np.array(rates), status, {float(target): crossing})
    trace.final_model = model
    return trace
