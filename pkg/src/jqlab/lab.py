"""Empirical bias and variance of the pool estimators against exact oracles.

Every measurement draws ``R`` independent pools of ``M`` prior latents and
evaluates the estimators on all of them through the batched kernel.
Uncertainty comes from a bootstrap over contiguous groups of pools, which
keeps the cost independent of ``R``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from . import _kernels
from .errors import DomainError
from .io import write_csv
from .estimators import exact_local_grad, paft_conditional_mean, garl_plugin, pool_from_indices, predicted_bias
from .models import Example, LatentSeqModel
from .qcore import check_q
from .seeding import stream

ESTIMATORS = ("plugin", "rloo", "paft")
N_BOOT = 1000
MAX_GROUPS = 5000
MAX_DEGENERATE = 0.01
Z95 = NormalDist().inv_cdf(0.975)
# differences below this (relative to the gradient scale) are rounding, not bias
ROUNDOFF = 1e-12
# work per chunk, in pool slots; fixed so results do not depend on the backend
_CHUNK_SLOTS = 1 << 20
_CHUNK_PAIRS = 1 << 22


def simultaneous_z(n: int, level: float = 0.95) -> float:
    """Bonferroni critical value for ``n`` two-sided intervals."""
    return NormalDist().inv_cdf(1.0 - (1.0 - level) / (2.0 * max(n, 1)))


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------

def _chunk_size(M: int) -> int:
    return max(1, min(_CHUNK_SLOTS // M, _CHUNK_PAIRS // (M * M)))


def run_pools(
    model: LatentSeqModel,
    ex: Example,
    q: float,
    M: int,
    R: int,
    seed: int,
    K: int | None = None,
    want=ESTIMATORS,
):
    """Draw ``R`` pools and evaluate the requested estimators on each.

    Returns ``(estimates, ess, degenerate, idx)`` with ``estimates[name]``
    of shape ``(R, d_local)``. ``idx`` holds the latent indices of every pool.
    """
    q = check_q(q)
    if M < 1 or R < 1:
        raise DomainError("M and R must be positive")
    if "rloo" in want and M < 2:
        raise DomainError("the leave-one-out estimator needs M >= 2")
    K = M if K is None else int(K)
    en = model.enumerate(ex)
    chunk = _chunk_size(max(M, K))
    out = {name: [] for name in want}
    ess, deg, idx_all = [], [], []
    for c, start in enumerate(range(0, R, chunk)):
        n = min(chunk, R - start)
        z = model.sample_latents(ex.x, n * M, stream(seed, "pools", c))
        idx = model.latent_index(z).reshape(n, M)
        u_res = stream(seed, "resample", c).random((n, K)) if "paft" in want else None
        plugin, rloo, paft, e, d = _kernels.pool_estimates(
            idx, en.log_lik, en.s_prior, en.s_lik, q, u_res, want_rloo="rloo" in want
        )
        got = {"plugin": plugin, "rloo": rloo, "paft": paft}
        for name in want:
            out[name].append(got[name])
        ess.append(e)
        deg.append(d)
        idx_all.append(idx)
    return (
        {k: np.concatenate(v) for k, v in out.items()},
        np.concatenate(ess),
        np.concatenate(deg),
        np.concatenate(idx_all),
    )


def group_bootstrap(values: np.ndarray, seed: int, n_boot: int = N_BOOT, name: str = "bootstrap"):
    """Bootstrap standard error of the column means of ``values`` (rows = replicates).

    Rows are pooled into at most 5000 contiguous groups; each resample
    draws groups with replacement and forms a ratio of sums. Returns the
    per-column standard error.
    """
    values = np.asarray(values, dtype=float)
    R = values.shape[0]
    G = min(R, MAX_GROUPS)
    edges = np.linspace(0, R, G + 1).astype(np.int64)
    sums = np.add.reduceat(values, edges[:-1], axis=0)
    counts = np.diff(edges).astype(float)
    rng = stream(seed, name)
    picks = rng.integers(0, G, size=(n_boot, G))
    weights = np.zeros((n_boot, G))
    rows = np.repeat(np.arange(n_boot), G)
    np.add.at(weights, (rows, picks.ravel()), 1.0)
    boot = (weights @ sums) / (weights @ counts)[:, None]
    return boot.std(axis=0, ddof=1)


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

@dataclass
class BiasVarReport:
    """Empirical bias and variance of one estimator at one ``(q, M)``.

    Vectors are in the example's local parameter coordinates. ``ci`` is the
    per-coordinate 95% half-width of the mean; ``active`` marks coordinates
    whose estimates vary across pools (the rest are structurally constant).
    """

    estimator: str
    q: float
    M: int
    R: int
    mean: np.ndarray
    var: np.ndarray
    exact: np.ndarray
    predicted: np.ndarray
    se: np.ndarray
    n_degenerate: int
    flags: dict = field(default_factory=dict)

    @property
    def bias(self) -> np.ndarray:
        return self.mean - self.exact

    @property
    def ci(self) -> np.ndarray:
        return Z95 * self.se

    @property
    def active(self) -> np.ndarray:
        return self.var > 0.0

    @property
    def passed(self) -> bool:
        return all(self.flags.values())

    def bias_contains_zero(self, simultaneous: bool = True) -> bool:
        """Does the bias interval contain 0 on every active coordinate?

        With ``simultaneous`` the half-widths use a Bonferroni critical value
        over the active coordinates. Inactive coordinates must match exactly.
        """
        act = self.active
        z = simultaneous_z(int(act.sum())) if simultaneous else Z95
        scale = max(1.0, float(np.max(np.abs(self.exact))))
        ok_active = np.all(np.abs(self.bias[act]) <= z * self.se[act] + ROUNDOFF * scale)
        ok_rest = np.all(np.abs(self.bias[~act]) <= ROUNDOFF * scale)
        return bool(ok_active and ok_rest)

    def rows(self):
        return [
            (i, self.mean[i], self.var[i], self.exact[i], self.bias[i], self.predicted[i], self.ci[i])
            for i in range(self.mean.size)
        ]

    def summary(self) -> dict:
        return {
            "estimator": self.estimator,
            "q": self.q,
            "M": self.M,
            "R": self.R,
            "n_degenerate": self.n_degenerate,
            "active_coordinates": int(self.active.sum()),
            "max_abs_bias": float(np.max(np.abs(self.bias))),
            "flags": {k: bool(v) for k, v in self.flags.items()},
            "passed": self.passed,
        }


REPORT_HEADER = ("coord", "mean", "var", "exact", "bias", "predicted_bias", "ci_halfwidth")


def measure_bias_variance(
    model: LatentSeqModel,
    ex: Example,
    estimator: str,
    q: float,
    M: int,
    R: int,
    seed: int,
    K: int | None = None,
    n_boot: int = N_BOOT,
) -> BiasVarReport:
    """Bias of ``estimator`` against the exact gradient over ``R`` fresh pools.

    Degenerate pools (every weight zero, q > 0) are dropped from the
    moments; more than 1% of them fails the report. At q = 0 such pools
    contribute a zero estimate and are not counted.
    """
    if estimator not in ESTIMATORS:
        raise DomainError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")
    q = check_q(q)
    est, _, deg, _ = run_pools(model, ex, q, M, R, seed, K=K, want=(estimator,))
    vals = est[estimator]
    keep = np.all(np.isfinite(vals), axis=1)
    n_deg = int(np.sum(deg & ~keep))
    vals = vals[keep]
    if vals.shape[0] < 2:
        raise DomainError("fewer than two usable pools")
    exact = exact_local_grad(model, ex, q)
    pred = predicted_bias(model, ex, q, M).values[model.enumerate(ex).param_index]
    report = BiasVarReport(
        estimator=estimator,
        q=q,
        M=M,
        R=R,
        mean=vals.mean(axis=0),
        var=vals.var(axis=0, ddof=1),
        exact=exact,
        predicted=pred,
        se=group_bootstrap(vals, seed, n_boot),
        n_degenerate=n_deg,
    )
    report.flags["degenerate_fraction_ok"] = n_deg <= MAX_DEGENERATE * R
    if q == 0.0 and estimator in ("plugin", "rloo"):
        report.flags["bias_ci_contains_zero"] = report.bias_contains_zero()
    return report


@dataclass
class PairedReport:
    """Paired comparison of the three estimators on shared pools."""

    q: float
    M: int
    K: int
    R: int
    mean: dict
    var: dict
    diff_mean: dict
    diff_se: dict
    tower_max_abs: float
    var_order_fraction: float
    n_degenerate: int
    flags: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.flags.values())

    def diff_contains_zero(self, pair: str) -> bool:
        d, se = self.diff_mean[pair], self.diff_se[pair]
        act = se > 0.0
        z = simultaneous_z(int(act.sum()))
        scale = max(1.0, float(np.max(np.abs(self.mean["plugin"]))))
        tol = ROUNDOFF * scale
        return bool(np.all(np.abs(d[act]) <= z * se[act] + tol) and np.all(np.abs(d[~act]) <= tol))

    def summary(self) -> dict:
        return {
            "q": self.q,
            "M": self.M,
            "K": self.K,
            "R": self.R,
            "n_degenerate": self.n_degenerate,
            "tower_max_abs": self.tower_max_abs,
            "var_order_fraction": self.var_order_fraction,
            "flags": {k: bool(v) for k, v in self.flags.items()},
            "passed": self.passed,
        }


def variance_order_fraction(var_low: np.ndarray, var_high: np.ndarray) -> float:
    """Share of varying coordinates where ``var_high >= var_low``."""
    act = (var_low > 0.0) | (var_high > 0.0)
    if not np.any(act):
        return 1.0
    return float(np.mean(var_high[act] >= var_low[act]))


def compare_estimators(
    model: LatentSeqModel,
    ex: Example,
    q: float,
    M: int,
    K: int,
    R: int,
    seed: int,
    tower_pools: int = 200,
    n_boot: int = N_BOOT,
) -> PairedReport:
    """Run plugin, leave-one-out and resampled estimators on the same pools.

    The resampling conditional mean is checked against the plug-in on the
    first ``tower_pools`` pools through the per-pool API.
    """
    q = check_q(q)
    est, _, deg, idx = run_pools(model, ex, q, M, R, seed, K=K)
    keep = np.all(np.isfinite(est["paft"]), axis=1) & np.all(np.isfinite(est["plugin"]), axis=1)
    n_deg = int(np.sum(~keep))
    vals = {k: v[keep] for k, v in est.items()}
    diffs = {
        "plugin-rloo": vals["plugin"] - vals["rloo"],
        "plugin-paft": vals["plugin"] - vals["paft"],
    }
    en = model.enumerate(ex)
    tower = 0.0
    for r in np.flatnonzero(keep)[:tower_pools]:
        pool = pool_from_indices(en, idx[r])
        gap = paft_conditional_mean(pool, q).local - garl_plugin(pool, q).local
        tower = max(tower, float(np.max(np.abs(gap))))
    var = {k: v.var(axis=0, ddof=1) for k, v in vals.items()}
    rep = PairedReport(
        q=q,
        M=M,
        K=K,
        R=R,
        mean={k: v.mean(axis=0) for k, v in vals.items()},
        var=var,
        diff_mean={k: v.mean(axis=0) for k, v in diffs.items()},
        diff_se={k: group_bootstrap(v, seed, n_boot, name=f"bootstrap-{k}") for k, v in diffs.items()},
        tower_max_abs=tower,
        var_order_fraction=variance_order_fraction(var["plugin"], var["paft"]),
        n_degenerate=n_deg,
    )
    rep.flags["degenerate_fraction_ok"] = n_deg <= MAX_DEGENERATE * R
    rep.flags["rloo_mean_matches_plugin"] = rep.diff_contains_zero("plugin-rloo")
    rep.flags["paft_mean_matches_plugin"] = rep.diff_contains_zero("plugin-paft")
    rep.flags["tower_identity"] = tower <= 1e-12
    rep.flags["paft_variance_dominates"] = rep.var_order_fraction >= 0.95
    return rep


@dataclass
class ESSProfile:
    M: int
    R: int
    values: np.ndarray
    n_degenerate: int

    @property
    def median(self) -> float:
        finite = self.values[np.isfinite(self.values)]
        return float(np.median(finite)) if finite.size else math.nan

    def quantiles(self, qs=(0.1, 0.5, 0.9)) -> dict:
        finite = self.values[np.isfinite(self.values)]
        if not finite.size:
            return {float(p): math.nan for p in qs}
        return {float(p): float(np.quantile(finite, p)) for p in qs}


def ess_profile(model: LatentSeqModel, ex: Example, M: int, R: int, seed: int) -> ESSProfile:
    """Distribution of the pool effective sample size ``(sum w)**2 / sum w**2``."""
    _, ess, deg, _ = run_pools(model, ex, 1.0, M, R, seed, want=("plugin",))
    return ESSProfile(M, R, ess, int(deg.sum()))


# --------------------------------------------------------------------------
# finite-M bias law
# --------------------------------------------------------------------------

@dataclass
class BiasLawFit:
    """Per-coordinate fit ``bias(M) = a/M + b/M**2`` against ``M * predicted_bias``."""

    Ms: tuple
    a: np.ndarray
    b: np.ndarray
    a_se: np.ndarray
    predicted_a: np.ndarray
    reports: list

    @property
    def active(self) -> np.ndarray:
        return self.a_se > 0.0

    def z_scores(self) -> np.ndarray:
        z = np.zeros_like(self.a)
        act = self.active
        z[act] = (self.a[act] - self.predicted_a[act]) / self.a_se[act]
        return z

    def matches(self, n_se: float = 3.0) -> bool:
        act = self.active
        scale = max(1.0, float(np.max(np.abs(self.predicted_a))))
        inactive_ok = np.all(np.abs(self.a[~act] - self.predicted_a[~act]) <= 1e-10 * scale)
        return bool(np.all(np.abs(self.z_scores()[act]) <= n_se) and inactive_ok)


def fit_bias_law(reports: list[BiasVarReport]) -> BiasLawFit:
    """Weighted least squares of the empirical bias on ``(1/M, 1/M**2)``.

    Bias estimates at different M come from independent pools, so the
    coefficient standard errors follow from the per-M bootstrap errors.
    """
    if len(reports) < 2:
        raise DomainError("need at least two values of M")
    Ms = np.array([r.M for r in reports], dtype=float)
    if len(set(Ms)) != len(Ms):
        raise DomainError("M values must be distinct")
    X = np.column_stack([1.0 / Ms, 1.0 / Ms**2])
    B = np.array([r.bias for r in reports])
    S = np.array([r.se for r in reports])
    d = B.shape[1]
    a, b, a_se = np.zeros(d), np.zeros(d), np.zeros(d)
    for j in range(d):
        if np.all(S[:, j] > 0.0):
            W = 1.0 / S[:, j] ** 2
            XtW = X.T * W
            cov = np.linalg.inv(XtW @ X)
            coef = cov @ (XtW @ B[:, j])
            a[j], b[j] = coef
            a_se[j] = math.sqrt(cov[0, 0])
        else:
            coef, *_ = np.linalg.lstsq(X, B[:, j], rcond=None)
            a[j], b[j] = coef
    predicted_a = reports[0].predicted * reports[0].M
    return BiasLawFit(tuple(int(m) for m in Ms), a, b, a_se, predicted_a, list(reports))


def measure_bias_law(
    model: LatentSeqModel,
    ex: Example,
    q: float,
    Ms=(16, 32, 64),
    R: int = 200_000,
    seed: int = 0,
    estimator: str = "plugin",
) -> BiasLawFit:
    reports = [
        measure_bias_variance(model, ex, estimator, q, M, R, stream(seed, "bias-law", M).integers(2**63))
        for M in Ms
    ]
    return fit_bias_law(reports)


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------

def write_report_csv(report: BiasVarReport, path, comment: str | None = None) -> None:
    write_csv(path, REPORT_HEADER, report.rows(), comment=comment)


def write_summary_json(summary: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
