"""Hot inner loops, each in a numba and a pure-numpy flavour.

The active backend is chosen once at import from ``JQLAB_BACKEND``
(``numba`` or ``numpy``; default ``numba`` when importable). Both flavours
consume the same pre-drawn uniforms, so they agree on every sampled index;
floating reductions may differ in the last bits.

Kernels
-------
sample_chains(cdf, cond, uniforms)
    Ancestral sampling of autoregressive token chains from cumulative
    probability tables ``cdf[pos, cond, prev, v]`` where ``prev == V``
    marks the start of the chain.
pool_estimates(idx, log_w, s_prior, s_lik, q, u_res, want_rloo, want_paft)
    Plug-in, leave-one-out and resampled estimates for ``R`` pools of
    enumerated latents at once. A pool whose weights are all zero is
    flagged degenerate; its plug-in and leave-one-out estimates are 0 at
    q = 0 and NaN otherwise.
"""

from __future__ import annotations

import math
import os
from types import SimpleNamespace

import numpy as np

__all__ = ["BACKEND", "sample_chains", "pool_estimates", "numpy_impl", "numba_impl"]


# --------------------------------------------------------------------------
# pure numpy
# --------------------------------------------------------------------------

def _sample_chains_np(cdf, cond, uniforms):
    n, length = uniforms.shape
    vocab = cdf.shape[-1]
    out = np.empty((n, length), dtype=np.int64)
    prev = np.full(n, vocab, dtype=np.int64)
    for pos in range(length):
        rows = cdf[pos, cond, prev]
        target = uniforms[:, pos] * rows[:, -1]
        tok = (rows <= target[:, None]).sum(axis=1)
        np.minimum(tok, vocab - 1, out=tok)
        out[:, pos] = tok
        prev = tok
    return out


def _logsumexp_rows(a):
    mx = a.max(axis=-1, keepdims=True)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(a - safe).sum(axis=-1)) + safe[..., 0]
    return out


def _pool_estimates_np(idx, log_w, s_prior, s_lik, q, u_res, want_rloo, want_paft):
    n_pools, m = idx.shape
    d = s_prior.shape[1]
    s_joint = s_prior + s_lik
    lw = log_w[idx]
    degenerate = ~np.isfinite(lw.max(axis=1))
    lse = _logsumexp_rows(lw)
    lwb = lse - math.log(m)
    with np.errstate(invalid="ignore"):
        coef = np.exp(lw - math.log(m) - q * lwb[:, None])
    rows = np.repeat(np.arange(n_pools), m)

    def contract(weights, table):
        acc = np.zeros((n_pools, table.shape[0]))
        np.add.at(acc, (rows, idx.ravel()), weights.ravel())
        return acc @ table

    plugin = -contract(coef, s_joint)
    with np.errstate(invalid="ignore"):
        ess = np.exp(2.0 * lse - _logsumexp_rows(2.0 * lw))

    rloo = np.full((n_pools, d), np.nan)
    if want_rloo and m >= 2:
        with np.errstate(invalid="ignore"):
            amp = np.exp(lw - q * lwb[:, None])
        if q == 1.0:
            base = np.ones_like(lw)
        else:
            others = np.broadcast_to(lw[:, None, :], (n_pools, m, m)).copy()
            diag = np.arange(m)
            others[:, diag, diag] = -np.inf
            lwb_loo = _logsumexp_rows(others) - math.log(m - 1)
            base = np.exp((1.0 - q) * lwb_loo)
        rloo = -(contract(amp - base, s_prior) + contract(amp, s_lik)) / m

    paft = np.full((n_pools, d), np.nan)
    if want_paft:
        k = u_res.shape[1]
        with np.errstate(invalid="ignore"):
            probs = np.exp(lw - lse[:, None])
        cdf = np.cumsum(probs, axis=1)
        target = u_res * cdf[:, -1:]
        pick = (cdf[:, None, :] <= target[:, :, None]).sum(axis=2)
        np.minimum(pick, m - 1, out=pick)
        chosen = np.take_along_axis(idx, pick, axis=1)
        counts = np.zeros((n_pools, s_joint.shape[0]))
        np.add.at(counts, (np.repeat(np.arange(n_pools), k), chosen.ravel()), 1.0)
        with np.errstate(invalid="ignore"):
            atten = np.exp((1.0 - q) * lwb)
        paft = -(atten / k)[:, None] * (counts @ s_joint)

    paft[degenerate] = np.nan
    # at q = 0 an all-zero pool contributes exactly zero
    fill = 0.0 if q == 0.0 else np.nan
    plugin[degenerate] = fill
    if want_rloo and m >= 2:
        rloo[degenerate] = fill
    ess[degenerate] = np.nan
    return plugin, rloo, paft, ess, degenerate


numpy_impl = SimpleNamespace(
    name="numpy", sample_chains=_sample_chains_np, pool_estimates=_pool_estimates_np
)


# --------------------------------------------------------------------------
# numba
# --------------------------------------------------------------------------

def _build_numba():
    import numba as nb

    njit = nb.njit(cache=True, nogil=True)

    @njit
    def sample_chains(cdf, cond, uniforms):
        n, length = uniforms.shape
        vocab = cdf.shape[-1]
        out = np.empty((n, length), dtype=np.int64)
        for i in range(n):
            prev = vocab
            c = cond[i]
            for pos in range(length):
                total = cdf[pos, c, prev, vocab - 1]
                target = uniforms[i, pos] * total
                tok = 0
                for v in range(vocab):
                    if cdf[pos, c, prev, v] <= target:
                        tok += 1
                if tok > vocab - 1:
                    tok = vocab - 1
                out[i, pos] = tok
                prev = tok
        return out

    @njit
    def _lse_skip(lw, skip):
        mx = -np.inf
        for j in range(lw.shape[0]):
            if j != skip and lw[j] > mx:
                mx = lw[j]
        if mx == -np.inf:
            return -np.inf
        s = 0.0
        for j in range(lw.shape[0]):
            if j != skip:
                s += math.exp(lw[j] - mx)
        return mx + math.log(s)

    @njit
    def pool_estimates(idx, log_w, s_prior, s_lik, q, u_res, want_rloo, want_paft):
        n_pools, m = idx.shape
        d = s_prior.shape[1]
        k = u_res.shape[1]
        plugin = np.full((n_pools, d), np.nan)
        rloo = np.full((n_pools, d), np.nan)
        paft = np.full((n_pools, d), np.nan)
        ess = np.full(n_pools, np.nan)
        degenerate = np.zeros(n_pools, dtype=np.bool_)
        lw = np.empty(m)
        cdf = np.empty(m)
        logm = math.log(m)
        for r in range(n_pools):
            for j in range(m):
                lw[j] = log_w[idx[r, j]]
            lse = _lse_skip(lw, -1)
            if lse == -np.inf:
                degenerate[r] = True
                if q == 0.0:
                    for c in range(d):
                        plugin[r, c] = 0.0
                        if want_rloo and m >= 2:
                            rloo[r, c] = 0.0
                continue
            lwb = lse - logm
            lse2 = _lse_skip(2.0 * lw, -1)
            ess[r] = math.exp(2.0 * lse - lse2)
            for c in range(d):
                plugin[r, c] = 0.0
            for j in range(m):
                coef = math.exp(lw[j] - logm - q * lwb)
                z = idx[r, j]
                for c in range(d):
                    plugin[r, c] -= coef * (s_prior[z, c] + s_lik[z, c])
            if want_rloo and m >= 2:
                for c in range(d):
                    rloo[r, c] = 0.0
                for j in range(m):
                    amp = math.exp(lw[j] - q * lwb)
                    if q == 1.0:
                        base = 1.0
                    else:
                        loo = _lse_skip(lw, j)
                        if loo == -np.inf:
                            base = 0.0
                        else:
                            base = math.exp((1.0 - q) * (loo - math.log(m - 1)))
                    z = idx[r, j]
                    for c in range(d):
                        rloo[r, c] -= ((amp - base) * s_prior[z, c] + amp * s_lik[z, c]) / m
            if want_paft:
                acc = 0.0
                for j in range(m):
                    acc += math.exp(lw[j] - lse)
                    cdf[j] = acc
                atten = math.exp((1.0 - q) * lwb)
                for c in range(d):
                    paft[r, c] = 0.0
                for kk in range(k):
                    target = u_res[r, kk] * cdf[m - 1]
                    pick = 0
                    for j in range(m):
                        if cdf[j] <= target:
                            pick += 1
                    if pick > m - 1:
                        pick = m - 1
                    z = idx[r, pick]
                    for c in range(d):
                        paft[r, c] += s_prior[z, c] + s_lik[z, c]
                for c in range(d):
                    paft[r, c] *= -atten / k
        return plugin, rloo, paft, ess, degenerate

    return SimpleNamespace(name="numba", sample_chains=sample_chains, pool_estimates=pool_estimates)


try:
    numba_impl = _build_numba()
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_impl = None

_requested = os.environ.get("JQLAB_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"JQLAB_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
_active = numba_impl if (_requested == "numba" and numba_impl is not None) else numpy_impl

BACKEND: str = _active.name


def sample_chains(cdf, cond, uniforms):
    """Sample token chains; see module docstring."""
    return _active.sample_chains(
        np.ascontiguousarray(cdf, dtype=np.float64),
        np.ascontiguousarray(cond, dtype=np.int64),
        np.ascontiguousarray(uniforms, dtype=np.float64),
    )


def pool_estimates(idx, log_w, s_prior, s_lik, q, u_res=None, want_rloo=True, want_paft=True):
    """Batched estimators over ``R`` pools; see module docstring.

    Returns ``(plugin, rloo, paft, ess, degenerate)``; arrays are ``(R, d)``
    except the last two, which are ``(R,)``. Estimates are unnormalized.
    """
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if u_res is None:
        u_res = np.zeros((idx.shape[0], 0))
        want_paft = False
    return _active.pool_estimates(
        idx,
        np.ascontiguousarray(log_w, dtype=np.float64),
        np.ascontiguousarray(s_prior, dtype=np.float64),
        np.ascontiguousarray(s_lik, dtype=np.float64),
        float(q),
        np.ascontiguousarray(u_res, dtype=np.float64),
        bool(want_rloo),
        bool(want_paft),
    )
