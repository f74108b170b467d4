#!/usr/bin/env python3
"""Time the numba kernels against their pure-numpy fallbacks.

Both flavours are called directly (the JQLAB_BACKEND switch only picks the
default), on identical inputs, after one warm-up call so JIT compilation is
excluded. Outputs are checked for agreement before timings are reported.

Usage:
    python3 benchmarks/bench_kernels.py [--R 20000] [--M 32] [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from jqlab import _kernels
from jqlab.acceptance import estimator_model
from jqlab.seeding import stream


def best_of(fn, repeats: int) -> float:
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def pool_inputs(R: int, M: int, seed: int):
    model, ex = estimator_model()
    en = model.enumerate(ex)
    rng = stream(seed, "bench", 0)
    z = model.sample_latents(ex.x, R * M, rng)
    idx = model.latent_index(z).reshape(R, M).astype(np.int64)
    u = rng.random((R, M))
    return idx, en.log_lik, en.s_prior, en.s_lik, u


def chain_inputs(n: int, seed: int, L: int = 8, V: int = 6, C: int = 4):
    rng = stream(seed, "bench", 1)
    p = rng.dirichlet(np.ones(V), size=(L, C, V + 1))
    cdf = np.cumsum(p, axis=-1)
    cond = rng.integers(0, C, size=n).astype(np.int64)
    return cdf, cond, rng.random((n, L))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--R", type=int, default=20_000, help="pools per call")
    ap.add_argument("--M", type=int, default=32, help="pool size")
    ap.add_argument("--chains", type=int, default=200_000, help="chains per sampling call")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if _kernels.numba_impl is None:
        raise SystemExit("numba is not importable; nothing to compare")
    impls = {"numpy": _kernels.numpy_impl, "numba": _kernels.numba_impl}

    idx, log_w, s_prior, s_lik, u = pool_inputs(args.R, args.M, args.seed)
    out = {k: impl.pool_estimates(idx, log_w, s_prior, s_lik, 0.5, u, True, True) for k, impl in impls.items()}
    for a, b in zip(out["numpy"][:4], out["numba"][:4]):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)

    cdf, cond, cu = chain_inputs(args.chains, args.seed)
    chains = {k: impl.sample_chains(cdf, cond, cu) for k, impl in impls.items()}
    np.testing.assert_array_equal(chains["numpy"], chains["numba"])

    rows = []
    for kernel, call in (
        ("pool_estimates", lambda impl: impl.pool_estimates(idx, log_w, s_prior, s_lik, 0.5, u, True, True)),
        ("sample_chains", lambda impl: impl.sample_chains(cdf, cond, cu)),
    ):
        t = {k: best_of(lambda impl=impl: call(impl), args.repeats) for k, impl in impls.items()}
        rows.append((kernel, t["numpy"], t["numba"], t["numpy"] / t["numba"]))

    print(f"R={args.R} M={args.M} chains={args.chains} best of {args.repeats}")
    print(f"{'kernel':<16}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}")
    for name, tn, tb, sp in rows:
        print(f"{name:<16}{tn:>12.4f}{tb:>12.4f}{sp:>9.1f}x")


if __name__ == "__main__":
    main()
