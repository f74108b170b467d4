"""Deterministic random streams derived from a master seed."""

from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def stream(master: int, name: str, index: int = 0) -> np.random.Generator:
    """Independent generator for ``(master, component name, index)``.

    The mapping is stable across processes and Python versions (no use of
    ``hash()``), so parallel or reordered work reproduces bit for bit.
    """
    seq = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, _name_key(name), int(index)])
    return np.random.Generator(np.random.PCG64(seq))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
