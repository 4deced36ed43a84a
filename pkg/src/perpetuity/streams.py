"""Deterministic random streams for blocked, optionally threaded, Monte Carlo.

Every estimator splits its paths into ``workers`` contiguous blocks. Block k
draws from ``PCG64(SeedSequence([seed, *key])).jumped(k)``, so the output
depends only on (seed, key, workers, n_paths) and never on thread timing.
``key`` names a sub-stream (for example the row index n of a per-n
estimator) so that different quantities in one experiment stay independent.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import ValidationError

__all__ = ["block_sizes", "block_generators", "run_blocks", "default_workers"]


def default_workers() -> int:
    raw = os.environ.get("PERP_WORKERS")
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ValidationError(f"PERP_WORKERS must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ValidationError(f"PERP_WORKERS must be a positive integer, got {raw!r}")
    return value


def block_sizes(n_paths: int, workers: int) -> list[int]:
    base, extra = divmod(n_paths, workers)
    return [base + (1 if k < extra else 0) for k in range(workers)]


def block_generators(seed: int, workers: int, key=()) -> list[np.random.Generator]:
    if seed < 0:
        raise ValidationError("seed must be a nonnegative integer")
    root = np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, key)]))
    return [np.random.Generator(root.jumped(k)) for k in range(workers)]


def run_blocks(fn, n_paths: int, seed: int, workers: int, key=()):
    """Call ``fn(rng, size)`` once per block and return the results in block order."""
    if workers < 1:
        raise ValidationError("workers must be >= 1")
    sizes = block_sizes(n_paths, workers)
    rngs = block_generators(seed, workers, key)
    if workers == 1:
        return [fn(rngs[0], sizes[0])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, rng, size) for rng, size in zip(rngs, sizes)]
        return [f.result() for f in futures]
