"""Seeded random streams and order-stable parallel execution of trial blocks.

Trials are grouped into fixed-size blocks. Block ``b`` always draws from the
stream ``(seed, tag, b)``, and results are returned in block order, so the
outcome does not depend on how many worker threads ran the blocks.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

R = TypeVar("R")

# stream tags; keep distinct so experiments never share draws by accident
TAG_STEP = 0
TAG_IMPULSE = 1
TAG_TRAJECTORY = 2
TAG_ACF = 3
TAG_BER = 4
TAG_TRANSMISSION = 5


class RngStream:
    """Independent generator identified by ``(seed, stream_id)``.

    Streams come from ``numpy.random.SeedSequence`` spawn keys, so distinct
    ids are statistically independent and identical ids replay exactly.
    """

    def __init__(self, seed: int, stream_id: int = 0, tag: int = TAG_STEP):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.tag = int(tag)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.tag, self.stream_id))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, tag={self.tag})"


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.gen
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def thread_count(threads: int | None = None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("MCCHAN_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def block_sizes(trials: int, block_size: int) -> list[int]:
    n = math.ceil(trials / block_size)
    return [min(block_size, trials - b * block_size) for b in range(n)]


def map_blocks(fn: Callable[[int], R], n_blocks: int, threads: int | None = None) -> list[R]:
    workers = min(thread_count(threads), n_blocks)
    if workers <= 1:
        return [fn(b) for b in range(n_blocks)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_blocks)))


def fsum_blocks(parts: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise compensated sum of equally shaped block partial sums."""
    stacked = np.stack([np.asarray(p, dtype=float) for p in parts])
    flat = stacked.reshape(len(parts), -1)
    out = np.array([math.fsum(flat[:, k]) for k in range(flat.shape[1])])
    return out.reshape(stacked.shape[1:])
