from __future__ import annotations

import os
import time
from collections.abc import Iterator
from contextlib import contextmanager

import numpy as np

THREADS_ENV = "CLALIGN_THREADS"
"""Environment variable overriding the default worker count"""


def resolve_threads(threads: int | None = None) -> int:
    """Returns the number of worker threads to use.

    An explicit ``threads`` wins; otherwise the ``CLALIGN_THREADS`` environment variable
    is consulted, falling back to the CPU count.

    Raises:
        ValueError: the resolved count is not a positive integer.
    """
    if threads is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        else:
            threads = os.cpu_count() or 1

    if threads < 1:
        raise ValueError(f"thread count must be positive, got {threads}")
    return threads


def spawn_generators(seed: int | None, count: int) -> list[np.random.Generator]:
    """Returns ``count`` independent generators derived from ``seed``.

    Each consumer gets its own stream, so results do not depend on the order in which
    (possibly parallel) consumers draw their numbers.
    """
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


@contextmanager
def timed(timings: dict[str, float], stage: str) -> Iterator[None]:
    """Adds the wall-clock duration of the block to ``timings[stage]`` (seconds)."""
    start = time.perf_counter()
    try:
        yield
    finally:
        timings[stage] = timings.get(stage, 0.0) + time.perf_counter() - start
