"""Thread-count-independent work splitting.

Work is always cut into the same fixed chunks; ``PPP_THREADS`` only decides how
many workers process them. Callers reduce the per-chunk results in ascending
chunk order, so outputs never depend on the thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

from threadpoolctl import threadpool_limits

T = TypeVar("T")

# BLAS must not split work by its own thread count.
threadpool_limits(limits=1, user_api="blas")


def num_threads() -> int:
    raw = os.environ.get("PPP_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"PPP_THREADS must be a positive integer, got {raw!r}") from None
    return max(1, n)


def chunk_bounds(n: int, chunk: int) -> list[tuple[int, int]]:
    return [(i, min(i + chunk, n)) for i in range(0, n, chunk)]


def map_chunks(fn: Callable[[int, int], T], n: int, chunk: int) -> list[T]:
    """Apply ``fn(start, stop)`` to fixed chunks of ``range(n)``; results in chunk order."""
    bounds = chunk_bounds(n, chunk)
    workers = min(num_threads(), len(bounds))
    if workers <= 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: fn(*ab), bounds))
