"""Deterministic batch-slice worker pool.

Work is always split per batch item and results are returned in batch order,
so outputs are identical whatever the worker count.
"""

import logging
import os
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

from .config import THREADS_ENV
from .exceptions import ConfigError

logger = logging.getLogger(__name__)

T = TypeVar("T")


def worker_count() -> int:
    """Worker cap from FFDCONV_THREADS (default 1)."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        count = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{raw}'")
    if count < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{raw}'")
    return count


def map_slices(func: Callable[[int], T], count: int, workers: int | None = None) -> list[T]:
    """Evaluate func(0..count-1), in parallel when allowed, results in index order."""
    workers = worker_count() if workers is None else workers
    workers = min(workers, count)
    if workers <= 1:
        return [func(i) for i in range(count)]
    logger.debug("map_slices: %d slices on %d workers", count, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, range(count)))
