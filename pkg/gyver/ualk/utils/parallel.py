import logging
import os
import typing
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor

import numpy as np

logger = logging.getLogger(__name__)

THREADS_ENV = 'UAL_THREADS'

T = typing.TypeVar('T')


def thread_count() -> int:
    """Data-parallel width from UAL_THREADS, 1 when unset or invalid."""
    raw = os.environ.get(THREADS_ENV, '')
    try:
        count = int(raw)
    except ValueError:
        if raw:
            logger.warning('ignoring invalid %s=%r', THREADS_ENV, raw)
        return 1
    return max(1, count)


CHUNK_ROWS = 512


def chunk_bounds(total: int, size: int = CHUNK_ROWS) -> list[tuple[int, int]]:
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]


def ordered_map(func: Callable[[int, int], T], total: int) -> list[T]:
    """Applies `func(lo, hi)` over index ranges covering [0, total).

    Ranges have a fixed size and results come back in index order, so the
    output does not depend on the thread count."""
    workers = thread_count()
    bounds = chunk_bounds(total)
    if workers == 1 or len(bounds) <= 1:
        return [func(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(func, lo, hi) for lo, hi in bounds]
        return [future.result() for future in futures]


def map_rows(func: Callable[[np.ndarray], np.ndarray], rows: np.ndarray) -> np.ndarray:
    """Row-chunked map whose output rows line up with `rows`."""
    parts: Sequence[np.ndarray] = ordered_map(lambda lo, hi: func(rows[lo:hi]), rows.shape[0])
    if not parts:
        return func(rows[:0])
    return np.concatenate(parts, axis=0)
