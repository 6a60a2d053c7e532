from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, TypeVar

T = TypeVar("T")

THREADS_ENV = "ITS_THREADS"


def default_threads() -> int:
    """Thread count from the `ITS_THREADS` environment variable, or the number of processors."""
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            pass
    return os.cpu_count() or 1


def map_chunks(func: Callable[[slice], T], size: int, threads: Optional[int] = None, chunk: int = 4096) -> List[T]:
    """
    Runs `func` over consecutive slices covering `range(size)` and returns the results in slice order, so the outcome
    does not depend on the number of threads.
    """
    slices = [slice(start, min(start + chunk, size)) for start in range(0, size, chunk)]
    threads = threads or default_threads()
    if threads <= 1 or len(slices) <= 1:
        return [func(s) for s in slices]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(func, slices))
