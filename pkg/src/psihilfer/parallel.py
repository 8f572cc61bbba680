"""Worker-count policy shared by the numerical kernels."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from .errors import ConfigurationError

ENV_THREADS = "PSI_HILFER_THREADS"


def worker_count() -> int:
    """Threads to use: ``PSI_HILFER_THREADS`` if set and positive, else the CPU count (0 means auto)."""
    raw = os.environ.get(ENV_THREADS, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{ENV_THREADS} must be an integer, got {raw!r}", ENV_THREADS) from exc
    if n < 0:
        raise ConfigurationError(f"{ENV_THREADS} must be >= 0, got {n}", ENV_THREADS)
    return n if n > 0 else (os.cpu_count() or 1)


def parallel_map(fn, items):
    """Ordered map; runs on a thread pool when more than one worker is allowed."""
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
