"""Shared plumbing: worker-count policy and deterministic parallel map."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    """Worker cap: the ME_THREADS environment variable, else cpu count."""
    env = os.environ.get("ME_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"ME_THREADS must be an integer, got {env!r}")
    return min(8, os.cpu_count() or 1)


def parallel_map(fn, items):
    """Map over independent work items, results in input order."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1 or len(items) < 4:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
