"""Order-preserving parallel map over scenario indices.

Results are always combined in index order, so the arithmetic (and therefore
every iteration log) is identical for any worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def resolve_threads(threads=None):
    if threads is None:
        env = os.environ.get("DBA_THREADS", "")
        threads = int(env) if env.strip() else 1
    return max(1, int(threads))


def pmap(fn, n_items, threads=1):
    """[fn(i) for i in range(n_items)], optionally on a thread pool."""
    if threads <= 1 or n_items <= 1:
        return [fn(i) for i in range(n_items)]
    with ThreadPoolExecutor(max_workers=min(threads, n_items)) as pool:
        return list(pool.map(fn, range(n_items)))
