"""Order-preserving map over a thread pool."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "STOCHCG_THREADS"


def resolve_workers(flag: int | None) -> int:
    """The flag wins over the environment; default is one worker."""
    if flag is not None:
        n = int(flag)
    else:
        raw = os.environ.get(THREADS_ENV, "").strip()
        n = int(raw) if raw else 1
    if n < 1:
        raise ValueError(f"worker count must be positive, got {n}")
    return n


def ordered_map(fn, items, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, possibly concurrent; output order matches input."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))
