"""Order-preserving process-pool map shared by the simulation engines."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def pmap(fn, items, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally spread over worker processes.

    Results come back in input order, so reductions over them are identical
    for any worker count.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
