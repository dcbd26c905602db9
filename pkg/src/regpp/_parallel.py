"""Order-preserving parallel map used by the drivers."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def parallel_map(fn, items, n_jobs: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally on a thread pool.

    Results always come back in input order, so reductions over them are
    independent of scheduling.
    """
    items = list(items)
    if n_jobs is None or n_jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=int(n_jobs)) as pool:
        return list(pool.map(fn, items))
