"""Small shared helpers (parallel job mapping)."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def parallel_map(fn, items, threads: int = 1) -> list:
    """Order-preserving map, optionally across worker processes.

    Results are identical regardless of worker count: jobs carry their own
    derived RNG substreams and outputs are collected in submission order.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
