"""Seed-parallel task mapping.

Tasks are pure functions of immutable specs (grids, families, seeds), so a
thread pool is safe; numpy's FFT and einsum kernels release the GIL for the
bulk of the work.  Results are returned in task order regardless of
scheduling, so worker count never affects output.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

__all__ = ["pmap"]


def pmap(fn, items, workers: int = 1) -> list:
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
