"""Run independent simulator jobs, optionally in worker processes."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List


def pmap(fn: Callable, items: Iterable, jobs: int = 1) -> List:
    """``[fn(x) for x in items]``; results keep input order for any ``jobs``."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
