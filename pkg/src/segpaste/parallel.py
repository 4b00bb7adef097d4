"""Order-preserving parallel map used for per-sample work."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Iterable[T], n_jobs: int = 1) -> list[R]:
    """``[fn(x) for x in items]``, optionally on a thread pool.

    Results are returned in input order, so output never depends on
    ``n_jobs`` as long as ``fn`` is pure.
    """
    items = list(items)
    if n_jobs is None or n_jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))
