"""Deterministic thread-pool map.

numpy and scipy release the GIL inside the heavy kernels, so threads give
real speed-ups. Results always come back in input order, and callers derive
per-task seeds up front, so output does not depend on the thread count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

_default_threads: int | None = None


def set_default_threads(n: int | None) -> None:
    global _default_threads
    if n is not None and n < 1:
        raise ValueError("thread count must be >= 1")
    _default_threads = n


def resolve_threads(n: int | None = None) -> int:
    if n is None:
        n = _default_threads
    if n is None:
        n = os.cpu_count() or 1
    if n < 1:
        raise ValueError("thread count must be >= 1")
    return n


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int | None = None) -> list[R]:
    items = list(items)
    n = min(resolve_threads(threads), max(len(items), 1))
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))
