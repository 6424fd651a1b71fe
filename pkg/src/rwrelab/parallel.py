"""Thread-count control for the numba kernels.

Kernels give every task its own random stream and write to a task-indexed
slot, and every reduction is done afterwards in task order, so the thread
count never changes a result.
"""
from __future__ import annotations

import contextlib

import numba


def max_threads() -> int:
    return numba.config.NUMBA_NUM_THREADS


def set_threads(n: int | None) -> int:
    n = max_threads() if n is None else max(1, min(int(n), max_threads()))
    numba.set_num_threads(n)
    return n


@contextlib.contextmanager
def threads(n: int | None):
    old = numba.get_num_threads()
    set_threads(n)
    try:
        yield
    finally:
        numba.set_num_threads(old)
