"""Order-preserving process-pool map shared by the sweep and Monte-Carlo drivers."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Optional, TypeVar

T = TypeVar("T")
R = TypeVar("R")

JOBS_ENV = "NEUROAGE_JOBS"


def default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV, "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{JOBS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{JOBS_ENV} must be >= 1")
    return n


def ordered_map(fn: Callable[[T], R], items: Iterable[T], jobs: Optional[int] = None) -> list[R]:
    """``[fn(x) for x in items]``, optionally spread over ``jobs`` processes.

    Results come back in input order, so the output never depends on the
    worker count or on scheduling.
    """
    items = list(items)
    jobs = default_jobs() if jobs is None else int(jobs)
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    if jobs == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as ex:
        return list(ex.map(fn, items, chunksize=1))
