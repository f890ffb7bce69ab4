import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .exceptions import InvalidInputError

THREADS_ENV = "MNSS_THREADS"


def available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1


def resolve_n_jobs(n_jobs=None) -> int:
    """``None`` falls back to ``$MNSS_THREADS`` then to every core; ``-1``
    means every core."""
    if n_jobs is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                n_jobs = int(env)
            except ValueError:
                raise InvalidInputError(f"{THREADS_ENV}={env!r} is not an integer")
        else:
            n_jobs = -1
    n_jobs = int(n_jobs)
    if n_jobs == -1:
        return available_cores()
    if n_jobs < 1:
        raise InvalidInputError(f"n_jobs must be positive or -1, got {n_jobs}")
    return n_jobs


def chunk_bounds(n: int, n_jobs: int, per_job: int = 4):
    """Contiguous ``[lo, hi)`` ranges covering ``range(n)``."""
    if n == 0:
        return []
    n_chunks = min(n, max(1, n_jobs * per_job)) if n_jobs > 1 else 1
    edges = np.linspace(0, n, n_chunks + 1).astype(np.int64)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def map_chunks(func, n: int, n_jobs: int):
    """Run ``func(lo, hi)`` over chunks of ``range(n)``; results come back in
    chunk order, so the outcome never depends on scheduling."""
    bounds = chunk_bounds(n, n_jobs)
    if n_jobs <= 1 or len(bounds) <= 1:
        return [func(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(lambda b: func(*b), bounds))
