"""
Worker pool for the MRvF toolkit
Bounded joblib pool for per-voxel and per-entry work; results always come
back in submission order so outputs never depend on the schedule
"""
import logging
import os
from contextlib import contextmanager
from typing import Callable, Iterable, List, Optional

from joblib import Parallel, delayed, parallel_config

logger = logging.getLogger(__name__)


def resolve_workers(threads: Optional[int]) -> int:
    """--threads convention: 0 or None = all cores"""
    if not threads:
        return os.cpu_count() or 1
    return max(1, int(threads))


class WorkerPool:
    """
    Bounded pool around joblib.Parallel
    joblib handles process management internally,
    this class provides a convenient ordered-map interface
    """

    def __init__(self, threads: Optional[int] = None, backend: str = 'loky'):
        self.n_jobs = resolve_workers(threads)
        self.backend = backend

    def map(self, func: Callable, items: Iterable, batch_size='auto') -> List:
        """Apply func to every item, results in item order"""
        items = list(items)
        if self.n_jobs == 1 or len(items) <= 1:
            return [func(item) for item in items]

        logger.debug(f'Dispatching {len(items)} tasks to {self.n_jobs} workers ({self.backend})')
        parallel = Parallel(n_jobs=self.n_jobs, backend=self.backend, batch_size=batch_size)
        if self.backend != 'loky':
            return parallel(delayed(func)(item) for item in items)
        with limited_threads(1):
            return parallel(delayed(func)(item) for item in items)

    def starmap(self, func: Callable, arg_tuples: Iterable, batch_size='auto') -> List:
        """Apply func(*args) to every tuple, results in tuple order"""
        return self.map(_Star(func), arg_tuples, batch_size=batch_size)


class _Star:
    """Picklable adapter unpacking argument tuples"""

    def __init__(self, func):
        self.func = func

    def __call__(self, args):
        return self.func(*args)


@contextmanager
def limited_threads(n_threads: int):
    """
    Context manager capping native thread pools inside workers

    Usage:
        with limited_threads(1):
            pool.map(...)
    """
    with parallel_config(backend='loky', inner_max_num_threads=n_threads):
        yield
