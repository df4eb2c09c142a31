"""Runs independent jobs (cross-validation folds, ablation arms) in
parallel. Results always come back in job order, so reports assembled from
them do not depend on the thread count.
"""
import contextvars
import os
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

import numpy as np

from claip_emo import utils
from claip_emo.enums import EnvVars
from claip_emo.errors import EnvVarError
from claip_emo.logger import get_logger

logger = get_logger(__name__)

T = TypeVar("T")


def get_threads(threads: Optional[int] = None) -> int:
    """Thread count from the flag, else CLAIP_THREADS, else 1."""
    if threads is None:
        raw = utils.read_env_vars_and_defaults(EnvVars.CLAIP_THREADS)
        try:
            threads = int(raw) if raw is not None else 1
        except ValueError:
            raise EnvVarError(f"{EnvVars.CLAIP_THREADS} must be an integer, got `{raw}`")
    if threads < 1:
        raise EnvVarError(f"thread count must be >= 1, got {threads}")
    return threads


def get_processes(max_processes: int) -> int:
    """Workers worth starting: no more than the CPUs available."""
    return max(1, min(os.cpu_count() or 1, max_processes))


class JobChunk:
    """A named list of jobs run one after another with progress logging."""

    def __init__(self, jobs: Sequence[Callable[[], T]], name: str = "jobs", chunk_id: int = 0):
        self.jobs = list(jobs)
        self.name = name
        self.chunk_id = chunk_id
        self.n_jobs = len(self.jobs)

    def process(self) -> List[T]:
        results = []
        start = time.time()
        for n_done, job in enumerate(self.jobs, start=1):
            t_job_start = time.time()
            results.append(job())
            t_job_end = time.time()
            time_left = round((self.n_jobs - n_done) * (t_job_end - t_job_start), 0)
            logger.info(f"{self.name} chunk={self.chunk_id} completed={self._calculate_percent_done(n_done, self.n_jobs)}/100% "
                        f"estimated time left {time_left} seconds")
        logger.info(f"{self.name} chunk={self.chunk_id} took {time.time() - start:.1f} sec for {self.n_jobs} jobs")
        return results

    @staticmethod
    def _calculate_percent_done(current_step, total_steps, rounding=0):
        percent = current_step / max(1e-9, total_steps)
        return round(100 * percent, rounding)


def run_jobs(jobs: Sequence[Callable[[], T]], threads: int = 1, name: str = "jobs") -> List[T]:
    """Runs ``jobs`` on up to ``threads`` threads and returns results in job order.

    Jobs are dealt into contiguous chunks, one chunk per thread. Each chunk
    runs in a copy of the caller's context, so settings such as the default
    dtype carry over to the workers.
    """
    jobs = list(jobs)
    if not jobs:
        return []
    n_workers = min(get_processes(threads), len(jobs))
    if n_workers == 1:
        return JobChunk(jobs, name=name).process()
    logger.info(f"running {len(jobs)} {name} on {n_workers} threads")
    bounds = np.array_split(np.arange(len(jobs)), n_workers)
    chunks = [JobChunk([jobs[i] for i in idx], name=name, chunk_id=c) for c, idx in enumerate(bounds)]
    contexts = [contextvars.copy_context() for _ in chunks]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        futures = [pool.submit(context.run, chunk.process) for context, chunk in zip(contexts, chunks)]
        chunk_results = [future.result() for future in futures]
    return [result for results in chunk_results for result in results]
