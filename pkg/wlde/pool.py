"""Fan independent jobs out over worker threads."""

import asyncio
from typing import Callable, List, Sequence, TypeVar

T = TypeVar("T")


async def run_parallel_async(jobs: Sequence[Callable[[], T]], threads: int = 1) -> List[T]:
    """
    Run zero-argument jobs concurrently, at most ``threads`` at a time.

    Args:
        jobs: Callables with no arguments
        threads: Maximum number of jobs running at once

    Returns:
        Job results in submission order
    """
    semaphore = asyncio.Semaphore(max(1, threads))

    async def run_one(job: Callable[[], T]) -> T:
        async with semaphore:
            return await asyncio.to_thread(job)

    # Create tasks for all jobs
    tasks = [run_one(job) for job in jobs]

    # Wait for all to complete; gather keeps submission order
    return list(await asyncio.gather(*tasks))


def run_parallel(jobs: Sequence[Callable[[], T]], threads: int = 1) -> List[T]:
    """Synchronous wrapper; with one thread the jobs simply run in order."""
    if threads <= 1:
        return [job() for job in jobs]
    return asyncio.run(run_parallel_async(jobs, threads))
