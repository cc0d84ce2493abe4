import functools
import logging
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import ray

logger = logging.getLogger("klsens")


def initialize_ray(num_cpus: int):
    if not ray.is_initialized():
        logger.info(f"starting ray with {num_cpus} CPUs")
        ray.init(num_cpus=num_cpus, include_dashboard=False, log_to_driver=False)


@functools.lru_cache(maxsize=None)
def _remote(func: Callable) -> Any:
    return ray.remote(func)


def run_tasks(func: Callable, tasks: Sequence[Tuple], max_processes: Optional[int] = None) -> List[Any]:
    """
    Run ``func(*args)`` for every argument tuple and return the results in
    task order. With more than one process the tasks go to ray workers, at
    most ``2 * max_processes`` in flight.
    """
    if max_processes is None or max_processes <= 1:
        return [func(*args) for args in tasks]

    initialize_ray(max_processes)
    remote = _remote(func)
    results: List[Any] = [None] * len(tasks)
    index: Dict[Any, int] = {}
    futures: List[Any] = []

    def collect():
        nonlocal futures
        finished, futures = ray.wait(futures, num_returns=1)
        results[index.pop(finished[0])] = ray.get(finished[0])

    for i, args in enumerate(tasks):
        ref = remote.remote(*args)
        index[ref] = i
        futures.append(ref)
        if len(futures) >= max_processes * 2:
            collect()
    while len(futures) > 0:
        collect()
    return results
