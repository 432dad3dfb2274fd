"""Replica-level parallel map with a fixed reduction order."""
from concurrent.futures import ProcessPoolExecutor


def map_ordered(fn, tasks, workers=1):
    """``[fn(t) for t in tasks]``, optionally spread over ``workers`` processes.

    Results come back in task order whatever the worker count, so
    downstream reductions are reproducible.
    """
    tasks = list(tasks)
    if workers is None or workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=int(workers)) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
