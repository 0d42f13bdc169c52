"""Order-preserving map over independent tasks, optionally in worker processes."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Optional


def map_tasks(fn: Callable, tasks: Iterable, workers: Optional[int] = None) -> list:
    """Apply ``fn`` to every task and return results in task order.

    Each task must carry its own random stream, so the result does not
    depend on ``workers``. ``None`` or 1 runs in-process.
    """
    tasks = list(tasks)
    if not workers or workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
