#
# executors.py
# TStream-Engine-py
#
# Manages the pool of single-thread executor lanes that process operation chains in parallel.
#
# Thales Matheus Mendonça Santos - November 2025

"""Executor lanes for epoch execution.

Each lane is a ``ThreadPoolExecutor`` with exactly one worker, so work sent
to a lane runs serially while lanes run side by side. A chain is always
handed to the lane that owns its key's partition, which is what lets
executors process chains without locking shared values.
"""

import logging
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")


class ExecutorPool:
    """Fixed set of single-worker lanes with busy-time accounting."""

    def __init__(self, lanes: int, *, name: str = "tstream-exec"):
        if lanes < 1:
            raise ValueError("Executor pool size must be at least 1")
        self._size = lanes
        self._executors: List[ThreadPoolExecutor] = []
        self._busy_ns = [0] * lanes
        self._lock = threading.Lock()
        for index in range(lanes):
            self._executors.append(ThreadPoolExecutor(max_workers=1, thread_name_prefix=f"{name}-{index}"))
        logger.debug("Started %d executor lanes", lanes)

    @property
    def size(self) -> int:
        return self._size

    def lane_for(self, partition: int) -> int:
        return partition % self._size

    def _timed(self, lane: int, task: Callable[[], T]) -> Callable[[], T]:
        def run() -> T:
            started = time.perf_counter_ns()
            try:
                return task()
            finally:
                elapsed = time.perf_counter_ns() - started
                with self._lock:
                    self._busy_ns[lane] += elapsed
        return run

    def run_lanes(self, tasks: Dict[int, Callable[[], T]]) -> Dict[int, T]:
        """Run one callable per lane and wait for all; the first failure is re-raised."""
        if not self._executors:
            raise RuntimeError("Executor pool has been closed")
        if len(tasks) == 1 or self._size == 1:
            # Nothing to overlap; skip the thread hop
            return {lane: self._timed(lane, task)() for lane, task in tasks.items()}

        futures: Dict[int, Future] = {
            lane: self._executors[lane].submit(self._timed(lane, task)) for lane, task in tasks.items()
        }
        results: Dict[int, T] = {}
        failure: Optional[BaseException] = None
        for lane, future in futures.items():
            try:
                results[lane] = future.result()
            except BaseException as exc:  # noqa: BLE001
                failure = failure or exc
        if failure is not None:
            raise failure
        return results

    def busy_ns(self) -> List[int]:
        with self._lock:
            return list(self._busy_ns)

    def close(self) -> None:
        for index, executor in enumerate(self._executors):
            try:
                executor.shutdown(wait=True)
            except Exception as exc:  # noqa: BLE001
                logger.warning("Error closing executor lane #%d: %s", index, exc)
        self._executors.clear()

    def __enter__(self) -> "ExecutorPool":
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()
