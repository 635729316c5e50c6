"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.

Batch-execution backends for the data-parallel parts of the pipeline (pilot traversal and
entry selection). A backend maps a function over independent work items and returns the
results in item order; results never depend on the backend.

A backend flagged `vectorized` also runs the pilot traversal of a whole batch as array
operations in one call, which is how a data-parallel device processes it; the worker pool then
only serves the per-query stages.
"""

import os
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, Protocol, TypeVar

logger = logging.getLogger(__name__)

THREADS_ENV = "STAGEDANN_THREADS"

Item = TypeVar("Item")
Result = TypeVar("Result")


class Backend(Protocol):
    workers: int
    vectorized: bool

    def map(self, fn: Callable[[Item], Result], items: Iterable[Item]) -> List[Result]:
        ...

    def close(self) -> None:
        ...


class SerialBackend:
    """Runs every item in the calling thread."""

    workers = 1

    def __init__(self, vectorized: bool = False):
        self.vectorized = vectorized

    def map(self, fn: Callable[[Item], Result], items: Iterable[Item]) -> List[Result]:
        return [fn(item) for item in items]

    def close(self) -> None:
        pass

    def __repr__(self) -> str:
        return f"<SerialBackend vectorized={self.vectorized}>"


class ThreadPoolBackend:
    """Worker pool over items; the reference multi-threaded backend."""

    def __init__(self, workers: int, vectorized: bool = False):
        self.workers = max(1, workers)
        self.vectorized = vectorized
        self._pool = ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="stagedann")

    def map(self, fn: Callable[[Item], Result], items: Iterable[Item]) -> List[Result]:
        return list(self._pool.map(fn, items))

    def close(self) -> None:
        self._pool.shutdown(wait=True)

    def __enter__(self) -> "ThreadPoolBackend":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __repr__(self) -> str:
        return f"<ThreadPoolBackend workers={self.workers} vectorized={self.vectorized}>"


def resolve_workers(threads: Optional[int] = None) -> int:
    """Explicit thread count, else the STAGEDANN_THREADS variable, else the CPU count."""
    if threads:
        return int(threads)
    pinned = os.environ.get(THREADS_ENV)
    if pinned:
        try:
            return max(1, int(pinned))
        except ValueError:
            logger.warning(f"Ignoring non-integer {THREADS_ENV}={pinned!r}")
    return os.cpu_count() or 1


def make_backend(threads: Optional[int] = None, vectorized: bool = False) -> Backend:
    workers = resolve_workers(threads)
    return SerialBackend(vectorized) if workers == 1 else ThreadPoolBackend(workers, vectorized)
