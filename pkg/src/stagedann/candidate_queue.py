"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.
"""

from bisect import bisect_left
from typing import List, Optional, Set, Tuple

from .exceptions import ParameterException


class CandidateQueue:
    """Bounded best-first queue of (id, distance, checked) entries.

    Entries are kept sorted by (distance, id). `insert` may grow the queue past its capacity
    until the next `resize`, which keeps the `capacity` best entries.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ParameterException(f"Queue capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._keys: List[Tuple[float, int]] = []
        self._present: Set[int] = set()
        self._checked: Set[int] = set()
        # lowest index that may hold an unchecked entry
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._keys)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self._present

    def __repr__(self) -> str:
        return f"<CandidateQueue size={len(self._keys)} capacity={self.capacity}>"

    @property
    def worst_distance(self) -> float:
        """Distance of the last entry that survives a resize, +inf while not full."""
        if len(self._keys) < self.capacity:
            return float("inf")
        return self._keys[self.capacity - 1][0]

    def insert(self, node_id: int, distance: float) -> bool:
        """Insert an entry; return False when it is a duplicate or would not survive a resize."""
        node_id = int(node_id)
        if node_id in self._present:
            return False
        key = (float(distance), node_id)
        if len(self._keys) >= self.capacity and key > self._keys[self.capacity - 1]:
            return False
        pos = bisect_left(self._keys, key)
        self._keys.insert(pos, key)
        self._present.add(node_id)
        self._cursor = min(self._cursor, pos)
        return True

    def resize(self) -> List[int]:
        """Truncate to capacity and return the evicted ids."""
        evicted = [node_id for _, node_id in self._keys[self.capacity :]]
        if evicted:
            del self._keys[self.capacity :]
            for node_id in evicted:
                self._present.discard(node_id)
                self._checked.discard(node_id)
        return evicted

    def pop_unchecked(self) -> Optional[Tuple[int, float]]:
        """Mark the first unchecked entry as checked and return it, or None when all are checked."""
        pos = self._cursor
        while pos < len(self._keys) and self._keys[pos][1] in self._checked:
            pos += 1
        self._cursor = pos
        if pos == len(self._keys):
            return None
        distance, node_id = self._keys[pos]
        self._checked.add(node_id)
        self._cursor = pos + 1
        return node_id, distance

    def has_unchecked(self) -> bool:
        return any(node_id not in self._checked for _, node_id in self._keys[self._cursor :])

    def entries(self) -> List[Tuple[int, float, bool]]:
        """All entries as (id, distance, checked), best first."""
        return [(node_id, distance, node_id in self._checked) for distance, node_id in self._keys]

    def ids(self) -> List[int]:
        return [node_id for _, node_id in self._keys]

    def distances(self) -> List[float]:
        return [distance for distance, _ in self._keys]

    def top(self, k: int) -> List[Tuple[int, float]]:
        """The k best (id, distance) pairs."""
        return [(node_id, distance) for distance, node_id in self._keys[:k]]
