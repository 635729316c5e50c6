"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.

Bloom filter visited tables for the pilot traversal: one bitarray filter per query, and a
row-per-query bit matrix for the vectorized batch traversal. Both derive bit positions from the
same cached MurmurHash3 pairs, so a query sees the same false positives on either path.
"""

import math
import threading
from typing import Iterable, Optional

import mmh3
import numpy as np
from bitarray import bitarray

from .exceptions import ParameterException

BITS_PER_EF = 64
DEFAULT_HASHES = 4
HASH_TABLE_LIMIT = 1 << 24
GROWTH_SLACK = 1 << 16


def hash_pair(node_id: int) -> tuple:
    """Two unsigned 64-bit MurmurHash3 halves of a node id."""
    return mmh3.hash64(int(node_id).to_bytes(8, "little", signed=True), seed=0, x64arch=True, signed=False)


class _HashTable:
    """Hash pairs of the ids [0, size), grown on demand up to HASH_TABLE_LIMIT."""

    def __init__(self):
        self._lock = threading.Lock()
        self._pairs = np.zeros((0, 2), dtype=np.uint64)

    def _grow(self, size: int) -> np.ndarray:
        with self._lock:
            pairs = self._pairs
            if size > len(pairs):
                size = max(size, min(2 * len(pairs), HASH_TABLE_LIMIT))
                extra = np.array([hash_pair(i) for i in range(len(pairs), size)], dtype=np.uint64)
                pairs = np.concatenate([pairs, extra.reshape(-1, 2)])
                self._pairs = pairs
            return pairs

    def lookup(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64).ravel()
        if ids.size == 0:
            return np.zeros((0, 2), dtype=np.uint64)
        low, high = int(ids.min()), int(ids.max())
        pairs = self._pairs
        if high >= len(pairs):
            sparse = high + 1 - len(pairs) > GROWTH_SLACK + 4 * ids.size
            if low < 0 or high >= HASH_TABLE_LIMIT or sparse:
                return np.array([hash_pair(i) for i in ids.tolist()], dtype=np.uint64).reshape(-1, 2)
            pairs = self._grow(high + 1)
        return pairs[ids]


_HASHES = _HashTable()


def prepare_hashes(node_count: int) -> None:
    """Hash the ids [0, node_count) once so later position lookups are array gathers."""
    if node_count > 0:
        _HASHES._grow(min(int(node_count), HASH_TABLE_LIMIT))


def bloom_positions(ids: np.ndarray, bits: int, hashes: int = DEFAULT_HASHES) -> np.ndarray:
    """Bit positions ``(h1 + i * (h2 | 1)) mod 2**64 mod bits`` of every id, shape (len(ids), hashes)."""
    pairs = _HASHES.lookup(ids)
    step = pairs[:, 1] | np.uint64(1)
    rounds = np.arange(hashes, dtype=np.uint64)
    with np.errstate(over="ignore"):
        positions = pairs[:, :1] + rounds[None, :] * step[:, None]
    return (positions % np.uint64(bits)).astype(np.int64)


class BloomVisited:
    """Fixed-size bloom filter used as the visited table of the pilot traversal.

    There are no false negatives; false positives make the traversal skip a node that was never
    evaluated.
    """

    def __init__(self, bits: int, hashes: int = DEFAULT_HASHES):
        if bits < 8 or hashes < 1:
            raise ParameterException(f"Invalid bloom parameters bits={bits} hashes={hashes}")
        self.bits = int(bits)
        self.hashes = int(hashes)
        self.inserted = 0
        self.bit_array = bitarray(self.bits, endian="little")
        self.bit_array.setall(0)

    @classmethod
    def for_ef(cls, ef: int) -> "BloomVisited":
        """Filter sized for a pilot traversal with queue size ef (64·ef bits, 4 hashes)."""
        return cls(BITS_PER_EF * max(1, ef), DEFAULT_HASHES)

    def __repr__(self) -> str:
        return f"<BloomVisited bits={self.bits} hashes={self.hashes} inserted={self.inserted}>"

    def as_numpy(self) -> np.ndarray:
        """The bits as a boolean vector."""
        packed = np.frombuffer(self.bit_array.tobytes(), dtype=np.uint8)
        return np.unpackbits(packed, bitorder="little")[: self.bits].astype(bool)

    def _set(self, positions: np.ndarray) -> None:
        mask = np.zeros(self.bits, dtype=bool)
        mask[positions.ravel()] = True
        update = bitarray(endian="little")
        update.frombytes(np.packbits(mask, bitorder="little").tobytes())
        self.bit_array |= update[: self.bits]

    def mark(self, ids: Iterable[int]) -> None:
        if isinstance(ids, np.ndarray):
            ids = ids.astype(np.int64, copy=False).ravel()
        else:
            ids = np.fromiter((int(i) for i in ids), dtype=np.int64)
        if ids.size:
            self._set(bloom_positions(ids, self.bits, self.hashes))
            self.inserted += int(ids.size)

    def __contains__(self, node_id: int) -> bool:
        return bool(self.contains_many(np.array([node_id]))[0])

    def contains_many(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64).ravel()
        if ids.size == 0:
            return np.zeros(0, dtype=bool)
        return self.as_numpy()[bloom_positions(ids, self.bits, self.hashes)].all(axis=1)

    def check_and_mark(self, ids: np.ndarray) -> np.ndarray:
        """Return the ids testing negative (first occurrences, input order) and insert them.

        Every id is tested against the filter as it was before the call.
        """
        ids = np.asarray(ids, dtype=np.int64).ravel()
        if ids.size == 0:
            return ids
        _, first = np.unique(ids, return_index=True)
        once = np.zeros(ids.size, dtype=bool)
        once[first] = True
        positions = bloom_positions(ids, self.bits, self.hashes)
        fresh = once & ~self.as_numpy()[positions].all(axis=1)
        if fresh.any():
            self._set(positions[fresh])
            self.inserted += int(fresh.sum())
        return ids[fresh]

    def fill(self, fraction: float, rng: np.random.Generator) -> None:
        """Set round(fraction·bits) uniformly chosen bits, so an unseen id tests positive with
        probability about fraction**hashes."""
        count = int(round(fraction * self.bits))
        if count >= self.bits:
            self.saturate()
        elif count > 0:
            self._set(rng.choice(self.bits, size=count, replace=False))

    def saturate(self) -> None:
        """Set every bit: all ids test positive."""
        self.bit_array.setall(1)

    def expected_false_positive_rate(self, load: Optional[int] = None) -> float:
        """(1 - e^(-h·n/B))^h at `load` insertions (the current count by default)."""
        load = self.inserted if load is None else load
        return (1.0 - math.exp(-self.hashes * load / self.bits)) ** self.hashes


class BloomBatch:
    """Bloom filters of a query batch as a boolean matrix, one row per query."""

    def __init__(self, rows: np.ndarray, hashes: int = DEFAULT_HASHES):
        self.rows = np.asarray(rows, dtype=bool)
        self.bits = int(self.rows.shape[1])
        self.hashes = int(hashes)

    @classmethod
    def from_filters(cls, filters: Iterable[BloomVisited]) -> "BloomBatch":
        filters = list(filters)
        if not filters:
            raise ParameterException("A bloom batch needs at least one filter")
        shapes = {(f.bits, f.hashes) for f in filters}
        if len(shapes) != 1:
            raise ParameterException(f"Bloom filters of a batch differ in shape: {sorted(shapes)}")
        return cls(np.stack([f.as_numpy() for f in filters]), filters[0].hashes)

    def mark(self, rows: np.ndarray, ids: np.ndarray) -> None:
        """Insert ids[j] into the filter of rows[j]."""
        if len(ids):
            positions = bloom_positions(ids, self.bits, self.hashes)
            self.rows[np.asarray(rows)[:, None], positions] = True

    def check_and_mark(self, rows: np.ndarray, ids: np.ndarray) -> np.ndarray:
        """Mask of the (row, id) pairs testing negative, which are then inserted. Pairs are tested
        against the state before the call; ids within one row must be distinct."""
        rows = np.asarray(rows)
        if len(ids) == 0:
            return np.zeros(0, dtype=bool)
        positions = bloom_positions(ids, self.bits, self.hashes)
        fresh = ~self.rows[rows[:, None], positions].all(axis=1)
        self.rows[rows[fresh][:, None], positions[fresh]] = True
        return fresh
