"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.

Fast entry selection: entry vectors grouped into r coarse k-means cells, queries routed to the
nearest centroid, and query-to-entry distances computed only inside the routed cell.

The distance kernel is cell-centric: each cell is one work unit that walks its entries and the
vector dimensions in tiles of 32 and accumulates partial distances for the queries routed to it,
skipping every other query.
"""

import time
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .backends import Backend, SerialBackend
from .exceptions import DimensionMismatchException, ParameterException

logger = logging.getLogger(__name__)

DEFAULT_R = 32
DEFAULT_ITERS = 25
TILE = 32
ROUTE_CHUNK = 4096


class EntryIndex:
    """Centroids (r×d'), per-cell member ids and the members' primary vectors grouped by cell."""

    def __init__(self, centroids: np.ndarray, cell_members: Sequence[np.ndarray], entry_vectors: Sequence[np.ndarray]):
        if len(cell_members) != centroids.shape[0] or len(entry_vectors) != centroids.shape[0]:
            raise DimensionMismatchException("Cell lists do not match the number of centroids")
        self.centroids = np.ascontiguousarray(centroids, dtype=np.float32)
        self.cell_members = [np.asarray(ids, dtype=np.int64) for ids in cell_members]
        self.entry_vectors = [np.ascontiguousarray(vecs, dtype=np.float32) for vecs in entry_vectors]

    @property
    def r(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.centroids.shape[1])

    def __repr__(self) -> str:
        return f"<EntryIndex r={self.r} dim={self.dim} entries={int(self.cell_sizes().sum())}>"

    def cell_sizes(self) -> np.ndarray:
        return np.asarray([ids.size for ids in self.cell_members], dtype=np.int64)

    def imbalance(self) -> Tuple[int, float]:
        """(max cell size, mean cell size)."""
        sizes = self.cell_sizes()
        return int(sizes.max()), float(sizes.mean())

    def arrays(self) -> List[np.ndarray]:
        """Arrays persisted in the pilot bundle: centroids, cell sizes, concatenated member ids."""
        ids = np.concatenate(self.cell_members) if self.r else np.zeros(0, dtype=np.int64)
        return [self.centroids, self.cell_sizes(), ids.astype(np.int32)]

    @classmethod
    def read_body(cls, reader, r: int, primary: np.ndarray) -> "EntryIndex":
        dim = primary.shape[1]
        centroids = reader.array(np.float32, r * dim).reshape(r, dim)
        sizes = reader.array(np.int64, r)
        ids = reader.array(np.int32, int(sizes.sum())).astype(np.int64)
        cells = np.split(ids, np.cumsum(sizes)[:-1])
        return cls(centroids, cells, [primary[cell] for cell in cells])


class EntryResult:
    """Per query: routed cell, top-e entry ids and their ascending primary distances."""

    def __init__(self, routed: np.ndarray, ids: List[np.ndarray], distances: List[np.ndarray], computations: int):
        self.routed = routed
        self.ids = ids
        self.distances = distances
        self.computations = computations

    def __len__(self) -> int:
        return len(self.ids)

    def __repr__(self) -> str:
        return f"<EntryResult queries={len(self.ids)} computations={self.computations}>"


def _squared_to_centroids(vectors: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    out = np.empty((vectors.shape[0], centroids.shape[0]), dtype=np.float64)
    for start in range(0, vectors.shape[0], ROUTE_CHUNK):
        diff = vectors[start : start + ROUTE_CHUNK, None, :].astype(np.float64) - centroids[None, :, :]
        out[start : start + ROUTE_CHUNK] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _kmeans_plus_plus(vectors: np.ndarray, r: int, rng: np.random.Generator) -> np.ndarray:
    centroids = np.empty((r, vectors.shape[1]), dtype=np.float64)
    centroids[0] = vectors[rng.integers(vectors.shape[0])]
    closest = _squared_to_centroids(vectors, centroids[:1])[:, 0]
    for i in range(1, r):
        total = closest.sum()
        pick = rng.choice(vectors.shape[0], p=closest / total) if total > 0 else rng.integers(vectors.shape[0])
        centroids[i] = vectors[pick]
        closest = np.minimum(closest, _squared_to_centroids(vectors, centroids[i : i + 1])[:, 0])
    return centroids


def train_entry_index(
    member_primary_vectors: np.ndarray,
    r: int = DEFAULT_R,
    iters: int = DEFAULT_ITERS,
    seed: int = 0,
    ids: Optional[np.ndarray] = None,
) -> EntryIndex:
    """k-means with k-means++ initialization over the entry candidates.

    At most `iters` Lloyd rounds are run (fewer when assignments stop changing). An empty cluster
    is reseeded with the point of the largest cluster that lies farthest from its centroid.

    Args:
        member_primary_vectors: Primary vectors of the entry candidates.
        r: Number of cells.
        iters: Iteration budget.
        seed: Seed of the PCG64 generator.
        ids: Node ids of the rows; row positions when omitted.

    Raises:
        ParameterException: when there are fewer candidates than cells.
    """
    vectors = np.asarray(member_primary_vectors, dtype=np.float32)
    if iters < 1:
        raise ParameterException(f"iters must be >= 1, got {iters}")
    if r < 1 or vectors.shape[0] < r:
        raise ParameterException(f"Need at least r={r} entry candidates, got {vectors.shape[0]}")
    ids = np.arange(vectors.shape[0]) if ids is None else np.asarray(ids, dtype=np.int64)
    started = time.perf_counter()
    rng = np.random.Generator(np.random.PCG64(seed))
    centroids = _kmeans_plus_plus(vectors, r, rng)
    labels = None
    for _ in range(iters):
        distances = _squared_to_centroids(vectors, centroids)
        new_labels = np.argmin(distances, axis=1)
        for empty in np.flatnonzero(np.bincount(new_labels, minlength=r) == 0):
            largest = int(np.argmax(np.bincount(new_labels, minlength=r)))
            inside = np.flatnonzero(new_labels == largest)
            farthest = inside[int(np.argmax(distances[inside, largest]))]
            new_labels[farthest] = empty
            centroids[empty] = vectors[farthest]
        for cell in range(r):
            centroids[cell] = vectors[new_labels == cell].mean(axis=0)
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
    cells = [np.flatnonzero(labels == cell) for cell in range(r)]
    index = EntryIndex(centroids, [ids[cell] for cell in cells], [vectors[cell] for cell in cells])
    largest, mean = index.imbalance()
    logger.info(
        f"Trained {r} entry cells over {vectors.shape[0]} vectors in {time.perf_counter() - started:.1f}s "
        f"(max cell {largest}, mean {mean:.1f})"
    )
    return index


def route_queries(index: EntryIndex, queries_primary: np.ndarray) -> np.ndarray:
    """Nearest centroid per query, ties to the lower cluster id."""
    queries_primary = np.asarray(queries_primary, dtype=np.float32)
    if queries_primary.shape[1] != index.dim:
        raise DimensionMismatchException(f"Query dim {queries_primary.shape[1]} != centroid dim {index.dim}")
    return np.argmin(_squared_to_centroids(queries_primary, index.centroids), axis=1)


def _cell_block(index: EntryIndex, queries: np.ndarray, routed: np.ndarray, cell: int):
    active = np.flatnonzero(routed == cell)
    entries = index.entry_vectors[cell]
    if active.size == 0 or entries.shape[0] == 0:
        return active, None
    lhs_all = queries[active]
    partial = np.zeros((active.size, entries.shape[0]), dtype=np.float32)
    for j in range(0, entries.shape[0], TILE):
        for k in range(0, index.dim, TILE):
            rhs = entries[j : j + TILE, k : k + TILE]
            diff = lhs_all[:, None, k : k + TILE] - rhs[None, :, :]
            partial[:, j : j + TILE] += np.einsum("ijk,ijk->ij", diff, diff)
    return active, partial


def tiled_entry_distances(
    index: EntryIndex,
    queries_primary: np.ndarray,
    routed: np.ndarray,
    e: int,
    backend: Optional[Backend] = None,
) -> EntryResult:
    """Top-e entries per query among the members of its routed cell.

    Cells are independent work units mapped over the backend; a query routed to an empty cell
    gets an empty row.
    """
    if e < 1:
        raise ParameterException(f"e must be >= 1, got {e}")
    queries_primary = np.ascontiguousarray(queries_primary, dtype=np.float32)
    routed = np.asarray(routed)
    backend = backend or SerialBackend()
    blocks = backend.map(lambda cell: _cell_block(index, queries_primary, routed, cell), range(index.r))
    m = queries_primary.shape[0]
    ids: List[np.ndarray] = [np.zeros(0, dtype=np.int64) for _ in range(m)]
    distances: List[np.ndarray] = [np.zeros(0, dtype=np.float32) for _ in range(m)]
    computations = 0
    for cell, (active, partial) in enumerate(blocks):
        if partial is None:
            if active.size:
                logger.warning(f"{active.size} queries routed to empty entry cell {cell}")
            continue
        computations += partial.size
        members = index.cell_members[cell]
        for row, query in enumerate(active.tolist()):
            order = np.lexsort((members, partial[row]))[:e]
            ids[query] = members[order]
            distances[query] = partial[row][order]
    return EntryResult(routed, ids, distances, computations)


def select_entries(
    index: EntryIndex, queries_primary: np.ndarray, e: int, backend: Optional[Backend] = None
) -> EntryResult:
    """Route the queries and compute their top-e entries."""
    return tiled_entry_distances(index, queries_primary, route_queries(index, queries_primary), e, backend)


def count_fes_work(m: int, n: int, d: int, r: int) -> Dict[str, float]:
    """Closed-form computations, memory reads and computational density of entry selection,
    assuming balanced cells of n/r entries.

    One query routed to one cell behaves like a graph-traversal step (density n / (1 + n)).
    """
    if min(m, n, d, r) < 1:
        raise ParameterException(f"count_fes_work needs positive integers, got m={m} n={n} d={d} r={r}")
    if m == 1:
        return {"computations": n * d / r, "memory_reads": d + n * d / r, "density": n / (1 + n)}
    return {
        "computations": m * n * d / r,
        "memory_reads": float(m * d + n * d),
        "density": m * n / (r * (m + n)),
    }


def traversal_entries(
    graph, primary_vectors: np.ndarray, query_primary: np.ndarray, starts: Sequence[int], e: int, hops: int = 2
) -> Tuple[np.ndarray, int]:
    """Entry baseline without clustering: expand `starts` for `hops` hops on the graph and keep
    the e nodes closest to the query in the primary space.

    Returns the entry ids and the number of distance evaluations.
    """
    if e < 1:
        raise ParameterException(f"e must be >= 1, got {e}")
    reached = set(int(i) for i in starts)
    frontier = list(reached)
    for _ in range(hops):
        following = []
        for node in frontier:
            for neighbor in graph.neighbors(node).tolist():
                if neighbor not in reached:
                    reached.add(neighbor)
                    following.append(neighbor)
        frontier = following
    ids = np.fromiter(sorted(reached), dtype=np.int64, count=len(reached))
    diff = primary_vectors[ids] - query_primary
    distances = np.einsum("ij,ij->i", diff, diff)
    order = np.lexsort((ids, distances))[:e]
    return ids[order], int(ids.size)
