"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.

Proximity graph in CSR form, single-layer batched construction and the canonical greedy
search with an instrumented distance counter.
"""

import time
import logging
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Protocol, Sequence, Set, Tuple, Union

import numpy as np

from .candidate_queue import CandidateQueue
from .dataset_io import FlatVectorSet, GroundTruth, recall_at_k
from .file_utils import FileUtils
from .exceptions import (
    ArtifactFormatException,
    InvalidEntryException,
    ParameterException,
    UnreachableRecallException,
)

logger = logging.getLogger(__name__)

GRAPH_MAGIC = b"SANNGRPH"
GRAPH_VERSION = 1
DEFAULT_M = 32
DEFAULT_EF_CONSTRUCTION = 200
DEFAULT_ENTRY_COUNT = 16
BUILD_BATCH = 256
PRUNE_CHUNK = 64
THRESHOLD_GRID = tuple(i / 16 for i in range(17))


class SearchStats:
    """Counters of one search (or a sum of searches).

    `weighted_computations` adds the dimension of every evaluated distance, so reduced-dimension
    evaluations can be compared with full-dimension ones.
    """

    def __init__(self, distance_computations: int = 0, hops: int = 0, weighted_computations: int = 0):
        self.distance_computations = distance_computations
        self.hops = hops
        self.weighted_computations = weighted_computations

    def count(self, evaluations: int, dim: int) -> None:
        self.distance_computations += evaluations
        self.weighted_computations += evaluations * dim

    def __add__(self, other: "SearchStats") -> "SearchStats":
        return SearchStats(
            self.distance_computations + other.distance_computations,
            self.hops + other.hops,
            self.weighted_computations + other.weighted_computations,
        )

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SearchStats) and self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        return f"<SearchStats computations={self.distance_computations} hops={self.hops}>"

    def to_dict(self) -> dict:
        return {
            "distance_computations": self.distance_computations,
            "hops": self.hops,
            "weighted_computations": self.weighted_computations,
        }


class DistanceSource(Protocol):
    """Anything that evaluates squared distances from a query to a set of node ids."""

    dim: int

    def distances(self, query: np.ndarray, ids: np.ndarray) -> np.ndarray:
        ...


class VectorDistance:
    """Squared Euclidean distances against the rows of a matrix indexed by node id."""

    def __init__(self, vectors: Union[FlatVectorSet, np.ndarray]):
        self.vectors = vectors.data if isinstance(vectors, FlatVectorSet) else np.asarray(vectors, dtype=np.float32)
        self.dim = int(self.vectors.shape[1])

    def distances(self, query: np.ndarray, ids: np.ndarray) -> np.ndarray:
        diff = self.vectors[ids] - query
        return np.einsum("ij,ij->i", diff, diff)


class Visited(Protocol):
    """Visited-node table used at the "unvisited neighbor" test of the greedy search."""

    def check_and_mark(self, ids: np.ndarray) -> np.ndarray:
        ...

    def mark(self, ids: Iterable[int]) -> None:
        ...


class ExactVisited:
    """Exact visited table backed by a set."""

    def __init__(self, ids: Iterable[int] = ()):
        self.ids: Set[int] = set(int(i) for i in ids)

    def __contains__(self, node_id: int) -> bool:
        return int(node_id) in self.ids

    def __len__(self) -> int:
        return len(self.ids)

    def mark(self, ids: Iterable[int]) -> None:
        self.ids.update(int(i) for i in ids)

    def check_and_mark(self, ids: np.ndarray) -> np.ndarray:
        """Return the ids not yet visited (in input order) and mark them."""
        fresh = [int(i) for i in ids if int(i) not in self.ids]
        self.ids.update(fresh)
        return np.asarray(fresh, dtype=np.int64)


class Graph(Protocol):
    node_count: int

    def neighbors(self, node_id: int) -> np.ndarray:
        ...


class CsrGraph:
    """Adjacency in compressed sparse row form.

    `offsets` has node_count + 1 int64 entries; the neighbors of node u are
    ``neighbors[offsets[u]:offsets[u + 1]]``.
    """

    def __init__(self, offsets: np.ndarray, neighbors: np.ndarray, max_degree: int):
        self.offsets = np.ascontiguousarray(offsets, dtype=np.int64)
        self.neighbor_ids = np.ascontiguousarray(neighbors, dtype=np.int32)
        self.max_degree = int(max_degree)
        self.node_count = int(self.offsets.shape[0] - 1)
        self.offsets.setflags(write=False)
        self.neighbor_ids.setflags(write=False)

    @classmethod
    def from_adjacency(cls, adjacency: Sequence[Sequence[int]], max_degree: int) -> "CsrGraph":
        degrees = np.fromiter((len(row) for row in adjacency), dtype=np.int64, count=len(adjacency))
        offsets = np.zeros(len(adjacency) + 1, dtype=np.int64)
        np.cumsum(degrees, out=offsets[1:])
        flat = np.fromiter((v for row in adjacency for v in row), dtype=np.int32, count=int(offsets[-1]))
        return cls(offsets, flat, max_degree)

    @classmethod
    def from_padded(cls, adjacency: np.ndarray, degrees: np.ndarray) -> "CsrGraph":
        """Graph from rows of neighbor ids, each left-packed to its degree."""
        degrees = np.asarray(degrees, dtype=np.int64)
        offsets = np.zeros(adjacency.shape[0] + 1, dtype=np.int64)
        np.cumsum(degrees, out=offsets[1:])
        mask = np.arange(adjacency.shape[1])[None, :] < degrees[:, None]
        return cls(offsets, adjacency[mask], adjacency.shape[1])

    def __repr__(self) -> str:
        return f"<CsrGraph nodes={self.node_count} edges={self.edge_count} M={self.max_degree}>"

    @property
    def edge_count(self) -> int:
        return int(self.neighbor_ids.shape[0])

    def neighbors(self, node_id: int) -> np.ndarray:
        return self.neighbor_ids[self.offsets[node_id] : self.offsets[node_id + 1]]

    def padded_neighbors(self, nodes: np.ndarray) -> np.ndarray:
        """Neighbor lists of `nodes` as rows padded with -1 to the largest of their degrees."""
        nodes = np.asarray(nodes, dtype=np.int64)
        starts = self.offsets[nodes]
        counts = self.offsets[nodes + 1] - starts
        cols = np.arange(int(counts.max()) if nodes.size else 0)
        mask = cols[None, :] < counts[:, None]
        return np.where(mask, self.neighbor_ids[np.where(mask, starts[:, None] + cols[None, :], 0)], -1)

    def degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    def adjacency(self) -> List[List[int]]:
        return [self.neighbors(u).tolist() for u in range(self.node_count)]

    def edge_set(self) -> Set[Tuple[int, int]]:
        return {(u, int(v)) for u in range(self.node_count) for v in self.neighbors(u)}

    def validate(self) -> None:
        """Check the CSR invariants.

        Raises:
            ArtifactFormatException: on the first violated invariant.
        """
        if self.offsets[0] != 0 or self.offsets[-1] != self.edge_count:
            raise ArtifactFormatException("CSR offsets do not span the neighbor array")
        degrees = self.degrees()
        if (degrees < 0).any():
            raise ArtifactFormatException("CSR offsets are decreasing")
        if degrees.size and degrees.max() > self.max_degree:
            raise ArtifactFormatException(f"Node degree {degrees.max()} exceeds M={self.max_degree}")
        if self.edge_count and (self.neighbor_ids.min() < 0 or self.neighbor_ids.max() >= self.node_count):
            raise ArtifactFormatException("CSR neighbor id out of range")
        for u in range(self.node_count):
            row = self.neighbors(u)
            if (row == u).any():
                raise ArtifactFormatException(f"Node {u} has a self-loop")
            if np.unique(row).size != row.size:
                raise ArtifactFormatException(f"Node {u} has duplicate neighbors")

    def header(self) -> Tuple[int, int]:
        return self.node_count, self.max_degree

    def save(self, path: Union[str, Path]) -> int:
        """Persist as header {magic, version, node_count, M}, int64 offsets, int32 neighbors."""
        return FileUtils(path).write_artifact(
            GRAPH_MAGIC, GRAPH_VERSION, "<QI", self.header(), [self.offsets, self.neighbor_ids]
        )

    @classmethod
    def read_body(cls, reader, node_count: int, max_degree: int) -> "CsrGraph":
        offsets = reader.array(np.int64, node_count + 1)
        neighbors = reader.array(np.int32, int(offsets[-1]))
        return cls(offsets, neighbors, max_degree)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CsrGraph":
        _, reader = FileUtils(path).open_artifact(GRAPH_MAGIC, [GRAPH_VERSION])
        node_count, max_degree = reader.unpack("<QI")
        graph = cls.read_body(reader, node_count, max_degree)
        logger.info(f"Loaded {graph} from {path}")
        return graph


def default_entries(node_count: int, count: int = DEFAULT_ENTRY_COUNT, seed: int = 0) -> List[int]:
    """Baseline entry points: node 0 plus `count - 1` fixed pseudo-random distinct nodes."""
    if node_count < 1:
        raise ParameterException("Cannot pick entries from an empty graph")
    rng = np.random.Generator(np.random.PCG64(seed))
    return [0] + _distinct_after_zero(rng, node_count, count - 1).tolist()


def _distinct_after_zero(rng: np.random.Generator, node_count: int, count: int) -> np.ndarray:
    """Up to `count` distinct ids drawn from [1, node_count)."""
    extra = min(count, node_count - 1)
    if extra <= 0:
        return np.zeros(0, dtype=np.int64)
    return rng.choice(node_count - 1, size=extra, replace=False).astype(np.int64) + 1


def greedy_search(
    graph: Graph,
    source: DistanceSource,
    query: np.ndarray,
    entries: Sequence[int],
    ef: int,
    visited: Optional[Visited] = None,
    stats: Optional[SearchStats] = None,
    seeds: Sequence[Tuple[int, float]] = (),
    max_expansions: Optional[int] = None,
) -> CandidateQueue:
    """Best-first traversal with a candidate queue of size ef.

    The queue is seeded with `seeds` (ids whose distances are already known) and `entries` (whose
    distances are computed and counted). Then the best unchecked candidate is expanded repeatedly:
    its unvisited neighbors are marked visited, evaluated and inserted, and the queue is resized
    to ef. The loop ends when no unchecked candidate is left, or after `max_expansions`.
    Evicted ids stay visited and never re-enter.

    Raises:
        InvalidEntryException: when there is no entry or an entry id is out of range.
        ParameterException: when ef < 1.
    """
    if ef < 1:
        raise ParameterException(f"ef must be >= 1, got {ef}")
    if not len(entries) and not len(seeds):
        raise InvalidEntryException("greedy_search needs at least one entry point")
    for node_id in list(entries) + [s for s, _ in seeds]:
        if not 0 <= int(node_id) < graph.node_count:
            raise InvalidEntryException(f"Entry {node_id} outside [0, {graph.node_count})")
    visited = visited if visited is not None else ExactVisited()
    stats = stats if stats is not None else SearchStats()
    queue = CandidateQueue(ef)

    for node_id, distance in seeds:
        queue.insert(node_id, distance)
    visited.mark(s for s, _ in seeds)
    seen = {int(s) for s, _ in seeds}
    fresh_entries = []
    for node_id in entries:
        if int(node_id) not in seen:
            seen.add(int(node_id))
            fresh_entries.append(int(node_id))
    if fresh_entries:
        entry_ids = np.asarray(fresh_entries, dtype=np.int64)
        entry_distances = source.distances(query, entry_ids)
        stats.count(len(entry_ids), source.dim)
        visited.mark(fresh_entries)
        for node_id, distance in zip(fresh_entries, entry_distances.tolist()):
            queue.insert(node_id, distance)
    queue.resize()

    expansions = 0
    while max_expansions is None or expansions < max_expansions:
        item = queue.pop_unchecked()
        if item is None:
            break
        expansions += 1
        stats.hops += 1
        fresh = visited.check_and_mark(graph.neighbors(item[0]))
        if fresh.size == 0:
            continue
        distances = source.distances(query, fresh)
        stats.count(int(fresh.size), source.dim)
        worst = queue.worst_distance
        for node_id, distance in zip(fresh.tolist(), distances.tolist()):
            if distance <= worst:
                queue.insert(node_id, distance)
        queue.resize()
    return queue


class BatchVisited(Protocol):
    """Visited tables of a query batch, addressed by (row, id) pairs."""

    def mark(self, rows: np.ndarray, ids: np.ndarray) -> None:
        ...

    def check_and_mark(self, rows: np.ndarray, ids: np.ndarray) -> np.ndarray:
        ...


class BatchResult:
    """Final queues of a batch search, ids padded with -1 and distances with inf."""

    def __init__(self, ids: np.ndarray, distances: np.ndarray, evaluations: np.ndarray, hops: np.ndarray):
        self.ids = ids
        self.distances = distances
        self.evaluations = evaluations
        self.hops = hops

    def __repr__(self) -> str:
        return f"<BatchResult queries={self.ids.shape[0]} ef={self.ids.shape[1]}>"

    def row(self, index: int) -> Tuple[List[int], List[float]]:
        keep = self.ids[index] >= 0
        return self.ids[index][keep].tolist(), self.distances[index][keep].tolist()

    def stats(self, index: int, dim: int) -> SearchStats:
        stats = SearchStats(hops=int(self.hops[index]))
        stats.count(int(self.evaluations[index]), dim)
        return stats


def _pair_distances(vectors: np.ndarray, queries: np.ndarray, rows: np.ndarray, ids: np.ndarray) -> np.ndarray:
    diff = vectors[ids] - queries[rows]
    return np.einsum("ij,ij->i", diff, diff)


def _key_order(ids: np.ndarray, distances: np.ndarray, width: int) -> np.ndarray:
    """Per-row column order of the `width` smallest (distance, id) keys."""
    return np.lexsort((ids, distances), axis=1)[:, :width]


def _dedupe_rows(ids: np.ndarray) -> np.ndarray:
    """Replace repeats of an id within a row by -1."""
    order = np.argsort(ids, axis=1, kind="stable")
    ordered = np.take_along_axis(ids, order, axis=1)
    repeat = np.zeros(ids.shape, dtype=bool)
    repeat[:, 1:] = (ordered[:, 1:] == ordered[:, :-1]) & (ordered[:, 1:] >= 0)
    result = np.empty_like(ids)
    np.put_along_axis(result, order, np.where(repeat, -1, ordered), axis=1)
    return result


def batch_greedy_search(
    expand: Callable[[np.ndarray], np.ndarray],
    vectors: np.ndarray,
    queries: np.ndarray,
    entries: np.ndarray,
    ef: int,
    entry_distances: Optional[np.ndarray] = None,
    visited: Optional[BatchVisited] = None,
) -> BatchResult:
    """Greedy search of a whole query batch in lockstep with array operations.

    Each step expands the best unchecked candidate of every unfinished row, so a row follows
    the path `greedy_search` takes for it. `expand` maps node ids to their neighbor lists padded
    with -1. `entries` is (queries, E) padded with -1; with `entry_distances` the entries seed the
    queues uncounted, otherwise they are evaluated. With `visited` neighbors are tested against
    the row's table; without it only ids in the row's queue are skipped, so a rejected node can be
    evaluated again.

    Raises:
        ParameterException: when ef < 1.
    """
    if ef < 1:
        raise ParameterException(f"ef must be >= 1, got {ef}")
    count = queries.shape[0]
    entries = _dedupe_rows(np.asarray(entries, dtype=np.int64).reshape(count, -1))
    present = entries >= 0
    rows, cols = np.nonzero(present)
    evaluations = np.zeros(count, dtype=np.int64)
    hops = np.zeros(count, dtype=np.int64)
    if entry_distances is None:
        start = np.full(entries.shape, np.inf)
        start[rows, cols] = _pair_distances(vectors, queries, rows, entries[rows, cols])
        evaluations += present.sum(axis=1)
    else:
        start = np.where(present, np.asarray(entry_distances, dtype=np.float64).reshape(entries.shape), np.inf)
    if visited is not None:
        visited.mark(rows, entries[rows, cols])

    ids = np.concatenate([np.full((count, ef), -1, dtype=np.int64), entries], axis=1)
    distances = np.concatenate([np.full((count, ef), np.inf), start], axis=1)
    order = _key_order(ids, distances, ef)
    ids = np.take_along_axis(ids, order, axis=1)
    distances = np.take_along_axis(distances, order, axis=1)
    checked = np.zeros(ids.shape, dtype=bool)

    while True:
        unchecked = ~checked & (ids >= 0)
        active = np.flatnonzero(unchecked.any(axis=1))
        if active.size == 0:
            break
        best = unchecked[active].argmax(axis=1)
        checked[active, best] = True
        hops[active] += 1
        neighbors = np.asarray(expand(ids[active, best]), dtype=np.int64)
        rows, cols = np.nonzero(neighbors >= 0)
        candidates = neighbors[rows, cols]
        owners = active[rows]
        if visited is not None:
            fresh = visited.check_and_mark(owners, candidates)
        else:
            fresh = ~(ids[owners] == candidates[:, None]).any(axis=1)
        if not fresh.any():
            continue
        rows, cols, candidates, owners = rows[fresh], cols[fresh], candidates[fresh], owners[fresh]
        evaluations += np.bincount(owners, minlength=count)
        new_ids = np.full(neighbors.shape, -1, dtype=np.int64)
        new_ids[rows, cols] = candidates
        new_distances = np.full(neighbors.shape, np.inf)
        new_distances[rows, cols] = _pair_distances(vectors, queries, owners, candidates)
        merged_ids = np.concatenate([ids[active], new_ids], axis=1)
        merged_distances = np.concatenate([distances[active], new_distances], axis=1)
        merged_checked = np.concatenate([checked[active], np.zeros(neighbors.shape, dtype=bool)], axis=1)
        order = _key_order(merged_ids, merged_distances, ef)
        ids[active] = np.take_along_axis(merged_ids, order, axis=1)
        distances[active] = np.take_along_axis(merged_distances, order, axis=1)
        checked[active] = np.take_along_axis(merged_checked, order, axis=1)
    return BatchResult(ids, distances, evaluations, hops)


def select_neighbors(
    vectors: np.ndarray, candidates: Sequence[int], distances: Sequence[float], max_degree: int
) -> List[int]:
    """Occlusion pruning: walk candidates by (distance, id) and drop a candidate c when an
    already selected neighbor s has dist(c, s) < dist(c, node). At most `max_degree` are kept.
    """
    order = sorted(zip(distances, candidates))
    selected: List[int] = []
    for distance, candidate in order:
        if len(selected) >= max_degree:
            break
        if selected:
            diff = vectors[selected] - vectors[candidate]
            if (np.einsum("ij,ij->i", diff, diff) < distance).any():
                continue
        selected.append(int(candidate))
    return selected


def prune_rows(data: np.ndarray, candidates: np.ndarray, distances: np.ndarray, max_degree: int) -> np.ndarray:
    """`select_neighbors` applied to many candidate lists at once.

    Rows of `candidates` are sorted by (distance, id) and padded with -1. Candidate-to-candidate
    distances come from one batched GEMM per chunk of rows. Returns (rows, max_degree) selected
    ids in selection order, padded with -1.
    """
    result = np.full((candidates.shape[0], max_degree), -1, dtype=np.int64)
    for lo in range(0, candidates.shape[0], PRUNE_CHUNK):
        chunk = candidates[lo : lo + PRUNE_CHUNK]
        reach = distances[lo : lo + PRUNE_CHUNK]
        valid = chunk >= 0
        points = data[np.where(valid, chunk, 0)]
        norms = np.einsum("rcd,rcd->rc", points, points)
        between = norms[:, :, None] + norms[:, None, :] - 2.0 * np.matmul(points, points.transpose(0, 2, 1))
        keep = np.zeros(chunk.shape, dtype=bool)
        kept = np.zeros(chunk.shape[0], dtype=np.int64)
        for col in range(chunk.shape[1]):
            if (kept >= max_degree).all():
                break
            occluded = (keep & (between[:, col, :] < reach[:, col : col + 1])).any(axis=1)
            take = valid[:, col] & ~occluded & (kept < max_degree)
            keep[:, col] = take
            kept += take
        order = np.argsort(~keep, axis=1, kind="stable")[:, :max_degree]
        chosen = np.take_along_axis(np.where(keep, chunk, -1), order, axis=1)
        result[lo : lo + chunk.shape[0], : chosen.shape[1]] = chosen
    return result


def _with_batch_peers(
    data: np.ndarray, batch: np.ndarray, ids: np.ndarray, distances: np.ndarray, width: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Add the other batch members to every row's candidates and keep the best `width`."""
    points = data[batch]
    norms = np.einsum("ij,ij->i", points, points)
    peer_distances = np.maximum(norms[:, None] + norms[None, :] - 2.0 * (points @ points.T), 0.0).astype(np.float64)
    np.fill_diagonal(peer_distances, np.inf)
    peer_ids = np.tile(batch, (batch.size, 1))
    np.fill_diagonal(peer_ids, -1)
    merged_ids = np.concatenate([ids, peer_ids], axis=1)
    merged_distances = np.concatenate([distances, peer_distances], axis=1)
    order = _key_order(merged_ids, merged_distances, width)
    return np.take_along_axis(merged_ids, order, axis=1), np.take_along_axis(merged_distances, order, axis=1)


def _add_back_links(
    data: np.ndarray, adjacency: np.ndarray, degrees: np.ndarray, batch: np.ndarray, chosen: np.ndarray
) -> None:
    """Link every selected neighbor back to the batch node that chose it; lists outgrowing M are
    pruned again over their old entries plus the new ones."""
    max_degree = adjacency.shape[1]
    rows, cols = np.nonzero(chosen >= 0)
    if rows.size == 0:
        return
    targets, sources = chosen[rows, cols], batch[rows]
    order = np.lexsort((sources, targets))
    targets, sources = targets[order], sources[order]
    nodes, starts, counts = np.unique(targets, return_index=True, return_counts=True)
    incoming = np.full((nodes.size, int(counts.max())), -1, dtype=np.int64)
    incoming[np.repeat(np.arange(nodes.size), counts), np.arange(targets.size) - np.repeat(starts, counts)] = sources
    merged = _dedupe_rows(np.concatenate([adjacency[nodes], incoming], axis=1))
    merged = np.take_along_axis(merged, np.argsort(merged < 0, axis=1, kind="stable"), axis=1)
    sizes = (merged >= 0).sum(axis=1)
    fits = sizes <= max_degree
    adjacency[nodes[fits]] = merged[fits, :max_degree]
    degrees[nodes[fits]] = sizes[fits]
    crowded, lists = nodes[~fits], merged[~fits]
    for lo in range(0, crowded.size, PRUNE_CHUNK):
        owners, candidates = crowded[lo : lo + PRUNE_CHUNK], lists[lo : lo + PRUNE_CHUNK]
        valid = candidates >= 0
        diff = data[np.where(valid, candidates, 0)] - data[owners][:, None, :]
        reach = np.where(valid, np.einsum("rcd,rcd->rc", diff, diff), np.inf)
        order = _key_order(candidates, reach, candidates.shape[1])
        pruned = prune_rows(
            data, np.take_along_axis(candidates, order, axis=1), np.take_along_axis(reach, order, axis=1), max_degree
        )
        adjacency[owners] = pruned
        degrees[owners] = (pruned >= 0).sum(axis=1)


def build_graph(
    vectors: FlatVectorSet,
    M: int = DEFAULT_M,
    ef_construction: int = DEFAULT_EF_CONSTRUCTION,
    seed: int = 0,
) -> CsrGraph:
    """Build a single-layer navigable graph by inserting nodes in id order, a batch at a time.

    Batches double from one node up to BUILD_BATCH. Every node of a batch searches the graph over
    the nodes inserted before the batch (from node 0 plus seeded random earlier nodes, queue of
    ef_construction), takes the other batch members as extra candidates, links to the occlusion
    pruned candidates and adds back-links; a neighbor whose list outgrows M is pruned again with
    the same rule.

    Raises:
        ParameterException: on an empty vector set or M < 2.
    """
    if vectors.count < 1:
        raise ParameterException("Cannot build a graph over an empty vector set")
    if M < 2:
        raise ParameterException(f"M must be >= 2, got {M}")
    started = time.perf_counter()
    data = vectors.data
    width = max(ef_construction, M)
    rng = np.random.Generator(np.random.PCG64(seed))
    adjacency = np.full((vectors.count, M), -1, dtype=np.int64)
    degrees = np.zeros(vectors.count, dtype=np.int64)
    start = 1
    while start < vectors.count:
        stop = min(vectors.count, start + min(start, BUILD_BATCH))
        batch = np.arange(start, stop, dtype=np.int64)
        entries = np.concatenate([[0], _distinct_after_zero(rng, start, DEFAULT_ENTRY_COUNT - 1)])
        found = batch_greedy_search(
            lambda nodes: adjacency[nodes], data, data[batch], np.tile(entries, (batch.size, 1)), width
        )
        candidates, reach = _with_batch_peers(data, batch, found.ids, found.distances, width)
        chosen = prune_rows(data, candidates, reach, M)
        adjacency[batch] = chosen
        degrees[batch] = (chosen >= 0).sum(axis=1)
        _add_back_links(data, adjacency, degrees, batch, chosen)
        if stop // 10_000 > start // 10_000:
            logger.debug(f"Inserted {stop} of {vectors.count} nodes")
        start = stop
    graph = CsrGraph.from_padded(adjacency, degrees)
    logger.info(f"Built {graph} in {time.perf_counter() - started:.1f}s (ef_construction={ef_construction})")
    return graph


def search_batch(
    graph: Graph,
    source: DistanceSource,
    queries: np.ndarray,
    entries_per_query: Sequence[Sequence[int]],
    ef: int,
    k: int,
) -> Tuple[List[List[int]], SearchStats]:
    """Run greedy_search per query and return top-k ids plus the summed stats."""
    results: List[List[int]] = []
    total = SearchStats()
    for query, entries in zip(queries, entries_per_query):
        stats = SearchStats()
        queue = greedy_search(graph, source, query, entries, ef, stats=stats)
        results.append([node_id for node_id, _ in queue.top(k)])
        total = total + stats
    return results, total


def seeded_entries(truth_ids: np.ndarray, tau: int, ef: int, node_count: int, seed: Sequence[int]) -> List[int]:
    """Initial candidates of size ef: tau ids drawn from the first ef true neighbors plus
    ef - tau distinct random nodes."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(seed))))
    pool = truth_ids[: max(ef, tau)]
    known = rng.choice(pool, size=min(tau, pool.size), replace=False).tolist() if tau > 0 else []
    chosen = set(int(i) for i in known)
    wanted = min(ef, node_count)
    while len(chosen) < wanted:
        for node_id in rng.choice(node_count, size=wanted - len(chosen), replace=False).tolist():
            if len(chosen) < wanted:
                chosen.add(int(node_id))
    randoms = [i for i in chosen if i not in set(known)]
    return [int(i) for i in known] + sorted(randoms)


def recall_curve(
    graph: Graph,
    source: DistanceSource,
    queries: np.ndarray,
    truth: GroundTruth,
    ef_values: Sequence[int],
    tau_frac: float,
    k: int = 10,
    seed: int = 0,
) -> List[Tuple[int, float, float]]:
    """(ef, recall@k, mean distance computations per query) for seeded searches at each ef."""
    curve = []
    for ef in sorted(ef_values):
        tau = int(round(tau_frac * ef))
        entries = [
            seeded_entries(truth.ids[q], tau, ef, graph.node_count, (seed, q, ef)) for q in range(len(queries))
        ]
        results, stats = search_batch(graph, source, queries, entries, ef, k)
        recall = recall_at_k(results, truth_slice(truth, k), k)
        curve.append((ef, recall, stats.distance_computations / max(1, len(queries))))
    return curve


def truth_slice(truth: GroundTruth, k: int) -> GroundTruth:
    return GroundTruth(truth.ids[:, :k], truth.distances[:, :k])


def interpolate_at_recall(points: Sequence[Tuple[float, float]], target: float) -> float:
    """Cost at `target` recall on a (recall, cost) curve ordered by increasing ef.

    Interpolates linearly between the last point below the target and the first point at or above
    it; the first point's cost is returned when it already meets the target.

    Raises:
        UnreachableRecallException: when no point reaches the target.
    """
    previous = None
    for recall, cost in points:
        if recall >= target:
            if previous is None or previous[0] >= recall:
                return float(cost)
            low_recall, low_cost = previous
            weight = (target - low_recall) / (recall - low_recall)
            return float(low_cost + weight * (cost - low_cost))
        previous = (recall, cost)
    best = max((recall for recall, _ in points), default=0.0)
    raise UnreachableRecallException(f"Recall target {target} not reached (best {best:.4f})", best)


def computations_to_recall(
    graph: Graph,
    source: DistanceSource,
    queries: np.ndarray,
    truth: GroundTruth,
    ef_values: Sequence[int],
    tau_frac: float,
    k: int = 10,
    target_recall: float = 0.9,
    seed: int = 0,
) -> float:
    """Mean per-query distance computations needed to reach `target_recall` with seeded entries."""
    curve = recall_curve(graph, source, queries, truth, ef_values, tau_frac, k, seed)
    return interpolate_at_recall([(recall, cost) for _, recall, cost in curve], target_recall)


def measure_acceleration_threshold(
    graph: Graph,
    vectors: Union[FlatVectorSet, np.ndarray],
    queries: Union[FlatVectorSet, np.ndarray],
    truth: GroundTruth,
    ef_values: Sequence[int],
    speedup_target: float = 2.0,
    k: int = 10,
    target_recall: float = 0.9,
    grid: Sequence[float] = THRESHOLD_GRID,
    seed: int = 0,
) -> Optional[float]:
    """Smallest tau/ef on `grid` whose computations-to-recall fall to baseline / speedup_target.

    Returns None when no grid point achieves the requested savings.

    Raises:
        UnreachableRecallException: when the target recall is not reached at some grid point.
    """
    if speedup_target <= 0:
        raise ParameterException(f"speedup_target must be positive, got {speedup_target}")
    source = VectorDistance(vectors)
    query_rows = queries.data if isinstance(queries, FlatVectorSet) else np.asarray(queries)
    baseline = computations_to_recall(graph, source, query_rows, truth, ef_values, 0.0, k, target_recall, seed)
    budget = baseline / speedup_target
    logger.info(f"Baseline needs {baseline:.1f} computations for recall {target_recall}; budget {budget:.1f}")
    for frac in sorted(grid):
        cost = (
            baseline
            if frac == 0
            else computations_to_recall(graph, source, query_rows, truth, ef_values, frac, k, target_recall, seed)
        )
        logger.debug(f"tau/ef={frac:.4f}: {cost:.1f} computations")
        if cost <= budget:
            return float(frac)
    logger.warning(f"No tau/ef on the grid reaches a {speedup_target}x saving")
    return None
