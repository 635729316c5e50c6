"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.

The three search stages.

1. Pilot traversal: greedy search over the subgraph with primary distances and a bloom-filter
   visited table, one data-parallel job per query batch.
2. Residual refinement: complete the pilot candidates to full distances (primary + residual),
   expand the best candidates a fixed number of times on the subgraph, and hand over the ranked
   candidates with the exact set of ids whose full distance was computed.
3. Final traversal: greedy search over the full graph, seeded with the handed-over candidates and
   with the handed-over ids pre-marked as visited.

Stage 1 hands over candidate ids only, never its bloom bits: a bloom false positive in stage 1
is therefore evaluated again in the later stages.
"""

import logging
from typing import Callable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .bloom import BloomBatch, BloomVisited, prepare_hashes
from .backends import Backend, SerialBackend
from .graph_index import (
    CsrGraph,
    ExactVisited,
    SearchStats,
    VectorDistance,
    Visited,
    batch_greedy_search,
    greedy_search,
)
from .subgraph import PilotSubgraph
from .svd_transform import SplitVectors
from .exceptions import InvalidEntryException, ParameterException

logger = logging.getLogger(__name__)

DEFAULT_REFINE_ITERS = 2


class SplitDistance:
    """Full squared distances in the rotated space as primary + residual parts.

    Queries are full rotated vectors; the split point is the primary width of `split`.
    """

    def __init__(self, split: SplitVectors):
        self.split = split
        self.dim = split.primary_dim + split.residual_dim

    def primary(self, query: np.ndarray, ids: np.ndarray) -> np.ndarray:
        diff = self.split.primary[ids] - query[: self.split.primary_dim]
        return np.einsum("ij,ij->i", diff, diff)

    def residual(self, query: np.ndarray, ids: np.ndarray) -> np.ndarray:
        if self.split.residual_dim == 0:
            return np.zeros(len(ids), dtype=np.float32)
        diff = self.split.residual[ids] - query[self.split.primary_dim :]
        return np.einsum("ij,ij->i", diff, diff)

    def distances(self, query: np.ndarray, ids: np.ndarray) -> np.ndarray:
        return self.primary(query, ids) + self.residual(query, ids)


class StageBudgets:
    """Queue sizes of the three stages and the number of refinement expansions."""

    def __init__(self, ef1: int, ef2: int, ef3: int, refine_iters: int = DEFAULT_REFINE_ITERS):
        self.ef1 = int(ef1)
        self.ef2 = int(ef2)
        self.ef3 = int(ef3)
        self.refine_iters = int(refine_iters)

    @classmethod
    def from_ef3(cls, ef3: int, k: int, refine_iters: int = DEFAULT_REFINE_ITERS) -> "StageBudgets":
        """ef1 = ef3 and ef2 = ef3 / 2, each bounded below by k."""
        return cls(max(k, ef3), max(k, ef3 // 2), max(k, ef3), refine_iters)

    def validate(self, k: int) -> None:
        if min(self.ef1, self.ef2, self.ef3) < k:
            raise ParameterException(f"Every ef must be >= k={k}: {self}")
        if self.refine_iters < 0:
            raise ParameterException(f"refine_iters must be >= 0, got {self.refine_iters}")

    def __repr__(self) -> str:
        return f"<StageBudgets ef1={self.ef1} ef2={self.ef2} ef3={self.ef3} refine_iters={self.refine_iters}>"


class PilotResult:
    """Stage-1 output of one query: ids and primary distances, best first."""

    def __init__(self, ids: List[int], distances: Optional[List[float]], stats: SearchStats):
        self.ids = ids
        self.distances = distances
        self.stats = stats

    def __len__(self) -> int:
        return len(self.ids)


class SearchCarry:
    """Stage-to-stage handoff.

    Attributes:
        candidates: ranked (id, full distance) pairs.
        visited: ids whose full distance was computed in stage 2.
        entries: ids handed to stage 3 without a known full distance (refinement disabled).
    """

    def __init__(
        self,
        candidates: Sequence[Tuple[int, float]] = (),
        visited: Optional[Set[int]] = None,
        entries: Sequence[int] = (),
    ):
        self.candidates = list(candidates)
        self.visited = set(visited or ())
        self.entries = list(entries)

    def is_empty(self) -> bool:
        return not self.candidates and not self.entries

    def __repr__(self) -> str:
        return (
            f"<SearchCarry candidates={len(self.candidates)} visited={len(self.visited)} entries={len(self.entries)}>"
        )


VisitedFactory = Callable[[int], Visited]


def bloom_factory(ef1: int, prefill: float = 0.0, seed: int = 0) -> VisitedFactory:
    """Per-query bloom visited tables; `prefill` sets that fraction of the filter's bits at random
    first, which injects false positives for robustness experiments. A prefill of 1.0 saturates
    the filter.
    """

    def factory(query_index: int) -> Visited:
        bloom = BloomVisited.for_ef(ef1)
        if prefill > 0.0:
            bloom.fill(prefill, np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, query_index]))))
        return bloom

    return factory


def exact_factory(query_index: int) -> Visited:
    return ExactVisited()


def stage1_pilot(
    subgraph: PilotSubgraph,
    entries: Sequence[Sequence[int]],
    q_primary: np.ndarray,
    ef1: int,
    backend: Optional[Backend] = None,
    visited_factory: Optional[VisitedFactory] = None,
    default_entries: Optional[Sequence[int]] = None,
    entry_distances: Optional[Sequence[Sequence[float]]] = None,
) -> List[PilotResult]:
    """Pilot greedy search of every query over the subgraph with primary distances.

    The batch runs as one job on `backend`: per query on its workers, or, on a vectorized backend
    with bloom visited tables, as one lockstep array traversal with identical results. When
    `entry_distances` is given (entry selection already evaluated them) the entries seed the queue
    without being evaluated again. A query with no entry (an empty entry cell) falls back to the
    subgraph's default member entries.
    """
    if subgraph.primary_vectors is None:
        raise ParameterException("The pilot subgraph carries no primary vectors")
    backend = backend or SerialBackend()
    visited_factory = visited_factory or bloom_factory(ef1)
    fallback = list(default_entries) if default_entries is not None else subgraph.default_entries()
    starts = [[int(i) for i in row] if len(row) else fallback for row in entries]
    seeded = [entry_distances is not None and len(row) > 0 for row in entries]

    if getattr(backend, "vectorized", False) and len(entries):
        tables = [visited_factory(q) for q in range(len(entries))]
        if all(isinstance(table, BloomVisited) for table in tables):
            return _pilot_lockstep(subgraph, starts, seeded, entry_distances, q_primary, ef1, tables)
        logger.debug("Exact pilot visited tables: running the pilot per query")

    source = VectorDistance(subgraph.primary_vectors)

    def run(query_index: int) -> PilotResult:
        seeds: List[Tuple[int, float]] = []
        first = starts[query_index]
        if seeded[query_index]:
            seeds = list(zip(first, [float(d) for d in entry_distances[query_index]]))
            first = []
        stats = SearchStats()
        queue = greedy_search(
            subgraph.graph,
            source,
            q_primary[query_index],
            first,
            ef1,
            visited=visited_factory(query_index),
            stats=stats,
            seeds=seeds,
        )
        return PilotResult(queue.ids(), queue.distances(), stats)

    return backend.map(run, range(len(entries)))


def _pilot_lockstep(
    subgraph: PilotSubgraph,
    starts: List[List[int]],
    seeded: List[bool],
    entry_distances: Optional[Sequence[Sequence[float]]],
    q_primary: np.ndarray,
    ef1: int,
    tables: List[BloomVisited],
) -> List[PilotResult]:
    """Pilot traversal of the whole batch with `batch_greedy_search`; seeded and evaluated entry
    rows run as two groups."""
    prepare_hashes(subgraph.node_count)
    vectors = subgraph.primary_vectors
    results: List[Optional[PilotResult]] = [None] * len(starts)
    for with_distances in (True, False):
        group = [q for q, flag in enumerate(seeded) if flag == with_distances]
        if not group:
            continue
        for q in group:
            if min(starts[q]) < 0 or max(starts[q]) >= subgraph.node_count:
                raise InvalidEntryException(f"Pilot entry outside [0, {subgraph.node_count})")
        width = max(len(starts[q]) for q in group)
        ids = np.full((len(group), width), -1, dtype=np.int64)
        distances = np.full((len(group), width), np.inf) if with_distances else None
        for row, q in enumerate(group):
            ids[row, : len(starts[q])] = starts[q]
            if with_distances:
                distances[row, : len(starts[q])] = [float(d) for d in entry_distances[q]]
        found = batch_greedy_search(
            subgraph.graph.padded_neighbors,
            vectors,
            q_primary[group],
            ids,
            ef1,
            entry_distances=distances,
            visited=BloomBatch.from_filters(tables[q] for q in group),
        )
        for row, q in enumerate(group):
            found_ids, found_distances = found.row(row)
            results[q] = PilotResult(found_ids, found_distances, found.stats(row, vectors.shape[1]))
    return results


def stage2_refine(
    subgraph: PilotSubgraph,
    split: SplitVectors,
    stage1_out: PilotResult,
    q_rotated: np.ndarray,
    ef2: int,
    refine_iters: int = DEFAULT_REFINE_ITERS,
    reuse_primary: bool = True,
    stats: Optional[SearchStats] = None,
) -> SearchCarry:
    """Re-rank pilot candidates by full distance, expand the best `refine_iters` times on the
    subgraph and emit the top-ef2 candidates with the set of ids evaluated here.

    Completing a pilot candidate counts one computation weighted by the residual width, or by the
    full width when primary distances are recomputed.
    """
    stats = stats if stats is not None else SearchStats()
    source = SplitDistance(split)
    if not stage1_out.ids:
        return SearchCarry()
    ids = np.asarray(stage1_out.ids, dtype=np.int64)
    if reuse_primary and stage1_out.distances is not None:
        primary = np.asarray(stage1_out.distances, dtype=np.float32)
        stats.count(int(ids.size), split.residual_dim)
    else:
        primary = source.primary(q_rotated, ids)
        stats.count(int(ids.size), source.dim)
    full = primary + source.residual(q_rotated, ids)
    reranked = list(zip(ids.tolist(), full.tolist()))
    visited = ExactVisited(ids.tolist())
    queue = greedy_search(
        subgraph.graph,
        source,
        q_rotated,
        [],
        ef2,
        visited=visited,
        stats=stats,
        seeds=reranked,
        max_expansions=refine_iters,
    )
    return SearchCarry(queue.top(ef2), visited.ids)


def stage3_final(
    full_graph: CsrGraph,
    full_vectors: np.ndarray,
    carry: SearchCarry,
    q: np.ndarray,
    ef3: int,
    k: int,
    default_entries: Sequence[int],
    stats: Optional[SearchStats] = None,
) -> Tuple[List[int], List[float], SearchStats]:
    """Greedy search over the full graph seeded from the carry; plain greedy search from
    `default_entries` when the carry is empty.

    Carried candidates hold distances in the rotated space, equal to original-space distances up
    to rounding. The k reported distances are recomputed over `full_vectors`, uncounted, and the
    result is ordered by them.
    """
    if ef3 < k:
        raise ParameterException(f"ef3={ef3} must be >= k={k}")
    stats = stats if stats is not None else SearchStats()
    source = VectorDistance(full_vectors)
    if carry.is_empty():
        queue = greedy_search(full_graph, source, q, default_entries, ef3, stats=stats)
    else:
        queue = greedy_search(
            full_graph,
            source,
            q,
            carry.entries,
            ef3,
            visited=ExactVisited(carry.visited),
            stats=stats,
            seeds=carry.candidates,
        )
    top = [node_id for node_id, _ in queue.top(k)]
    exact = source.distances(q, np.asarray(top, dtype=np.int64)).tolist() if top else []
    ranked = sorted(zip(exact, top))
    return [node_id for _, node_id in ranked], [distance for distance, _ in ranked], stats
