"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.

This is the main module of stagedann.
It owns the loaded artifacts (full graph, SVD model, pilot subgraph, entry index) and composes
entry selection and the three search stages over batches of queries.
"""

import time
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .backends import make_backend
from .dataset_io import FlatVectorSet
from .entry_selection import DEFAULT_ITERS, DEFAULT_R, EntryIndex, select_entries, train_entry_index
from .exceptions import DimensionMismatchException, ParameterException
from .graph_index import DEFAULT_ENTRY_COUNT, CsrGraph, SearchStats, build_graph, default_entries
from .reports import FootprintReport, SearchReport
from .staged_search import (
    PilotResult,
    SearchCarry,
    StageBudgets,
    bloom_factory,
    exact_factory,
    stage1_pilot,
    stage2_refine,
    stage3_final,
)
from .subgraph import PilotSubgraph, build_pilot_subgraph, full_index_bytes, load_bundle, save_bundle
from .svd_transform import SplitVectors, SvdModel, fit_svd, primary_dim_for_ratio, transform_split

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class SearchToggles:
    """Which pipeline components a search runs.

    With every component off the search is a plain greedy search over the full graph from the
    default entries.
    """

    def __init__(
        self,
        fes: bool = True,
        stage1: bool = True,
        stage2: bool = True,
        pipelining: bool = True,
        reuse_primary: bool = True,
        stage1_visited: str = "bloom",
        bloom_prefill: float = 0.0,
        fes_e: Optional[int] = None,
    ):
        if stage1_visited not in ("bloom", "exact"):
            raise ParameterException(f"stage1_visited must be 'bloom' or 'exact', got {stage1_visited!r}")
        if not 0.0 <= bloom_prefill <= 1.0:
            raise ParameterException(f"bloom_prefill {bloom_prefill} outside [0, 1]")
        self.fes = fes
        self.stage1 = stage1
        self.stage2 = stage2
        self.pipelining = pipelining
        self.reuse_primary = reuse_primary
        self.stage1_visited = stage1_visited
        self.bloom_prefill = bloom_prefill
        self.fes_e = fes_e

    @classmethod
    def baseline(cls) -> "SearchToggles":
        return cls(fes=False, stage1=False, stage2=False, pipelining=False)

    @property
    def needs_pilot(self) -> bool:
        return self.fes or self.stage1 or self.stage2

    def without(self, *components: str) -> "SearchToggles":
        """Copy with the named components switched off."""
        values = dict(vars(self))
        for component in components:
            if component not in ("fes", "stage1", "stage2", "pipelining"):
                raise ParameterException(f"Unknown pipeline component {component!r}")
            values[component] = False
        return SearchToggles(**values)

    def __repr__(self) -> str:
        on = [name for name in ("fes", "stage1", "stage2", "pipelining") if getattr(self, name)]
        return f"<SearchToggles {'+'.join(on) or 'baseline'}>"


# Components removed one after the other, each row keeping the previous removals.
ABLATION_ORDER = ("pipelining", "fes", "stage2", "stage1")


def ablation_schemes(full: Optional[SearchToggles] = None) -> List[Tuple[str, SearchToggles]]:
    """(name, toggles) rows: the full pipeline, then each cumulative removal."""
    toggles = full or SearchToggles()
    schemes = [("full", toggles)]
    for component in ABLATION_ORDER:
        toggles = toggles.without(component)
        schemes.append((f"-{component}", toggles))
    return schemes


class _PilotBatch:
    """Output of entry selection and stage 1 for one batch."""

    def __init__(self, started: float, rotated: Optional[np.ndarray]):
        self.started = started
        self.rotated = rotated
        self.entries: List[List[int]] = []
        self.entry_distances: Optional[List[List[float]]] = None
        self.pilots: Optional[List[PilotResult]] = None
        self.fes_stats = SearchStats()
        self.stage1_stats = SearchStats()


class StagedSearchEngine:
    """Staged nearest neighbor search over a full graph and an optional pilot side."""

    def __init__(
        self,
        vectors: FlatVectorSet,
        graph: CsrGraph,
        svd: Optional[SvdModel] = None,
        subgraph: Optional[PilotSubgraph] = None,
        entry_index: Optional[EntryIndex] = None,
        threads: Optional[int] = None,
        seed: int = 0,
        vectorized_pilot: bool = True,
    ):
        """Initialize the engine over already built or loaded artifacts.

        :param vectors: the indexed base vectors.
        :param graph: full proximity graph over `vectors`.
        :param svd: rotation with its primary split point; required by the pilot stages.
        :param subgraph: pilot subgraph carrying primary vectors.
        :param entry_index: trained entry cells over the subgraph members.
        :param threads: worker count of the batch backend (STAGEDANN_THREADS / CPU count when None).
        :param seed: seed of the default entry sets.
        :param vectorized_pilot: run stage 1 of a query batch in lockstep instead of per query.
        """
        if graph.node_count != vectors.count:
            raise DimensionMismatchException(f"Graph has {graph.node_count} nodes for {vectors.count} vectors")
        self.vectors = vectors
        self.graph = graph
        self.seed = seed
        self.threads = threads
        self.backend = make_backend(threads, vectorized_pilot)
        self.default_entries = default_entries(vectors.count, DEFAULT_ENTRY_COUNT, seed)
        self.svd: Optional[SvdModel] = None
        self.split: Optional[SplitVectors] = None
        self.subgraph: Optional[PilotSubgraph] = None
        self.entry_index: Optional[EntryIndex] = None
        self._member_entries: List[int] = []
        if svd is not None and subgraph is not None:
            self.attach_pilot(svd, subgraph, entry_index)

    def __repr__(self) -> str:
        pilot = f" pilot={self.subgraph}" if self.subgraph is not None else ""
        return f"<StagedSearchEngine nodes={self.vectors.count} dim={self.vectors.dim}{pilot}>"

    def __enter__(self) -> "StagedSearchEngine":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        self.backend.close()

    @classmethod
    def build(
        cls,
        vectors: FlatVectorSet,
        M: int = 32,
        ef_construction: int = 200,
        threads: Optional[int] = None,
        seed: int = 0,
        vectorized_pilot: bool = True,
    ) -> "StagedSearchEngine":
        """Build the full graph; the pilot side is added with `build_pilot`."""
        graph = build_graph(vectors, M, ef_construction, seed)
        return cls(vectors, graph, threads=threads, seed=seed, vectorized_pilot=vectorized_pilot)

    def attach_pilot(self, svd: SvdModel, subgraph: PilotSubgraph, entry_index: Optional[EntryIndex] = None) -> None:
        """Install the pilot artifacts, rotating the base vectors for residual refinement."""
        if svd.dim != self.vectors.dim:
            raise DimensionMismatchException(f"SVD dim {svd.dim} != vector dim {self.vectors.dim}")
        if subgraph.node_count != self.vectors.count:
            raise DimensionMismatchException(
                f"Subgraph has {subgraph.node_count} nodes for {self.vectors.count} vectors"
            )
        if subgraph.primary_vectors is not None and subgraph.primary_dim != svd.primary_dim:
            raise DimensionMismatchException(
                f"Subgraph primary dim {subgraph.primary_dim} != SVD primary dim {svd.primary_dim}"
            )
        if entry_index is not None and entry_index.dim != svd.primary_dim:
            raise DimensionMismatchException(f"Entry index dim {entry_index.dim} != {svd.primary_dim}")
        self.svd = svd
        self.split = transform_split(svd, self.vectors)
        self.subgraph = subgraph
        self.entry_index = entry_index
        self._member_entries = subgraph.default_entries(DEFAULT_ENTRY_COUNT, self.seed)

    def build_pilot(
        self,
        sampling_ratio: float = 0.25,
        svd_ratio: float = 0.25,
        fes_r: int = DEFAULT_R,
        fes_iters: int = DEFAULT_ITERS,
        M: Optional[int] = None,
        ef_construction: int = 200,
        sample_cap: int = 100_000,
    ) -> None:
        """Fit the SVD, sample and reconnect the subgraph and train the entry cells."""
        fitted = fit_svd(self.vectors, sample_cap, self.seed)
        svd = SvdModel(fitted.rotation, fitted.singular_values, primary_dim_for_ratio(self.vectors.dim, svd_ratio))
        split = transform_split(svd, self.vectors)
        subgraph = build_pilot_subgraph(
            self.vectors, self.graph, split, sampling_ratio, M or self.graph.max_degree, ef_construction, self.seed
        )
        members = subgraph.members()
        r = min(fes_r, members.size)
        if r < fes_r:
            logger.warning(f"Only {members.size} members: training {r} entry cells instead of {fes_r}")
        entry_index = train_entry_index(subgraph.primary_vectors[members], r, fes_iters, self.seed, ids=members)
        self.attach_pilot(svd, subgraph, entry_index)

    def save(self, index_path: PathLike, pilot_path: Optional[PathLike] = None, svd_path: Optional[PathLike] = None):
        """Persist the full graph and, when paths are given, the pilot bundle and SVD model."""
        self.graph.save(index_path)
        if pilot_path is not None and self.subgraph is not None:
            save_bundle(pilot_path, self.subgraph, self.entry_index)
        if svd_path is not None and self.svd is not None:
            self.svd.save(svd_path)
        logger.info(f"Saved {self} to {index_path}")

    @classmethod
    def load(
        cls,
        vectors: FlatVectorSet,
        index_path: PathLike,
        pilot_path: Optional[PathLike] = None,
        svd_path: Optional[PathLike] = None,
        threads: Optional[int] = None,
        seed: int = 0,
        vectorized_pilot: bool = True,
    ) -> "StagedSearchEngine":
        """Load the artifacts written by `save` for the given base vectors."""
        graph = CsrGraph.load(index_path)
        engine = cls(vectors, graph, threads=threads, seed=seed, vectorized_pilot=vectorized_pilot)
        if pilot_path is not None and svd_path is not None:
            subgraph, entry_index = load_bundle(pilot_path)
            engine.attach_pilot(SvdModel.load(svd_path), subgraph, entry_index)
        return engine

    @property
    def has_pilot(self) -> bool:
        return self.subgraph is not None

    def footprint(self) -> FootprintReport:
        """Pilot-side bytes against the full index bytes."""
        if self.subgraph is None:
            raise ParameterException("The engine has no pilot subgraph")
        return FootprintReport(self.subgraph.memory_bytes(), full_index_bytes(self.vectors, self.graph))

    def _query_rows(self, queries: Union[FlatVectorSet, np.ndarray]) -> np.ndarray:
        rows = queries.data if isinstance(queries, FlatVectorSet) else np.asarray(queries, dtype=np.float32)
        if rows.ndim != 2 or (rows.shape[0] and rows.shape[1] != self.vectors.dim):
            raise DimensionMismatchException(f"Queries of shape {rows.shape} for vector dim {self.vectors.dim}")
        return rows

    def _pilot_phase(
        self, rows: np.ndarray, start: int, budgets: StageBudgets, toggles: SearchToggles
    ) -> _PilotBatch:
        batch = _PilotBatch(time.perf_counter(), None)
        if not toggles.needs_pilot:
            return batch
        batch.rotated = rows @ self.svd.rotation
        q_primary = np.ascontiguousarray(batch.rotated[:, : self.svd.primary_dim])
        if toggles.fes and self.entry_index is not None:
            selected = select_entries(self.entry_index, q_primary, toggles.fes_e or budgets.ef1, self.backend)
            batch.fes_stats.count(selected.computations, self.entry_index.dim)
            batch.entries = [ids.tolist() for ids in selected.ids]
            batch.entry_distances = [distances.tolist() for distances in selected.distances]
        else:
            if toggles.fes:
                logger.warning("Entry selection requested without an entry index; using default member entries")
            batch.entries = [list(self._member_entries) for _ in range(rows.shape[0])]
        if toggles.stage1:
            if toggles.stage1_visited == "exact":
                factory = exact_factory
            else:
                blooms = bloom_factory(budgets.ef1, toggles.bloom_prefill, self.seed)

                def factory(query_index: int):
                    return blooms(start + query_index)

            batch.pilots = stage1_pilot(
                self.subgraph,
                batch.entries,
                q_primary,
                budgets.ef1,
                self.backend,
                factory,
                self._member_entries,
                batch.entry_distances,
            )
            for pilot in batch.pilots:
                batch.stage1_stats = batch.stage1_stats + pilot.stats
        return batch

    def _carry(self, batch: _PilotBatch, index: int, budgets: StageBudgets, toggles, stats: SearchStats):
        if toggles.stage1:
            pilot = batch.pilots[index]
        elif batch.entries and batch.entries[index]:
            distances = batch.entry_distances[index] if batch.entry_distances is not None else None
            pilot = PilotResult(batch.entries[index], distances, SearchStats())
        else:
            pilot = PilotResult(list(self._member_entries), None, SearchStats())
        if toggles.stage2:
            return stage2_refine(
                self.subgraph,
                self.split,
                pilot,
                batch.rotated[index],
                budgets.ef2,
                budgets.refine_iters,
                toggles.reuse_primary,
                stats,
            )
        return SearchCarry(entries=pilot.ids)

    def _final_phase(
        self, rows: np.ndarray, batch: _PilotBatch, k: int, budgets: StageBudgets, toggles: SearchToggles
    ) -> Tuple[List[List[int]], List[List[float]], SearchStats, SearchStats]:
        def run(index: int):
            stage2_stats = SearchStats()
            carry = self._carry(batch, index, budgets, toggles, stage2_stats) if toggles.needs_pilot else SearchCarry()
            ids, distances, stage3_stats = stage3_final(
                self.graph, self.vectors.data, carry, rows[index], budgets.ef3, k, self.default_entries
            )
            return ids, distances, stage2_stats, stage3_stats

        results = self.backend.map(run, range(rows.shape[0]))
        stage2, stage3 = SearchStats(), SearchStats()
        for _, _, stage2_stats, stage3_stats in results:
            stage2 = stage2 + stage2_stats
            stage3 = stage3 + stage3_stats
        return [r[0] for r in results], [r[1] for r in results], stage2, stage3

    def search(
        self,
        queries: Union[FlatVectorSet, np.ndarray],
        k: int = 10,
        budgets: Optional[StageBudgets] = None,
        toggles: Optional[SearchToggles] = None,
        batch_size: int = 256,
    ) -> SearchReport:
        """Top-k search of every query: entry selection, pilot, refinement and final traversal.

        Batches run in order; with pipelining the entry selection and pilot of batch i+1 run on a
        dedicated thread while batch i is refined and finalized.

        Raises:
            ParameterException: on invalid budgets, or pilot stages requested without pilot artifacts.
            DimensionMismatchException: when the query dimension differs from the base vectors'.
        """
        toggles = toggles or SearchToggles()
        budgets = budgets or StageBudgets.from_ef3(max(64, k), k)
        budgets.validate(k)
        if batch_size < 1:
            raise ParameterException(f"batch_size must be >= 1, got {batch_size}")
        if toggles.needs_pilot and not self.has_pilot:
            raise ParameterException("Pilot stages requested but the engine has no pilot artifacts")
        rows = self._query_rows(queries)
        spans = [(start, min(start + batch_size, rows.shape[0])) for start in range(0, rows.shape[0], batch_size)]
        ids: List[List[int]] = []
        distances: List[List[float]] = []
        totals: Dict[str, SearchStats] = {"fes": SearchStats(), "stage1": SearchStats()}
        totals.update(stage2=SearchStats(), stage3=SearchStats())
        latencies: List[float] = []

        def pilot(span: Tuple[int, int]) -> _PilotBatch:
            return self._pilot_phase(rows[span[0] : span[1]], span[0], budgets, toggles)

        def finish(span: Tuple[int, int], batch: _PilotBatch) -> None:
            batch_ids, batch_distances, stage2, stage3 = self._final_phase(
                rows[span[0] : span[1]], batch, k, budgets, toggles
            )
            ids.extend(batch_ids)
            distances.extend(batch_distances)
            totals["fes"] = totals["fes"] + batch.fes_stats
            totals["stage1"] = totals["stage1"] + batch.stage1_stats
            totals["stage2"] = totals["stage2"] + stage2
            totals["stage3"] = totals["stage3"] + stage3
            latencies.append(time.perf_counter() - batch.started)
            logger.debug(f"Batch {span[0]}:{span[1]} done in {latencies[-1] * 1000:.1f}ms")

        started = time.perf_counter()
        if toggles.pipelining and toggles.needs_pilot and len(spans) > 1:
            with ThreadPoolExecutor(max_workers=1, thread_name_prefix="stagedann-pilot") as pilot_pool:
                pending = pilot_pool.submit(pilot, spans[0])
                for position, span in enumerate(spans):
                    batch = pending.result()
                    if position + 1 < len(spans):
                        pending = pilot_pool.submit(pilot, spans[position + 1])
                    finish(span, batch)
        else:
            for span in spans:
                finish(span, pilot(span))
        elapsed = time.perf_counter() - started
        return SearchReport(ids, distances, totals, elapsed, latencies)

    def baseline_search(
        self, queries: Union[FlatVectorSet, np.ndarray], k: int = 10, ef: int = 64, batch_size: int = 256
    ) -> SearchReport:
        """Plain greedy search over the full graph from the default entries."""
        return self.search(queries, k, StageBudgets(ef, ef, ef), SearchToggles.baseline(), batch_size)

    def entry_candidates(self, queries: Union[FlatVectorSet, np.ndarray], e: int) -> Tuple[List[List[int]], int]:
        """Top-e entry ids per query from the entry cells, plus the distance evaluations spent."""
        if self.entry_index is None:
            raise ParameterException("The engine has no entry index")
        selected = select_entries(self.entry_index, self.primary_queries(queries), e, self.backend)
        return [ids.tolist() for ids in selected.ids], selected.computations

    def primary_queries(self, queries: Union[FlatVectorSet, np.ndarray]) -> np.ndarray:
        """Queries rotated and truncated to the primary components."""
        if self.svd is None:
            raise ParameterException("The engine has no SVD model")
        rows = self._query_rows(queries)
        return np.ascontiguousarray((rows @ self.svd.rotation)[:, : self.svd.primary_dim])

    def member_entries(self) -> Sequence[int]:
        return list(self._member_entries)
