"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.
"""

import tempfile
import unittest
from pathlib import Path

import numpy as np

from stagedann import SearchToggles, StageBudgets, StagedSearchEngine
from stagedann.dataset_io import brute_force_topk, recall_at_k, synthetic_base_and_queries
from stagedann.engine import ABLATION_ORDER, ablation_schemes
from stagedann.exceptions import DimensionMismatchException, ParameterException
from stagedann.graph_index import SearchStats, VectorDistance, greedy_search


class TestStagedSearchEngine(unittest.TestCase):
    """Test cases for the staged search engine."""

    @classmethod
    def setUpClass(cls):
        cls.base, cls.queries = synthetic_base_and_queries(600, 40, 16, 4, seed=2)
        cls.truth = brute_force_topk(cls.base, cls.queries, 10)
        cls.engine = StagedSearchEngine.build(cls.base, M=12, ef_construction=64, threads=1)
        cls.engine.build_pilot(sampling_ratio=0.5, svd_ratio=0.5, fes_r=4, fes_iters=10, ef_construction=64)
        cls.budgets = StageBudgets.from_ef3(64, 10)

    @classmethod
    def tearDownClass(cls):
        cls.engine.close()

    def test_baseline_is_greedy_search(self):
        """With every component off the engine is a plain greedy search from the default entries."""
        report = self.engine.search(self.queries, 10, StageBudgets(32, 32, 32), SearchToggles.baseline(), batch_size=9)
        expected = SearchStats()
        source = VectorDistance(self.base)
        for q in range(self.queries.count):
            queue = greedy_search(self.engine.graph, source, self.queries.data[q], self.engine.default_entries, 32)
            assert report.ids[q] == [i for i, _ in queue.top(10)]
            assert np.allclose(report.distances[q], [d for _, d in queue.top(10)], rtol=1e-6)
            greedy_search(
                self.engine.graph, source, self.queries.data[q], self.engine.default_entries, 32, stats=expected
            )
        assert report.stage_stats["stage3"] == expected
        for stage in ("fes", "stage1", "stage2"):
            assert report.stage_stats[stage].distance_computations == 0

    def test_baseline_search_helper(self):
        plain = self.engine.baseline_search(self.queries, 10, 32)
        toggled = self.engine.search(self.queries, 10, StageBudgets(32, 32, 32), SearchToggles.baseline())
        assert plain.ids == toggled.ids

    def test_pipeline_recall(self):
        report = self.engine.search(self.queries, 10, self.budgets)
        assert report.query_count == 40
        assert all(len(ids) == 10 for ids in report.ids)
        assert recall_at_k(report.ids, self.truth, 10) >= 0.85
        assert report.stage_stats["fes"].distance_computations > 0
        assert report.stage_stats["stage1"].distance_computations > 0

    def test_pipelining_is_transparent(self):
        """Overlapping batches changes neither results nor counters."""
        on = self.engine.search(self.queries, 10, self.budgets, SearchToggles(), batch_size=7)
        off = self.engine.search(self.queries, 10, self.budgets, SearchToggles(pipelining=False), batch_size=7)
        assert on.ids == off.ids
        for stage in on.stage_stats:
            assert on.stage_stats[stage] == off.stage_stats[stage]
        assert len(on.batch_latencies) == 6

    def test_prefill_independent_of_batching(self):
        """Prefilled filters are keyed by the query, not by its batch."""
        toggles = SearchToggles(bloom_prefill=0.2)
        small = self.engine.search(self.queries, 10, self.budgets, toggles, batch_size=7)
        large = self.engine.search(self.queries, 10, self.budgets, toggles, batch_size=40)
        assert small.ids == large.ids
        assert small.stage_stats["stage1"] == large.stage_stats["stage1"]

    def test_total_is_sum(self):
        report = self.engine.search(self.queries, 10, self.budgets)
        total = sum(stats.distance_computations for stats in report.stage_stats.values())
        assert report.total().distance_computations == total

    def test_stage1_off(self):
        report = self.engine.search(self.queries, 10, self.budgets, SearchToggles(stage1=False))
        assert report.stage_stats["stage1"].distance_computations == 0
        assert report.stage_stats["stage2"].distance_computations > 0
        assert recall_at_k(report.ids, self.truth, 10) >= 0.8

    def test_stage2_off(self):
        report = self.engine.search(self.queries, 10, self.budgets, SearchToggles(stage2=False))
        assert report.stage_stats["stage2"].distance_computations == 0
        assert recall_at_k(report.ids, self.truth, 10) >= 0.8

    def test_exact_visited(self):
        report = self.engine.search(self.queries, 10, self.budgets, SearchToggles(stage1_visited="exact"))
        assert recall_at_k(report.ids, self.truth, 10) >= 0.85

    def test_threads_agree(self):
        with StagedSearchEngine(
            self.base,
            self.engine.graph,
            self.engine.svd,
            self.engine.subgraph,
            self.engine.entry_index,
            threads=2,
        ) as threaded:
            a = threaded.search(self.queries, 10, self.budgets, batch_size=16)
        b = self.engine.search(self.queries, 10, self.budgets, batch_size=16)
        assert a.ids == b.ids
        assert a.total() == b.total()

    def test_lockstep_pilot_agrees(self):
        """Per-query and lockstep pilot traversals give the same answers and counters."""
        assert self.engine.backend.vectorized
        with StagedSearchEngine(
            self.base,
            self.engine.graph,
            self.engine.svd,
            self.engine.subgraph,
            self.engine.entry_index,
            threads=1,
            vectorized_pilot=False,
        ) as per_query:
            toggles = SearchToggles(bloom_prefill=0.2)
            a = per_query.search(self.queries, 10, self.budgets, toggles, batch_size=16)
        b = self.engine.search(self.queries, 10, self.budgets, toggles, batch_size=16)
        assert a.ids == b.ids
        for stage in a.stage_stats:
            assert a.stage_stats[stage] == b.stage_stats[stage]

    def test_needs_pilot(self):
        with StagedSearchEngine(self.base, self.engine.graph, threads=1) as bare:
            assert not bare.has_pilot
            with self.assertRaises(ParameterException):
                bare.search(self.queries, 10, self.budgets)
            with self.assertRaises(ParameterException):
                bare.footprint()
            bare.search(self.queries, 10, self.budgets, SearchToggles.baseline())

    def test_errors(self):
        with self.assertRaises(DimensionMismatchException):
            self.engine.search(self.queries.data[:, :8], 10, self.budgets)
        with self.assertRaises(ParameterException):
            self.engine.search(self.queries, 10, StageBudgets(64, 5, 64))
        with self.assertRaises(ParameterException):
            self.engine.search(self.queries, 10, self.budgets, batch_size=0)

    def test_save_and_load(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = [Path(tmp) / name for name in ("full.graph", "pilot.bundle", "svd.model")]
            self.engine.save(*paths)
            with StagedSearchEngine.load(self.base, *paths, threads=1) as loaded:
                again = loaded.search(self.queries, 10, self.budgets)
        report = self.engine.search(self.queries, 10, self.budgets)
        assert again.ids == report.ids
        assert again.total() == report.total()

    def test_footprint(self):
        footprint = self.engine.footprint()
        assert 0 < footprint.fraction < 1

    def test_entry_candidates(self):
        ids, computations = self.engine.entry_candidates(self.queries, 5)
        assert len(ids) == 40
        assert all(len(row) <= 5 for row in ids)
        assert computations > 0
        members = self.engine.subgraph.member_flags
        assert all(members[i] for row in ids for i in row)
        assert self.engine.primary_queries(self.queries).shape == (40, 8)


class TestSearchToggles(unittest.TestCase):
    """Test cases for SearchToggles and the ablation schemes."""

    def test_baseline(self):
        toggles = SearchToggles.baseline()
        assert not toggles.needs_pilot
        assert repr(toggles) == "<SearchToggles baseline>"

    def test_without(self):
        toggles = SearchToggles().without("fes", "stage2")
        assert not toggles.fes and not toggles.stage2
        assert toggles.stage1 and toggles.pipelining
        with self.assertRaises(ParameterException):
            SearchToggles().without("stage4")

    def test_validation(self):
        with self.assertRaises(ParameterException):
            SearchToggles(stage1_visited="hash")
        with self.assertRaises(ParameterException):
            SearchToggles(bloom_prefill=1.5)

    def test_ablation_schemes(self):
        schemes = ablation_schemes()
        assert [name for name, _ in schemes] == ["full"] + [f"-{c}" for c in ABLATION_ORDER]
        last = schemes[-1][1]
        assert not last.needs_pilot and not last.pipelining
        removed = schemes[2][1]
        assert not removed.pipelining and not removed.fes and removed.stage1 and removed.stage2


if __name__ == "__main__":
    unittest.main()
