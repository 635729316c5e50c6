"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.

Tests of the three search stages run one at a time.
"""

import unittest

import numpy as np

from stagedann.backends import SerialBackend, ThreadPoolBackend
from stagedann.dataset_io import brute_force_topk, synthetic_base_and_queries
from stagedann.exceptions import InvalidEntryException, ParameterException
from stagedann.graph_index import ExactVisited, SearchStats, VectorDistance, build_graph, default_entries, greedy_search
from stagedann.staged_search import (
    PilotResult,
    SearchCarry,
    SplitDistance,
    StageBudgets,
    bloom_factory,
    exact_factory,
    stage1_pilot,
    stage2_refine,
    stage3_final,
)
from stagedann.subgraph import build_pilot_subgraph
from stagedann.svd_transform import SvdModel, fit_svd, transform_split


class StageFixture(unittest.TestCase):
    """One full graph, one half-size pilot subgraph and rotated queries."""

    @classmethod
    def setUpClass(cls):
        cls.base, cls.queries = synthetic_base_and_queries(500, 20, 16, 1, seed=21)
        cls.full = build_graph(cls.base, M=12, ef_construction=64, seed=0)
        fitted = fit_svd(cls.base)
        cls.svd = SvdModel(fitted.rotation, fitted.singular_values, 8)
        cls.split = transform_split(cls.svd, cls.base)
        cls.pilot = build_pilot_subgraph(cls.base, cls.full, cls.split, 0.5, M=12, ef_construction=64, seed=0)
        cls.q_rotated = cls.queries.data @ cls.svd.rotation
        cls.q_primary = np.ascontiguousarray(cls.q_rotated[:, :8])
        cls.member_entries = cls.pilot.default_entries(16, seed=0)
        cls.full_entries = default_entries(cls.base.count, 16, seed=0)
        cls.truth = brute_force_topk(cls.base, cls.queries, 10)

    def pilot_results(self, ef1=32, factory=exact_factory):
        entries = [self.member_entries] * self.queries.count
        return stage1_pilot(self.pilot, entries, self.q_primary, ef1, visited_factory=factory)


class TestStageBudgets(unittest.TestCase):
    """Test cases for StageBudgets."""

    def test_from_ef3(self):
        budgets = StageBudgets.from_ef3(64, 10)
        assert (budgets.ef1, budgets.ef2, budgets.ef3, budgets.refine_iters) == (64, 32, 64, 2)
        small = StageBudgets.from_ef3(12, 10)
        assert (small.ef1, small.ef2, small.ef3) == (12, 10, 12)

    def test_validate(self):
        with self.assertRaises(ParameterException):
            StageBudgets(64, 5, 64).validate(10)
        with self.assertRaises(ParameterException):
            StageBudgets(64, 32, 64, refine_iters=-1).validate(10)
        StageBudgets(10, 10, 10, 0).validate(10)


class TestVisitedFactories(unittest.TestCase):
    """Test cases for the per-query visited tables."""

    def test_prefill_is_reproducible(self):
        """Prefill sets a fixed share of the bits, chosen per query index."""
        factory = bloom_factory(16, prefill=0.5, seed=3)
        a, b = factory(7), factory(7)
        assert a.bit_array.count() == 512
        assert a.inserted == 0
        assert a.bit_array == b.bit_array
        assert a.bit_array != factory(8).bit_array

    def test_prefill_false_positive_rate(self):
        """Half the bits set makes about 0.5**4 of unseen ids test positive."""
        bloom = bloom_factory(64, prefill=0.5, seed=1)(0)
        rate = bloom.contains_many(np.arange(200_000)).mean()
        assert 0.04 <= rate <= 0.085

    def test_saturated(self):
        bloom = bloom_factory(16, prefill=1.0)(0)
        assert bloom.contains_many(np.arange(50)).all()

    def test_exact(self):
        assert isinstance(exact_factory(0), ExactVisited)


class TestStage1(StageFixture):
    """Test cases for the pilot traversal."""

    def test_equals_greedy_search(self):
        """With an exact visited table the pilot is a plain greedy search on the subgraph."""
        results = self.pilot_results()
        source = VectorDistance(self.pilot.primary_vectors)
        for q, result in enumerate(results):
            queue = greedy_search(self.pilot.graph, source, self.q_primary[q], self.member_entries, 32)
            assert result.ids == queue.ids()
            assert result.distances == queue.distances()

    def test_only_members(self):
        for result in self.pilot_results(factory=bloom_factory(32)):
            assert self.pilot.member_flags[result.ids].all()
            assert result.stats.distance_computations >= len(self.member_entries)

    def test_saturated_filter_keeps_entries(self):
        """A filter that reports everything as visited leaves only the evaluated entries."""
        results = self.pilot_results(factory=bloom_factory(32, prefill=1.0))
        for result in results:
            assert sorted(result.ids) == sorted(self.member_entries)
            assert result.stats.distance_computations == len(self.member_entries)

    def test_empty_row_falls_back(self):
        """A query without entries starts from the default member entries."""
        fallback = stage1_pilot(
            self.pilot, [[]], self.q_primary[:1], 32, visited_factory=exact_factory, default_entries=self.member_entries
        )
        direct = stage1_pilot(self.pilot, [self.member_entries], self.q_primary[:1], 32, visited_factory=exact_factory)
        assert fallback[0].ids == direct[0].ids

    def test_member_query_ranks_first(self):
        """A query equal to a member's primary vector returns that member first."""
        member = int(self.pilot.members()[5])
        query = self.pilot.primary_vectors[member][None, :]
        results = stage1_pilot(
            self.pilot, [[member]], query, 16, visited_factory=exact_factory, entry_distances=[[0.0]]
        )
        assert results[0].ids[0] == member
        assert results[0].distances[0] == 0.0

    def test_seeded_entries_are_not_counted(self):
        """Entries with known distances seed the queue without being evaluated."""
        entries = [self.member_entries]
        distances = [VectorDistance(self.pilot.primary_vectors).distances(self.q_primary[0], np.asarray(entries[0]))]
        seeded = stage1_pilot(
            self.pilot, entries, self.q_primary[:1], 32, visited_factory=exact_factory, entry_distances=distances
        )
        plain = stage1_pilot(self.pilot, entries, self.q_primary[:1], 32, visited_factory=exact_factory)
        assert seeded[0].ids == plain[0].ids
        assert (
            seeded[0].stats.distance_computations
            == plain[0].stats.distance_computations - len(self.member_entries)
        )

    def test_threaded_backend(self):
        entries = [self.member_entries] * self.queries.count
        serial = stage1_pilot(self.pilot, entries, self.q_primary, 32, visited_factory=exact_factory)
        with ThreadPoolBackend(4) as backend:
            threaded = stage1_pilot(self.pilot, entries, self.q_primary, 32, backend, exact_factory)
        assert [r.ids for r in serial] == [r.ids for r in threaded]

    def test_lockstep_equals_per_query(self):
        """A vectorized backend runs the batch in lockstep and returns what the per-query path does."""
        entries = [self.member_entries] * self.queries.count
        distances = [
            VectorDistance(self.pilot.primary_vectors).distances(self.q_primary[q], np.asarray(self.member_entries))
            for q in range(self.queries.count)
        ]
        for factory in (bloom_factory(32), bloom_factory(32, prefill=0.3, seed=5)):
            for given in (None, distances):
                serial = stage1_pilot(self.pilot, entries, self.q_primary, 32, SerialBackend(), factory, None, given)
                lockstep = stage1_pilot(
                    self.pilot, entries, self.q_primary, 32, SerialBackend(vectorized=True), factory, None, given
                )
                for a, b in zip(serial, lockstep):
                    assert a.ids == b.ids
                    assert np.allclose(a.distances, b.distances, rtol=1e-6)
                    assert a.stats == b.stats

    def test_lockstep_mixed_rows(self):
        """Rows with and without entries share one lockstep batch."""
        entries = [self.member_entries, [], self.member_entries[:4]]
        serial = stage1_pilot(
            self.pilot, entries, self.q_primary[:3], 24, SerialBackend(), bloom_factory(24), self.member_entries
        )
        lockstep = stage1_pilot(
            self.pilot,
            entries,
            self.q_primary[:3],
            24,
            SerialBackend(vectorized=True),
            bloom_factory(24),
            self.member_entries,
        )
        assert [r.ids for r in serial] == [r.ids for r in lockstep]
        assert [r.stats for r in serial] == [r.stats for r in lockstep]

    def test_lockstep_rejects_bad_entry(self):
        with self.assertRaises(InvalidEntryException):
            stage1_pilot(
                self.pilot, [[self.pilot.node_count]], self.q_primary[:1], 16, SerialBackend(vectorized=True)
            )

    def test_exact_tables_skip_lockstep(self):
        entries = [self.member_entries] * 4
        plain = stage1_pilot(self.pilot, entries, self.q_primary[:4], 32, visited_factory=exact_factory)
        backend = SerialBackend(vectorized=True)
        vectorized = stage1_pilot(self.pilot, entries, self.q_primary[:4], 32, backend, exact_factory)
        assert [r.ids for r in plain] == [r.ids for r in vectorized]

    def test_needs_primary(self):
        from stagedann.subgraph import PilotSubgraph

        bare = PilotSubgraph(self.pilot.graph, self.pilot.member_flags, 0.5)
        with self.assertRaises(ParameterException):
            stage1_pilot(bare, [self.member_entries], self.q_primary[:1], 16)


class TestStage2(StageFixture):
    """Test cases for residual refinement."""

    def test_split_distance(self):
        """Primary plus residual equals the full distance in the original space."""
        ids = np.arange(50)
        split = SplitDistance(self.split).distances(self.q_rotated[0], ids)
        direct = VectorDistance(self.base).distances(self.queries.data[0], ids)
        assert np.allclose(split, direct, rtol=1e-3, atol=1e-3)

    def test_refined_distances_are_full(self):
        for q, result in enumerate(self.pilot_results()):
            carry = stage2_refine(self.pilot, self.split, result, self.q_rotated[q], 16)
            ids = np.asarray([i for i, _ in carry.candidates])
            refined = np.asarray([d for _, d in carry.candidates])
            direct = VectorDistance(self.base).distances(self.queries.data[q], ids)
            assert len(carry.candidates) == 16
            assert np.allclose(refined, direct, rtol=1e-3, atol=1e-3)
            assert (np.diff(refined) >= 0).all()

    def test_no_expansion_is_rerank(self):
        """With zero refinement expansions the output is the pilot list re-ranked by full distance."""
        result = self.pilot_results()[0]
        stats = SearchStats()
        carry = stage2_refine(self.pilot, self.split, result, self.q_rotated[0], 16, refine_iters=0, stats=stats)
        residual = SplitDistance(self.split).residual(self.q_rotated[0], np.asarray(result.ids))
        full = np.asarray(result.distances, dtype=np.float32) + residual
        order = np.lexsort((np.asarray(result.ids), full))[:16]
        assert [i for i, _ in carry.candidates] == np.asarray(result.ids)[order].tolist()
        assert carry.visited == set(result.ids)
        assert stats.distance_computations == len(result.ids)
        assert stats.weighted_computations == len(result.ids) * 8

    def test_visited_matches_counter(self):
        """Every id evaluated in refinement is in the carried visited set, and nothing else."""
        for q, result in enumerate(self.pilot_results()):
            stats = SearchStats()
            carry = stage2_refine(self.pilot, self.split, result, self.q_rotated[q], 16, refine_iters=2, stats=stats)
            assert len(carry.visited) == stats.distance_computations
            assert stats.hops <= 2

    def test_recompute_primary(self):
        """Without reuse the completion is charged at full width."""
        result = self.pilot_results()[0]
        stats = SearchStats()
        stage2_refine(self.pilot, self.split, result, self.q_rotated[0], 16, 0, reuse_primary=False, stats=stats)
        assert stats.weighted_computations == len(result.ids) * 16

    def test_empty_pilot(self):
        carry = stage2_refine(self.pilot, self.split, PilotResult([], [], SearchStats()), self.q_rotated[0], 16)
        assert carry.is_empty()


class TestStage3(StageFixture):
    """Test cases for the final traversal."""

    def test_empty_carry_is_baseline(self):
        for q in range(self.queries.count):
            ids, distances, stats = stage3_final(
                self.full, self.base.data, SearchCarry(), self.queries.data[q], 32, 10, self.full_entries
            )
            expected_stats = SearchStats()
            queue = greedy_search(
                self.full, VectorDistance(self.base), self.queries.data[q], self.full_entries, 32, stats=expected_stats
            )
            assert ids == [i for i, _ in queue.top(10)]
            assert stats == expected_stats

    def test_true_candidates_give_exact_answer(self):
        """Seeding with the exact neighbors returns them unchanged."""
        source = VectorDistance(self.base)
        for q in range(self.queries.count):
            truth = self.truth.ids[q]
            seeds = list(zip(truth.tolist(), source.distances(self.queries.data[q], truth).tolist()))
            carry = SearchCarry(seeds, set(truth.tolist()))
            ids, _, _ = stage3_final(self.full, self.base.data, carry, self.queries.data[q], 10, 10, self.full_entries)
            assert sorted(ids) == sorted(truth.tolist())

    def test_entries_only_carry(self):
        """A carry with entries but no candidates evaluates the entries."""
        carry = SearchCarry(entries=self.member_entries)
        stats = SearchStats()
        ids, _, _ = stage3_final(self.full, self.base.data, carry, self.queries.data[0], 32, 10, [], stats)
        assert len(ids) == 10
        assert stats.distance_computations >= len(self.member_entries)

    def test_full_pipeline_recall(self):
        """The three stages chained reach the exact neighbors for most queries."""
        hits = 0
        for q, result in enumerate(self.pilot_results()):
            carry = stage2_refine(self.pilot, self.split, result, self.q_rotated[q], 32)
            ids, _, _ = stage3_final(self.full, self.base.data, carry, self.queries.data[q], 64, 10, self.full_entries)
            hits += len(set(ids) & set(self.truth.ids[q].tolist()))
        assert hits / (10 * self.queries.count) >= 0.85

    def test_reported_distances_are_original_space(self):
        """Distances returned after a rotated-space carry match the original vectors, in order."""
        source = VectorDistance(self.base)
        for q, result in enumerate(self.pilot_results()):
            carry = stage2_refine(self.pilot, self.split, result, self.q_rotated[q], 16)
            ids, distances, _ = stage3_final(
                self.full, self.base.data, carry, self.queries.data[q], 32, 10, self.full_entries
            )
            direct = source.distances(self.queries.data[q], np.asarray(ids))
            assert np.allclose(distances, direct, rtol=1e-6)
            assert distances == sorted(distances)

    def test_carried_distances_match_original_space(self):
        """Carried candidate distances agree with direct distances up to rounding."""
        source = VectorDistance(self.base)
        for q, result in enumerate(self.pilot_results()):
            carry = stage2_refine(self.pilot, self.split, result, self.q_rotated[q], 16)
            ids = np.asarray([i for i, _ in carry.candidates])
            carried = np.asarray([d for _, d in carry.candidates])
            assert np.allclose(carried, source.distances(self.queries.data[q], ids), rtol=1e-4, atol=1e-4)

    def test_ef_below_k(self):
        with self.assertRaises(ParameterException):
            stage3_final(self.full, self.base.data, SearchCarry(), self.queries.data[0], 5, 10, self.full_entries)


if __name__ == "__main__":
    unittest.main()
