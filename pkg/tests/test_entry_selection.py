"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.
"""

import unittest

import numpy as np

from stagedann.backends import ThreadPoolBackend
from stagedann.entry_selection import (
    EntryIndex,
    count_fes_work,
    route_queries,
    select_entries,
    tiled_entry_distances,
    train_entry_index,
    traversal_entries,
)
from stagedann.exceptions import DimensionMismatchException, ParameterException
from stagedann.graph_index import CsrGraph


class TestEntrySelection(unittest.TestCase):
    """Test cases for clustered entry selection."""

    @classmethod
    def setUpClass(cls):
        rng = np.random.Generator(np.random.PCG64(3))
        cls.vectors = rng.normal(size=(600, 40)).astype(np.float32)
        cls.ids = np.arange(1000, 1600)
        cls.queries = rng.normal(size=(30, 40)).astype(np.float32)
        cls.index = train_entry_index(cls.vectors, r=4, iters=10, seed=0, ids=cls.ids)

    def test_partition(self):
        """Every candidate lands in exactly one cell."""
        merged = np.sort(np.concatenate(self.index.cell_members))
        assert np.array_equal(merged, self.ids)
        assert self.index.cell_sizes().sum() == 600
        largest, mean = self.index.imbalance()
        assert largest >= mean == 150

    def test_separated_blobs_become_cells(self):
        """Well separated blobs are recovered as cells with at least 95% purity."""
        rng = np.random.Generator(np.random.PCG64(9))
        centers = 20.0 * np.eye(8)[:4]
        labels = rng.integers(0, 4, size=800)
        vectors = (centers[labels] + rng.normal(size=(800, 8))).astype(np.float32)
        index = train_entry_index(vectors, r=4, iters=25, seed=0)
        majority = sum(np.bincount(labels[members], minlength=4).max() for members in index.cell_members)
        assert majority / 800 >= 0.95

    def test_cell_vectors_follow_ids(self):
        """Grouped entry vectors are the rows of their member ids."""
        for members, rows in zip(self.index.cell_members, self.index.entry_vectors):
            assert np.array_equal(rows, self.vectors[members - 1000])

    def test_deterministic(self):
        """Training with the same seed gives the same cells."""
        again = train_entry_index(self.vectors, r=4, iters=10, seed=0, ids=self.ids)
        assert np.array_equal(again.centroids, self.index.centroids)

    def test_routing_is_nearest_centroid(self):
        """Queries go to their closest centroid."""
        routed = route_queries(self.index, self.queries)
        diff = self.queries[:, None, :] - self.index.centroids[None, :, :]
        assert np.array_equal(routed, np.argmin((diff**2).sum(-1), axis=1))

    def test_tiled_matches_flat(self):
        """Tiled distances agree with a direct evaluation over the routed cell."""
        result = select_entries(self.index, self.queries, 16)
        for q in range(len(self.queries)):
            cell = result.routed[q]
            members = self.index.cell_members[cell]
            flat = ((self.index.entry_vectors[cell] - self.queries[q]) ** 2).sum(1)
            assert len(result.ids[q]) == 16
            assert set(result.ids[q].tolist()) <= set(members.tolist())
            assert np.allclose(result.distances[q], np.sort(flat)[:16], rtol=1e-5)
            direct = ((self.vectors[result.ids[q] - 1000] - self.queries[q]) ** 2).sum(1)
            assert np.allclose(result.distances[q], direct, rtol=1e-5)
            assert (np.diff(result.distances[q]) >= 0).all()

    def test_computation_count(self):
        """The counter equals the routed cell size summed over the queries."""
        result = select_entries(self.index, self.queries, 8)
        sizes = self.index.cell_sizes()
        assert result.computations == int(sizes[result.routed].sum())

    def test_single_cell_scans_everything(self):
        """With one cell every query evaluates every candidate."""
        index = train_entry_index(self.vectors, r=1, iters=3, seed=0)
        result = select_entries(index, self.queries, 5)
        assert result.computations == 30 * 600
        flat = ((self.vectors[None, :, :] - self.queries[:, None, :]) ** 2).sum(-1)
        assert np.allclose(result.distances[0], np.sort(flat[0])[:5], rtol=1e-5)

    def test_threaded_backend(self):
        """Cells mapped over a thread pool give the same entries."""
        serial = select_entries(self.index, self.queries, 8)
        with ThreadPoolBackend(3) as backend:
            threaded = select_entries(self.index, self.queries, 8, backend)
        for a, b in zip(serial.ids, threaded.ids):
            assert a.tolist() == b.tolist()

    def test_empty_cell(self):
        """A query routed to an empty cell gets no entries."""
        index = EntryIndex(
            np.zeros((2, 40), dtype=np.float32),
            [self.ids[:5], np.zeros(0, dtype=np.int64)],
            [self.vectors[:5], np.zeros((0, 40), dtype=np.float32)],
        )
        result = tiled_entry_distances(index, self.queries[:3], np.array([0, 1, 1]), 3)
        assert len(result.ids[0]) == 3
        assert len(result.ids[1]) == 0 and len(result.ids[2]) == 0
        assert result.computations == 5

    def test_errors(self):
        """Bad training or routing parameters are refused."""
        with self.assertRaises(ParameterException):
            train_entry_index(self.vectors[:3], r=4)
        with self.assertRaises(ParameterException):
            train_entry_index(self.vectors, r=4, iters=0)
        with self.assertRaises(ParameterException):
            select_entries(self.index, self.queries, 0)
        with self.assertRaises(DimensionMismatchException):
            route_queries(self.index, self.queries[:, :10])

    def test_work_formulas(self):
        """Closed-form work for one query and for a batch."""
        single = count_fes_work(1, 1000, 32, 10)
        assert single["computations"] == 1000 * 32 / 10
        assert abs(single["density"] - 1000 / 1001) < 1e-12
        batch = count_fes_work(100, 1000, 32, 10)
        assert batch["computations"] == 100 * 1000 * 32 / 10
        assert batch["memory_reads"] == 100 * 32 + 1000 * 32
        assert abs(batch["density"] - 100 * 1000 / (10 * 1100)) < 1e-12
        with self.assertRaises(ParameterException):
            count_fes_work(0, 1000, 32, 10)

    def test_traversal_entries(self):
        """Two-hop expansion on a path reaches three nodes, ranked by distance."""
        graph = CsrGraph.from_adjacency([[1], [0, 2], [1, 3], [2]], 2)
        primary = np.array([[0.0], [1.0], [2.0], [3.0]], dtype=np.float32)
        ids, computations = traversal_entries(graph, primary, np.array([2.1], dtype=np.float32), [0], 2)
        assert computations == 3
        assert ids.tolist() == [2, 1]


if __name__ == "__main__":
    unittest.main()
