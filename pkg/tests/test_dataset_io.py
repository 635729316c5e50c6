"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.

Tests of the vector file formats, synthetic data and exact ground truth.
"""

import struct
import tempfile
import unittest
from pathlib import Path

import numpy as np
from hypothesis import given, settings, strategies as st

from stagedann.dataset_io import (
    FlatVectorSet,
    GroundTruth,
    brute_force_topk,
    generate_synthetic,
    load_fvecs,
    load_ivecs,
    recall_at_k,
    trajectory_base_and_queries,
    trajectory_curve,
    write_fvecs,
    write_ivecs,
)
from stagedann.exceptions import (
    DimensionMismatchException,
    InconsistentDimensionException,
    MalformedHeaderException,
    ParameterException,
    TruncatedFileException,
)


def reference_topk(base: np.ndarray, queries: np.ndarray, k: int):
    """Exhaustive top-k with (distance, id) ordering, written independently of the package."""
    ids, dists = [], []
    for q in queries.astype(np.float64):
        d = ((base.astype(np.float64) - q) ** 2).sum(axis=1).astype(np.float32)
        order = sorted(range(len(d)), key=lambda i: (d[i], i))[:k]
        ids.append(order)
        dists.append([d[i] for i in order])
    return np.asarray(ids), np.asarray(dists, dtype=np.float32)


class TestVectorFiles(unittest.TestCase):
    """Test cases for the fvecs / ivecs readers and writers."""

    def setUp(self):
        """Set up a scratch directory."""
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self._tmp.name)

    def tearDown(self):
        """Remove the scratch directory."""
        self._tmp.cleanup()

    def _raw(self, name, content: bytes) -> Path:
        path = self.dir / name
        path.write_bytes(content)
        return path

    def test_fvecs_round_trip(self):
        """Written vectors load back bit-identical."""
        data = np.arange(12, dtype=np.float32).reshape(3, 4) / 7
        write_fvecs(self.dir / "a.fvecs", data)
        loaded = load_fvecs(self.dir / "a.fvecs")
        assert loaded.count == 3 and loaded.dim == 4
        assert np.array_equal(loaded.data, data)

    def test_fvecs_record_layout(self):
        """Each record is an int32 dimension followed by the float32 values."""
        content = struct.pack("<i2f", 2, 1.5, -2.0) + struct.pack("<i2f", 2, 0.0, 3.25)
        loaded = load_fvecs(self._raw("b.fvecs", content))
        assert loaded.data.tolist() == [[1.5, -2.0], [0.0, 3.25]]

    def test_ivecs_round_trip(self):
        """Integer rows load back as an int32 matrix."""
        matrix = np.array([[5, 1, 9], [0, 2, 7]])
        write_ivecs(self.dir / "gt.ivecs", matrix)
        loaded = load_ivecs(self.dir / "gt.ivecs")
        assert loaded.dtype == np.int32
        assert loaded.tolist() == matrix.tolist()

    def test_empty_file(self):
        """An empty file is an empty set."""
        loaded = load_fvecs(self._raw("empty.fvecs", b""))
        assert loaded.count == 0 and loaded.dim == 0 and len(loaded) == 0

    def test_malformed_header(self):
        """A non-positive dimension is a malformed header."""
        with self.assertRaises(MalformedHeaderException):
            load_fvecs(self._raw("bad.fvecs", struct.pack("<if", 0, 1.0)))
        with self.assertRaises(MalformedHeaderException):
            load_fvecs(self._raw("neg.fvecs", struct.pack("<i", -3)))

    def test_inconsistent_dimension(self):
        """Records with different dimensions are rejected."""
        content = struct.pack("<i2f", 2, 1.0, 2.0) + struct.pack("<i3f", 3, 1.0, 2.0, 3.0)
        with self.assertRaises(InconsistentDimensionException):
            load_fvecs(self._raw("mixed.fvecs", content))

    def test_truncated_file(self):
        """A file ending inside a record is truncated."""
        content = struct.pack("<i2f", 2, 1.0, 2.0) + struct.pack("<if", 2, 1.0)
        with self.assertRaises(TruncatedFileException):
            load_fvecs(self._raw("short.fvecs", content))
        with self.assertRaises(TruncatedFileException):
            load_fvecs(self._raw("tiny.fvecs", b"\x02\x00"))

    def test_missing_file(self):
        """Missing files propagate the filesystem error."""
        with self.assertRaises(FileNotFoundError):
            load_fvecs(self.dir / "nope.fvecs")


class TestFlatVectorSet(unittest.TestCase):
    """Test cases for FlatVectorSet and GroundTruth."""

    def test_read_only(self):
        """Loaded matrices cannot be modified in place."""
        vectors = FlatVectorSet(np.ones((2, 3)))
        assert vectors.data.dtype == np.float32
        with self.assertRaises(ValueError):
            vectors.data[0, 0] = 5

    def test_rejects_non_finite(self):
        """NaN values are refused."""
        with self.assertRaises(ParameterException):
            FlatVectorSet(np.array([[1.0, np.nan]]))

    def test_subset(self):
        """subset keeps the requested rows in order."""
        vectors = FlatVectorSet(np.arange(8).reshape(4, 2))
        assert vectors.subset([3, 1]).data.tolist() == [[6, 7], [2, 3]]

    def test_ground_truth_shapes(self):
        """Distances default to zeros and must match the ids shape."""
        truth = GroundTruth(np.array([[1, 2], [3, 4]]))
        assert truth.k == 2 and truth.count == 2
        with self.assertRaises(DimensionMismatchException):
            GroundTruth(np.array([[1, 2]]), np.zeros((1, 3)))


class TestSynthetic(unittest.TestCase):
    """Test cases for the synthetic generator."""

    def test_deterministic(self):
        """Equal seeds draw equal data; different seeds differ."""
        a = generate_synthetic(50, 8, 3, seed=7)
        b = generate_synthetic(50, 8, 3, seed=7)
        c = generate_synthetic(50, 8, 3, seed=8)
        assert np.array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)

    def test_invalid(self):
        """Non-positive sizes are refused."""
        with self.assertRaises(ParameterException):
            generate_synthetic(0, 8, 3, seed=0)
        with self.assertRaises(ParameterException):
            trajectory_base_and_queries(10, 0, 4, seed=0)
        with self.assertRaises(ParameterException):
            trajectory_base_and_queries(10, 5, 4, seed=0, noise=-1.0)

    def test_clusters_are_separated(self):
        """Every pair of cluster means lies further apart than the spread inside a cluster."""
        data = generate_synthetic(1000, 16, 8, seed=1).data.astype(np.float64)
        rng = np.random.Generator(np.random.PCG64(1))
        rng.normal(0.0, 4.0, size=(8, 16))
        labels = rng.integers(0, 8, size=1000)
        means = np.stack([data[labels == c].mean(axis=0) for c in range(8)])
        within = np.sqrt(np.mean([((data[labels == c] - means[c]) ** 2).mean() for c in range(8)]))
        gaps = np.sqrt(((means[:, None, :] - means[None, :, :]) ** 2).sum(-1))[~np.eye(8, dtype=bool)]
        assert gaps.min() > within

    def test_trajectory_follows_ids(self):
        """Base ids run along the curve: consecutive rows are close, and most nearest neighbors are
        a few ids away."""
        base, queries = trajectory_base_and_queries(2000, 50, 16, seed=3)
        again, _ = trajectory_base_and_queries(2000, 50, 16, seed=3)
        assert np.array_equal(base.data, again.data)
        assert (base.count, queries.count, base.dim) == (2000, 50, 16)
        steps = np.linalg.norm(np.diff(base.data.astype(np.float64), axis=0), axis=1)
        rng = np.random.Generator(np.random.PCG64(0))
        pairs = rng.integers(0, 2000, size=(500, 2))
        spread = np.linalg.norm(base.data[pairs[:, 0]] - base.data[pairs[:, 1]], axis=1)
        assert np.median(steps) * 50 < np.median(spread)
        nearest = brute_force_topk(base, FlatVectorSet(base.data[::20]), 2).ids[:, 1]
        assert np.mean(np.abs(nearest - np.arange(0, 2000, 20)) <= 5) >= 0.9

    def test_trajectory_curve(self):
        """The curve starts on the first axis and ends on the second."""
        ends = trajectory_curve(np.array([0.0, 1.0]), 4)
        assert np.allclose(ends[0, :2], [10.0, 0.0])
        assert np.allclose(ends[1, :2], [0.0, 10.0], atol=1e-9)
        assert np.allclose(trajectory_curve(np.array([0.5]), 1), [[5.0]])


class TestGroundTruth(unittest.TestCase):
    """Test cases for brute_force_topk and recall_at_k."""

    @settings(max_examples=60, deadline=None)
    @given(
        n=st.integers(min_value=1, max_value=70),
        m=st.integers(min_value=1, max_value=5),
        d=st.integers(min_value=1, max_value=4),
        k=st.integers(min_value=1, max_value=8),
        spread=st.integers(min_value=0, max_value=6),
        seed=st.integers(min_value=0, max_value=2**16),
    )
    def test_matches_reference(self, n, m, d, k, spread, seed):
        """Ids and distances equal an exhaustive reference, ties included."""
        rng = np.random.Generator(np.random.PCG64(seed))
        base = rng.integers(-spread, spread + 1, size=(n, d)).astype(np.float32)
        queries = rng.integers(-spread, spread + 1, size=(m, d)).astype(np.float32)
        k = min(k, n)
        truth = brute_force_topk(FlatVectorSet(base), FlatVectorSet(queries), k)
        ids, dists = reference_topk(base, queries, k)
        assert truth.ids.tolist() == ids.tolist()
        assert np.array_equal(truth.distances, dists)

    def test_all_ties_prefer_small_ids(self):
        """With every base vector identical the first k ids win."""
        base = FlatVectorSet(np.zeros((100, 3)))
        truth = brute_force_topk(base, FlatVectorSet(np.ones((2, 3))), 5)
        assert truth.ids.tolist() == [[0, 1, 2, 3, 4]] * 2

    def test_invalid_k_and_dims(self):
        """k outside [1, n] or a dimension mismatch raise."""
        base = FlatVectorSet(np.zeros((4, 3)))
        with self.assertRaises(ParameterException):
            brute_force_topk(base, FlatVectorSet(np.zeros((1, 3))), 5)
        with self.assertRaises(DimensionMismatchException):
            brute_force_topk(base, FlatVectorSet(np.zeros((1, 2))), 1)

    def test_recall_set_semantics(self):
        """Recall counts the overlap of the first k ids, ignoring order."""
        truth = GroundTruth(np.array([[1, 2, 3], [4, 5, 6]]))
        assert recall_at_k([[3, 2, 1], [4, 9, 8]], truth, 3) == 4 / 6
        assert recall_at_k([[1, 7], [4, 5]], truth, 2) == 3 / 4

    def test_recall_errors(self):
        """Short result lists, a k above the truth width and a count mismatch raise."""
        truth = GroundTruth(np.array([[1, 2]]))
        with self.assertRaises(ParameterException):
            recall_at_k([[1]], truth, 2)
        with self.assertRaises(ParameterException):
            recall_at_k([[1, 2, 3]], truth, 3)
        with self.assertRaises(ParameterException):
            recall_at_k([[1, 2], [1, 2]], truth, 2)


if __name__ == "__main__":
    unittest.main()
