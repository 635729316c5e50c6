"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.

Vector datasets: fvecs / ivecs I/O, synthetic clustered and trajectory data, exact ground truth.

All distances in this package are squared Euclidean. Ties between equal distances are
broken by the smaller node id.
"""

import logging
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .file_utils import FileUtils
from .exceptions import (
    DimensionMismatchException,
    InconsistentDimensionException,
    MalformedHeaderException,
    ParameterException,
    TruncatedFileException,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# Approximate distances from the GEMM expansion only preselect candidates; the final
# ranking is recomputed exactly over this many extra rows per query.
GROUND_TRUTH_MARGIN = 16
GROUND_TRUTH_CHUNK = 256
APPROX_SLACK = 1e-9


class FlatVectorSet:
    """Row-major float32 vectors sharing one dimension.

    The matrix is made read-only on construction so a loaded set can be shared across threads.
    An empty set has ``count == 0`` and ``dim == 0``.
    """

    def __init__(self, data: np.ndarray):
        """Initialize the set.

        Args:
            data: A 2-D array, converted to C-contiguous float32.

        Raises:
            ParameterException: on a non 2-D input or non-finite values.
        """
        data = np.ascontiguousarray(data, dtype=np.float32)
        if data.ndim != 2:
            raise ParameterException(f"Vector data must be 2-D, got shape {data.shape}")
        if data.size and not np.isfinite(data).all():
            raise ParameterException("Vector data contains NaN or Inf values")
        if data.shape[0] == 0:
            data = data.reshape(0, 0)
        data.setflags(write=False)
        self.data = data

    @property
    def count(self) -> int:
        return int(self.data.shape[0])

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])

    def __len__(self) -> int:
        return self.count

    def __repr__(self) -> str:
        return f"<FlatVectorSet count={self.count} dim={self.dim}>"

    def subset(self, ids: Sequence[int]) -> "FlatVectorSet":
        """Return the rows at `ids` as a new set."""
        return FlatVectorSet(self.data[np.asarray(ids, dtype=np.int64)])


class GroundTruth:
    """Exact k nearest neighbors of a query set: ids and squared distances, both count×k."""

    def __init__(self, ids: np.ndarray, distances: Optional[np.ndarray] = None):
        """Initialize the ground truth.

        Args:
            ids: count×k integer matrix.
            distances: count×k float matrix; zero-filled when only ids are known (ivecs input).
        """
        ids = np.ascontiguousarray(ids, dtype=np.int64)
        if ids.ndim != 2:
            raise ParameterException(f"Ground truth ids must be 2-D, got shape {ids.shape}")
        if distances is None:
            distances = np.zeros(ids.shape, dtype=np.float32)
        distances = np.ascontiguousarray(distances, dtype=np.float32)
        if distances.shape != ids.shape:
            raise DimensionMismatchException(
                f"Ground truth ids {ids.shape} and distances {distances.shape} differ in shape"
            )
        self.ids = ids
        self.distances = distances

    @property
    def k(self) -> int:
        return int(self.ids.shape[1])

    @property
    def count(self) -> int:
        return int(self.ids.shape[0])

    def __repr__(self) -> str:
        return f"<GroundTruth count={self.count} k={self.k}>"


def _read_records(path: PathLike, payload_dtype) -> np.ndarray:
    raw = FileUtils(path).read()
    if not raw:
        return np.zeros((0, 0), dtype=payload_dtype)
    if len(raw) < 4:
        raise TruncatedFileException(f"{path}: file ends inside the first record header")
    words_available = len(raw) // 4
    dim = int(np.frombuffer(raw, dtype="<i4", count=1)[0])
    if dim <= 0:
        raise MalformedHeaderException(f"{path}: record 0 declares dimension {dim}")
    record_bytes = 4 * (dim + 1)

    if len(raw) % record_bytes == 0:
        table = np.frombuffer(raw, dtype="<i4", count=words_available).reshape(-1, dim + 1)
        bad = np.flatnonzero(table[:, 0] != dim)
        if bad.size == 0:
            return table[:, 1:].copy().view(np.dtype(payload_dtype).newbyteorder("<")).astype(payload_dtype)

    # Slow path: walk the headers to report the first defect precisely.
    header = np.frombuffer(raw, dtype="<i4", count=words_available)
    pos, record = 0, 0
    while pos < len(raw):
        if len(raw) - pos < 4:
            raise TruncatedFileException(f"{path}: file ends inside the header of record {record}")
        declared = int(header[pos // 4])
        if declared <= 0:
            raise MalformedHeaderException(f"{path}: record {record} declares dimension {declared}")
        if declared != dim:
            raise InconsistentDimensionException(
                f"{path}: record {record} declares dimension {declared}, expected {dim}"
            )
        if pos + record_bytes > len(raw):
            raise TruncatedFileException(
                f"{path}: record {record} needs {record_bytes} bytes, only {len(raw) - pos} left"
            )
        pos += record_bytes
        record += 1
    raise TruncatedFileException(f"{path}: unaligned record layout")  # pragma: no cover


def load_fvecs(path: PathLike) -> FlatVectorSet:
    """Load an fvecs file: per record an int32 dimension followed by dim float32 values.

    Raises:
        FileNotFoundError if the file does not exist.
        MalformedHeaderException, InconsistentDimensionException, TruncatedFileException.
    """
    vectors = FlatVectorSet(_read_records(path, np.float32))
    logger.info(f"Loaded {vectors.count} vectors of dim {vectors.dim} from {path}")
    return vectors


def load_ivecs(path: PathLike) -> np.ndarray:
    """Load an ivecs file into a count×dim int32 matrix (same errors as load_fvecs)."""
    matrix = _read_records(path, np.int32)
    logger.info(f"Loaded {matrix.shape[0]} integer rows of width {matrix.shape[1]} from {path}")
    return matrix


def _write_records(path: PathLike, matrix: np.ndarray, payload_dtype) -> None:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ParameterException(f"Expected a 2-D matrix, got shape {matrix.shape}")
    count, dim = matrix.shape
    table = np.empty((count, dim + 1), dtype="<i4")
    table[:, 0] = dim
    table[:, 1:] = np.ascontiguousarray(matrix, dtype=np.dtype(payload_dtype).newbyteorder("<")).view("<i4")
    FileUtils(path).write(table.tobytes() if count else b"")


def write_fvecs(path: PathLike, vectors: Union[FlatVectorSet, np.ndarray]) -> None:
    """Write vectors in fvecs layout (inverse of load_fvecs)."""
    data = vectors.data if isinstance(vectors, FlatVectorSet) else vectors
    _write_records(path, data, np.float32)


def write_ivecs(path: PathLike, matrix: np.ndarray) -> None:
    """Write an integer matrix in ivecs layout (inverse of load_ivecs)."""
    _write_records(path, np.asarray(matrix, dtype=np.int32), np.int32)


def generate_synthetic(n: int, d: int, clusters: int, seed: int, spread: float = 1.0) -> FlatVectorSet:
    """Draw `n` vectors from a mixture of `clusters` isotropic Gaussian blobs.

    The generator is numpy's PCG64 bit generator seeded with `seed`; draws happen in a fixed
    order (cluster centers, labels, noise) so the output is bit-identical across runs.
    Centers are N(0, (4·spread)²) per coordinate and points add N(0, spread²) noise, so blobs are
    well separated while each one still has a nontrivial nearest-neighbor structure.

    Raises:
        ParameterException: when n, d or clusters is below 1.
    """
    if n < 1 or d < 1 or clusters < 1:
        raise ParameterException(f"Invalid synthetic parameters n={n}, d={d}, clusters={clusters}")
    rng = np.random.Generator(np.random.PCG64(seed))
    centers = rng.normal(0.0, 4.0 * spread, size=(clusters, d))
    labels = rng.integers(0, clusters, size=n)
    points = centers[labels] + rng.normal(0.0, spread, size=(n, d))
    return FlatVectorSet(points.astype(np.float32))


def synthetic_base_and_queries(
    n: int, n_queries: int, d: int, clusters: int, seed: int
) -> Tuple[FlatVectorSet, FlatVectorSet]:
    """Draw base and query vectors from one mixture, so queries follow the base distribution."""
    if n_queries < 1:
        raise ParameterException(f"Invalid query count {n_queries}")
    both = generate_synthetic(n + n_queries, d, clusters, seed)
    return FlatVectorSet(both.data[:n]), FlatVectorSet(both.data[n:])


def trajectory_curve(times: np.ndarray, d: int) -> np.ndarray:
    """Points of a smooth curve at times in [0, 1].

    The first two coordinates trace a quarter circle of radius 10; every further coordinate pair
    oscillates with a faster frequency and a smaller amplitude. The quarter circle alone keeps
    points at distinct times apart, so the curve never returns close to itself.
    """
    times = np.asarray(times, dtype=np.float64)
    points = np.zeros((times.size, d))
    if d == 1:
        points[:, 0] = 10.0 * times
        return points
    angle = 0.5 * np.pi * times
    points[:, 0] = 10.0 * np.cos(angle)
    points[:, 1] = 10.0 * np.sin(angle)
    for col in range(2, d):
        pair = col // 2
        wave = np.cos if col % 2 == 0 else np.sin
        points[:, col] = wave((2 * pair + 1) * np.pi * times) / pair
    return points


def trajectory_base_and_queries(
    n: int, n_queries: int, d: int, seed: int, noise: float = 2.0
) -> Tuple[FlatVectorSet, FlatVectorSet]:
    """Noisy samples of `trajectory_curve`, like embeddings of a slowly drifting stream.

    Base ids follow the curve (sorted uniform times); queries sit at fresh uniform times. Each
    point adds isotropic Gaussian noise with a total norm of about `noise` times the mean gap
    between consecutive base points, so neighborhoods stay thin and searches from far away walk
    a long way along the curve.

    Raises:
        ParameterException: when n, n_queries or d is below 1, or noise is negative.
    """
    if n < 1 or n_queries < 1 or d < 1 or noise < 0:
        raise ParameterException(f"Invalid trajectory parameters n={n}, queries={n_queries}, d={d}, noise={noise}")
    rng = np.random.Generator(np.random.PCG64(seed))
    base_times = np.sort(rng.uniform(0.0, 1.0, size=n))
    query_times = rng.uniform(0.0, 1.0, size=n_queries)
    outline = trajectory_curve(np.linspace(0.0, 1.0, 2049), d)
    length = float(np.linalg.norm(np.diff(outline, axis=0), axis=1).sum())
    sigma = noise * length / n / np.sqrt(d)
    base = trajectory_curve(base_times, d) + rng.normal(0.0, sigma, size=(n, d))
    queries = trajectory_curve(query_times, d) + rng.normal(0.0, sigma, size=(n_queries, d))
    return FlatVectorSet(base.astype(np.float32)), FlatVectorSet(queries.astype(np.float32))


def squared_distances(query: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distances from one query to each row, in float32."""
    diff = rows.astype(np.float64) - query.astype(np.float64)
    return np.einsum("ij,ij->i", diff, diff).astype(np.float32)


def rank_by_distance(ids: np.ndarray, distances: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Sort (id, distance) pairs by distance then id and keep the first k."""
    order = np.lexsort((ids, distances))[:k]
    return ids[order], distances[order]


def brute_force_topk(base: FlatVectorSet, queries: FlatVectorSet, k: int) -> GroundTruth:
    """Exact k nearest neighbors of every query, ties broken by smaller node id.

    Candidates are preselected per query chunk with a GEMM expansion and re-ranked with exact
    distances, so output distances do not depend on the chunking.

    Raises:
        DimensionMismatchException: when base and queries differ in dimension.
        ParameterException: when k is not in [1, base.count].
    """
    if base.dim != queries.dim:
        raise DimensionMismatchException(f"Base dim {base.dim} != query dim {queries.dim}")
    if k < 1 or k > base.count:
        raise ParameterException(f"k={k} must be within [1, {base.count}]")
    ids = np.empty((queries.count, k), dtype=np.int64)
    dists = np.empty((queries.count, k), dtype=np.float32)
    shortlist = min(base.count, 2 * k + GROUND_TRUTH_MARGIN)
    base64 = base.data.astype(np.float64)
    base_norms = np.einsum("ij,ij->i", base64, base64)
    for start in range(0, queries.count, GROUND_TRUTH_CHUNK):
        chunk = queries.data[start : start + GROUND_TRUTH_CHUNK].astype(np.float64)
        approx = base_norms[None, :] - 2.0 * chunk @ base64.T + np.einsum("ij,ij->i", chunk, chunk)[:, None]
        for row, scores in enumerate(approx):
            if shortlist < base.count:
                # keep every candidate tied with the shortlist boundary so ties resolve by id
                bound = np.partition(scores, shortlist - 1)[shortlist - 1]
                cand = np.flatnonzero(scores <= bound + APPROX_SLACK * (1.0 + abs(bound)))
            else:
                cand = np.arange(base.count)
            exact = squared_distances(queries.data[start + row], base.data[cand])
            ids[start + row], dists[start + row] = rank_by_distance(np.asarray(cand, dtype=np.int64), exact, k)
    logger.debug(f"Computed exact top-{k} for {queries.count} queries over {base.count} vectors")
    return GroundTruth(ids, dists)


def recall_at_k(retrieved: Sequence[Sequence[int]], truth: GroundTruth, k: int) -> float:
    """Mean over queries of |retrieved_k ∩ truth_k| / k (set semantics).

    Raises:
        ParameterException: when k exceeds the truth width or any retrieved list is shorter than k,
            or when the number of retrieved lists differs from the truth rows.
    """
    if k < 1 or k > truth.k:
        raise ParameterException(f"k={k} exceeds ground truth width {truth.k}")
    if len(retrieved) != truth.count:
        raise ParameterException(f"Got {len(retrieved)} result lists for {truth.count} queries")
    if truth.count == 0:
        return 0.0
    hits = 0
    for row, found in enumerate(retrieved):
        if len(found) < k:
            raise ParameterException(f"Query {row} returned {len(found)} ids, fewer than k={k}")
        hits += len(set(int(i) for i in found[:k]) & set(int(i) for i in truth.ids[row, :k]))
    return hits / (k * truth.count)
