"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.

Orthogonal SVD rotation of the dataset and the primary / residual split.

Rotated vectors are ``x @ V`` where the columns of V are the right singular vectors ordered by
descending singular value. V is orthonormal, so the squared distance in the original space is
the sum of the squared distances over the leading ``primary_dim`` columns and the rest.
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, Optional, Union

import numpy as np

from .dataset_io import FlatVectorSet
from .file_utils import FileUtils
from .exceptions import DimensionMismatchException, ParameterException

logger = logging.getLogger(__name__)

SVD_MAGIC = b"SANNSVD\0"
SVD_VERSION = 1
DEFAULT_SAMPLE_CAP = 100_000


class SvdModel:
    """Fitted rotation: D×D orthonormal `rotation` and its non-increasing `singular_values`."""

    def __init__(self, rotation: np.ndarray, singular_values: np.ndarray, primary_dim: Optional[int] = None):
        """Initialize the model.

        Args:
            rotation: D×D matrix whose columns are the right singular vectors.
            singular_values: Length-D non-increasing, non-negative values.
            primary_dim: Default split point used by `transform_split`; D when omitted.
        """
        rotation = np.ascontiguousarray(rotation, dtype=np.float32)
        if rotation.ndim != 2 or rotation.shape[0] != rotation.shape[1]:
            raise ParameterException(f"Rotation must be square, got shape {rotation.shape}")
        self.rotation = rotation
        self.singular_values = np.ascontiguousarray(singular_values, dtype=np.float32)
        self.primary_dim = int(primary_dim or rotation.shape[0])
        if not 1 <= self.primary_dim <= self.dim:
            raise ParameterException(f"primary_dim {self.primary_dim} outside [1, {self.dim}]")

    @property
    def dim(self) -> int:
        return int(self.rotation.shape[0])

    def __repr__(self) -> str:
        return f"<SvdModel dim={self.dim} primary_dim={self.primary_dim}>"

    def save(self, path: Union[str, Path]) -> int:
        """Write the model to a versioned binary sidecar file."""
        return FileUtils(path).write_artifact(
            SVD_MAGIC, SVD_VERSION, "<II", (self.dim, self.primary_dim), [self.rotation, self.singular_values]
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SvdModel":
        """Read a model written by `save`."""
        _, reader = FileUtils(path).open_artifact(SVD_MAGIC, [SVD_VERSION])
        dim, primary_dim = reader.unpack("<II")
        rotation = reader.array(np.float32, dim * dim).reshape(dim, dim)
        singular_values = reader.array(np.float32, dim)
        return cls(rotation, singular_values, primary_dim)


class SplitVectors:
    """Rotated vectors split into `primary` (count×d') and `residual` (count×(D−d')) parts."""

    def __init__(self, primary: np.ndarray, residual: np.ndarray):
        if primary.shape[0] != residual.shape[0]:
            raise DimensionMismatchException(
                f"Primary rows {primary.shape[0]} != residual rows {residual.shape[0]}"
            )
        self.primary = np.ascontiguousarray(primary, dtype=np.float32)
        self.residual = np.ascontiguousarray(residual, dtype=np.float32)

    @property
    def count(self) -> int:
        return int(self.primary.shape[0])

    @property
    def primary_dim(self) -> int:
        return int(self.primary.shape[1])

    @property
    def residual_dim(self) -> int:
        return int(self.residual.shape[1])

    def __repr__(self) -> str:
        return f"<SplitVectors count={self.count} primary_dim={self.primary_dim} residual_dim={self.residual_dim}>"


def primary_dim_for_ratio(dim: int, ratio: float) -> int:
    """Number of primary components kept for an SVD ratio in (0, 1]."""
    if not 0.0 < ratio <= 1.0:
        raise ParameterException(f"SVD ratio {ratio} outside (0, 1]")
    return max(1, min(dim, int(round(ratio * dim))))


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the first nonzero component of every column non-negative."""
    for col in range(vectors.shape[1]):
        nonzero = np.flatnonzero(np.abs(vectors[:, col]) > 1e-12)
        if nonzero.size and vectors[nonzero[0], col] < 0:
            vectors[:, col] = -vectors[:, col]
    return vectors


def fit_svd(data: FlatVectorSet, sample_cap: int = DEFAULT_SAMPLE_CAP, seed: int = 0) -> SvdModel:
    """Fit the rotation on a uniform sample of at most `sample_cap` rows.

    No mean-centering is applied: the transform stays a pure rotation. The right singular vectors
    are the eigenvectors of the scatter matrix XᵀX, which yields a complete orthonormal basis even
    for rank-deficient samples (e.g. all rows identical).

    Raises:
        ParameterException: when fewer than 2 rows are given.
    """
    if data.count < 2:
        raise ParameterException(f"fit_svd needs at least 2 rows, got {data.count}")
    rows = data.data
    if data.count > sample_cap:
        rng = np.random.Generator(np.random.PCG64(seed))
        picked = np.sort(rng.choice(data.count, size=sample_cap, replace=False))
        rows = rows[picked]
    sample = rows.astype(np.float64)
    eigenvalues, eigenvectors = np.linalg.eigh(sample.T @ sample)
    order = np.argsort(-eigenvalues, kind="stable")
    singular_values = np.sqrt(np.clip(eigenvalues[order], 0.0, None))
    rotation = _fix_signs(np.ascontiguousarray(eigenvectors[:, order]))
    logger.info(
        f"Fitted SVD rotation on {sample.shape[0]} of {data.count} rows, dim {data.dim}, "
        f"leading singular value {singular_values[0]:.3f}"
    )
    return SvdModel(rotation, singular_values)


def transform_split(model: SvdModel, data: FlatVectorSet, primary_dim: Optional[int] = None) -> SplitVectors:
    """Rotate every row and split it at column `primary_dim` (defaults to the model's).

    Raises:
        DimensionMismatchException: when the data dimension differs from the model's.
        ParameterException: when primary_dim is outside [1, D].
    """
    if data.dim != model.dim:
        raise DimensionMismatchException(f"Data dim {data.dim} != model dim {model.dim}")
    primary_dim = int(primary_dim or model.primary_dim)
    if not 1 <= primary_dim <= model.dim:
        raise ParameterException(f"primary_dim {primary_dim} outside [1, {model.dim}]")
    rotated = data.data @ model.rotation
    return SplitVectors(rotated[:, :primary_dim], rotated[:, primary_dim:])


def _squared(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.shape != b.shape:
        raise DimensionMismatchException(f"Operand shapes differ: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.dot(diff, diff))


def primary_distance(a_primary: np.ndarray, b_primary: np.ndarray) -> float:
    """Squared Euclidean distance over the primary components."""
    return _squared(a_primary, b_primary)


def residual_distance(a_residual: np.ndarray, b_residual: np.ndarray) -> float:
    """Squared Euclidean distance over the residual components (0 for zero width)."""
    return _squared(a_residual, b_residual)


def _ranks(values: np.ndarray) -> np.ndarray:
    """Ranks from 0, tied values sharing the mean of their positions."""
    order = np.argsort(values, kind="stable")
    ordered = values[order]
    starts = np.flatnonzero(np.r_[True, ordered[1:] != ordered[:-1]])
    ends = np.r_[starts[1:], values.size]
    ranks = np.empty(values.shape, dtype=np.float64)
    ranks[order] = np.repeat((starts + ends - 1) / 2.0, ends - starts)
    return ranks


def spearman(a: np.ndarray, b: np.ndarray) -> float:
    """Spearman rank correlation of two equally sized samples."""
    ra, rb = _ranks(a), _ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra * ra).sum() * (rb * rb).sum())
    return float((ra * rb).sum() / denom) if denom > 0 else 1.0


def rank_correlation(
    model: SvdModel,
    data: FlatVectorSet,
    queries: FlatVectorSet,
    ratios: Iterable[float],
    sample: int = 2000,
    seed: int = 0,
) -> Dict[float, float]:
    """Mean Spearman correlation between primary-space and full-space distance orderings.

    For every query the distances to a fixed uniform sample of data rows are ranked once in the
    full space and once over the leading components of each SVD ratio.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    picked = np.sort(rng.choice(data.count, size=min(sample, data.count), replace=False))
    rows = data.data[picked] @ model.rotation
    rotated_queries = queries.data @ model.rotation
    full = ((rows[None, :, :] - rotated_queries[:, None, :]) ** 2).sum(-1)
    result = {}
    for ratio in ratios:
        width = primary_dim_for_ratio(model.dim, ratio)
        reduced = ((rows[None, :, :width] - rotated_queries[:, None, :width]) ** 2).sum(-1)
        result[ratio] = float(np.mean([spearman(reduced[i], full[i]) for i in range(queries.count)]))
    return result
