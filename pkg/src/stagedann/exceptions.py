"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.
"""

from typing import List, Optional


class StagedAnnException(Exception):
    """Base exception class for the stagedann package."""

    def __init__(self, message: str):
        """
        Initialize the custom exception.

        :param message: exception message.
        """
        super().__init__(message)
        self.message = message


class DatasetFormatException(StagedAnnException):
    """A vector file does not follow the fvecs / ivecs record layout."""


class MalformedHeaderException(DatasetFormatException):
    """A record header declares a non-positive dimension."""


class InconsistentDimensionException(DatasetFormatException):
    """Two records of the same file declare different dimensions."""


class TruncatedFileException(DatasetFormatException):
    """The file ends in the middle of a record."""


class ArtifactFormatException(StagedAnnException):
    """A persisted index artifact has a bad magic, version or size."""


class DimensionMismatchException(StagedAnnException):
    """Two operands do not share the expected vector dimension or row count."""


class ParameterException(StagedAnnException):
    """An operation was called with an out-of-range parameter."""


class InvalidEntryException(StagedAnnException):
    """A traversal entry point is not a valid node id."""


class UnreachableRecallException(StagedAnnException):
    """A recall target is not reached anywhere on a measured curve."""

    def __init__(self, message: str, best_recall: float = 0.0):
        """
        Initialize the exception.

        :param message: exception message.
        :param best_recall: the highest recall observed on the curve.
        """
        super().__init__(message)
        self.best_recall = best_recall


class ConfigException(StagedAnnException):
    """The benchmark configuration is invalid."""


class AblationExpectationException(StagedAnnException):
    """An ablation table misses its expected ordering."""

    def __init__(self, message: str, failures: Optional[List[str]] = None):
        """
        Initialize the exception.

        :param message: exception message.
        :param failures: one description per missed expectation.
        """
        super().__init__(message)
        self.failures = list(failures or [])
