"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.
"""

from .config import BenchConfig  # noqa: F401
from .file_utils import FileUtils  # noqa: F401
from .engine import SearchToggles, StagedSearchEngine  # noqa: F401
from .staged_search import StageBudgets  # noqa: F401
from .dataset_io import FlatVectorSet, GroundTruth, load_fvecs, load_ivecs, recall_at_k  # noqa: F401
from .exceptions import StagedAnnException  # noqa: F401
