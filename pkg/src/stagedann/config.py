"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.
"""

import json
import logging
from typing import Dict, List, Optional, Tuple
from pathlib import Path

from .exceptions import ConfigException

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = "~/.config/stagedann/bench.json"
ARTIFACT_CONFIG_SUFFIX = ".config.json"
SYNTHETIC_KINDS = ("blobs", "trajectory")

# (sampling_ratio, svd_ratio) per dataset family.
PRESETS: Dict[str, Tuple[float, float]] = {
    "deep": (0.33, 1.0),
    "t2i": (0.25, 0.64),
    "wiki": (0.25, 0.33),
    "laion": (0.25, 0.21),
    "desk": (0.25, 0.25),
}


class BenchConfig:
    """Represents the configuration of the index builders and the benchmark harness."""

    def __init__(self, path: Optional[Path] = None):
        """Initialize the BenchConfig object.

        Args:
            path (Path): The path to the configuration file.

        Note:
            If the configuration file exists, its flat JSON object is merged over the defaults.
            Unknown keys raise ConfigException.
        """
        self._path: Path = (Path(path or DEFAULT_CONFIG_PATH)).expanduser()

        # Dataset: fvecs/ivecs paths, or a synthetic set when base_path is unset.
        self.base_path: Optional[str] = None
        self.query_path: Optional[str] = None
        self.groundtruth_path: Optional[str] = None
        self.synthetic_n: int = 20_000
        self.synthetic_dim: int = 64
        self.synthetic_clusters: int = 16
        self.synthetic_queries: int = 200
        self.synthetic_kind: str = "blobs"
        self.synthetic_noise: float = 2.0

        # Artifact cache; built in memory when unset.
        self.index_path: Optional[str] = None
        self.pilot_path: Optional[str] = None
        self.svd_path: Optional[str] = None

        self.M: int = 32
        self.ef_construction: int = 200
        self.preset: Optional[str] = None
        self.sampling_ratio: float = PRESETS["desk"][0]
        self.svd_ratio: float = PRESETS["desk"][1]
        self.svd_sample_cap: int = 100_000
        self.fes_r: int = 32
        self.fes_iters: int = 25
        self.fes_e: Optional[int] = None

        self.sweep: List[int] = [16, 24, 32, 48, 64, 96, 128, 192, 256]
        self.seeded_efs: List[int] = [10, 16, 24, 32, 48, 64, 96, 128, 192, 256]
        self.ablation_ef3: int = 64
        self.k: int = 10
        self.target_recall: float = 0.9
        self.refine_iters: int = 2
        self.batch_size: int = 256
        self.warmup_batches: int = 1
        self.threads: Optional[int] = None
        self.vectorized_pilot: bool = True
        self.seed: int = 0

        if self._path.exists():
            try:
                data = json.loads(self._path.read_text())
            except json.JSONDecodeError as ex:
                raise ConfigException(f"Config {self._path} is not valid JSON: {ex}")
            self._merge(data)

    def _merge(self, data: dict) -> None:
        if not isinstance(data, dict):
            raise ConfigException(f"Config {self._path} must hold a JSON object")
        unknown = sorted(set(data) - set(self.to_dict()))
        if unknown:
            raise ConfigException(f"Unknown config keys: {', '.join(unknown)}")
        self.__dict__.update(data)
        if data.get("preset"):
            self.apply_preset(data["preset"], keep=data)

    @property
    def path(self) -> Path:
        return self._path

    def apply_preset(self, name: str, keep: Optional[dict] = None) -> None:
        """Set the sampling and SVD ratios of a named preset, unless `keep` pins them."""
        if name not in PRESETS:
            raise ConfigException(f"Unknown preset {name!r}, expected one of {', '.join(PRESETS)}")
        keep = keep or {}
        sampling, svd = PRESETS[name]
        self.preset = name
        if "sampling_ratio" not in keep:
            self.sampling_ratio = sampling
        if "svd_ratio" not in keep:
            self.svd_ratio = svd

    def apply_overrides(self, **kwargs) -> "BenchConfig":
        """Override values from CLI flags; None means the flag was not given."""
        given = {k: v for k, v in kwargs.items() if v is not None}
        unknown = sorted(set(given) - set(self.to_dict()))
        if unknown:
            raise ConfigException(f"Unknown config keys: {', '.join(unknown)}")
        if given.get("preset"):
            self.apply_preset(given["preset"], keep=given)
        self.__dict__.update(given)
        return self

    def validate(self) -> "BenchConfig":
        """Check value ranges.

        Raises:
            ConfigException: on the first invalid value.
        """
        for name in ("sampling_ratio", "svd_ratio"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ConfigException(f"{name}={value} outside (0, 1]")
        if not self.sweep:
            raise ConfigException("sweep must list at least one ef3 value")
        if self.k < 1:
            raise ConfigException(f"k must be >= 1, got {self.k}")
        if self.M < 2:
            raise ConfigException(f"M must be >= 2, got {self.M}")
        if self.fes_r < 1:
            raise ConfigException(f"fes_r must be >= 1, got {self.fes_r}")
        if self.batch_size < 1:
            raise ConfigException(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.target_recall <= 1.0:
            raise ConfigException(f"target_recall={self.target_recall} outside (0, 1]")
        if self.synthetic_kind not in SYNTHETIC_KINDS:
            expected = ", ".join(SYNTHETIC_KINDS)
            raise ConfigException(f"synthetic_kind={self.synthetic_kind!r}, expected one of {expected}")
        if self.base_path and not self.query_path:
            raise ConfigException("query_path is required together with base_path")
        return self

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if not k.startswith("_")}

    def save(self, path: Optional[Path] = None) -> Path:
        """Write the resolved configuration as JSON to `path` (the config file by default).

        Raises:
            ConfigException: when the file cannot be written.
        """
        target = Path(path or self._path).expanduser()
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(json.dumps(self.to_dict(), indent=4, sort_keys=True))
        except OSError as ex:
            raise ConfigException(f"Cannot write config {target}: {ex}")
        logger.info(f"Config written to {target}")
        return target

    def save_with_artifact(self, artifact: str) -> Path:
        """Record the configuration an artifact was built with, as `<artifact>.config.json`."""
        return self.save(Path(f"{artifact}{ARTIFACT_CONFIG_SUFFIX}"))

    def __repr__(self) -> str:
        return f"<BenchConfig {self._path} ratios=({self.sampling_ratio}, {self.svd_ratio})>"
