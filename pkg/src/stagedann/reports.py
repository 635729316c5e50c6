"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.

This module define the reports produced by the search engine and the benchmark harness.
"""

import logging
import os
import platform
from typing import Dict, List, Optional, Sequence

import numpy as np

from .graph_index import SearchStats
from .reports_base import BaseReport

logger = logging.getLogger(__name__)

STAGES = ("fes", "stage1", "stage2", "stage3")


class SearchReport(BaseReport):
    """Result of one engine search call over a query set."""

    def __init__(
        self,
        ids: List[List[int]],
        distances: List[List[float]],
        stage_stats: Dict[str, SearchStats],
        elapsed: float,
        batch_latencies: Sequence[float],
    ):
        """
        Initialize a SearchReport.

        Args:
            ids (list): Top-k ids per query, best first.
            distances (list): Matching squared distances.
            stage_stats (dict): Summed counters per stage name (fes, stage1, stage2, stage3).
            elapsed (float): Wall seconds over all batches.
            batch_latencies (list): Wall seconds of every batch, from its first stage to its last.
        """
        self.ids = ids
        self.distances = distances
        self.stage_stats = {stage: stage_stats.get(stage, SearchStats()) for stage in STAGES}
        self.elapsed = elapsed
        self.batch_latencies = list(batch_latencies)

    class Meta:
        """Meta class for SearchReport."""

        main_field = "query_count"

    @property
    def query_count(self) -> int:
        return len(self.ids)

    @property
    def qps(self) -> float:
        return self.query_count / self.elapsed if self.elapsed > 0 else 0.0

    def total(self) -> SearchStats:
        total = SearchStats()
        for stats in self.stage_stats.values():
            total = total + stats
        return total

    def per_query(self, stage: str, weighted: bool = False) -> float:
        stats = self.stage_stats[stage]
        value = stats.weighted_computations if weighted else stats.distance_computations
        return value / max(1, self.query_count)

    def latency_percentiles(self) -> Dict[str, float]:
        """Batch latency percentiles in milliseconds."""
        if not self.batch_latencies:
            return {"p50": 0.0, "p95": 0.0, "p99": 0.0}
        values = np.percentile(np.asarray(self.batch_latencies) * 1000.0, [50, 95, 99])
        return {"p50": float(values[0]), "p95": float(values[1]), "p99": float(values[2])}


class SweepRow(BaseReport):
    """One sweep point; computation counters are per-query means."""

    COLUMNS = [
        "ef",
        "k",
        "recall",
        "qps",
        "latency_p50_ms",
        "latency_p95_ms",
        "latency_p99_ms",
        "fes_computations",
        "stage1_computations",
        "stage1_weighted",
        "stage2_computations",
        "stage3_computations",
        "total_computations",
    ]

    def __init__(self, ef: int, k: int, recall: float, report: SearchReport):
        self.ef = ef
        self.k = k
        self.recall = recall
        self.qps = report.qps
        latency = report.latency_percentiles()
        self.latency_p50_ms = latency["p50"]
        self.latency_p95_ms = latency["p95"]
        self.latency_p99_ms = latency["p99"]
        self.fes_computations = report.per_query("fes")
        self.stage1_computations = report.per_query("stage1")
        self.stage1_weighted = report.per_query("stage1", weighted=True)
        self.stage2_computations = report.per_query("stage2")
        self.stage3_computations = report.per_query("stage3")
        self.total_computations = report.total().distance_computations / max(1, report.query_count)

    class Meta:
        """Meta class for SweepRow."""

        main_field = "ef"


def environment() -> Dict[str, object]:
    """Host metadata attached to timing reports."""
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "machine": platform.machine(),
        "cpus": os.cpu_count(),
        "threads_env": os.environ.get("STAGEDANN_THREADS"),
    }


class BenchReport(BaseReport):
    """Recall-throughput sweep of one engine configuration."""

    def __init__(self, label: str, rows: Sequence[SweepRow], env: Optional[dict] = None):
        """
        Initialize a BenchReport; rows are kept sorted by ef.

        Args:
            label (str): Name of the compared configuration (e.g. "pipeline", "baseline").
            rows (list): Sweep points.
            env (dict): Host metadata.
        """
        self.label = label
        self.rows = sorted(rows, key=lambda row: row.ef)
        self.environment = env if env is not None else environment()
        self.recall_monotone = all(a.recall <= b.recall for a, b in zip(self.rows, self.rows[1:]))
        if not self.recall_monotone:
            logger.warning(f"Recall of sweep {label!r} is not monotone in ef")

    class Meta:
        """Meta class for BenchReport."""

        main_field = "label"

    def curve(self, column: str) -> List[tuple]:
        """(recall, column value) pairs in ef order."""
        return [(row.recall, getattr(row, column)) for row in self.rows]


class SeededRow(BaseReport):
    """Computations needed to reach the recall target with tau known true neighbors in the seeds."""

    COLUMNS = ["tau_frac", "computations", "ratio_to_baseline", "reachable", "best_recall"]

    def __init__(self, tau_frac: float, computations: Optional[float], baseline: Optional[float], best_recall=None):
        self.tau_frac = tau_frac
        self.computations = computations
        self.reachable = computations is not None
        self.ratio_to_baseline = computations / baseline if computations is not None and baseline else None
        self.best_recall = best_recall

    class Meta:
        """Meta class for SeededRow."""

        main_field = "tau_frac"


class ThresholdReport(BaseReport):
    """Smallest tau/ef reaching the requested computation saving, or None."""

    COLUMNS = ["threshold", "speedup_target", "target_recall"]

    def __init__(self, threshold: Optional[float], speedup_target: float, target_recall: float):
        self.threshold = threshold
        self.speedup_target = speedup_target
        self.target_recall = target_recall

    class Meta:
        """Meta class for ThresholdReport."""

        main_field = "threshold"


class BreakdownRow(BaseReport):
    """Per-stage mean computations at the matched recall target."""

    COLUMNS = ["method", "fes", "stage1", "stage1_weighted", "stage2", "stage3", "stage2_plus_stage3"]

    def __init__(self, method: str, fes=0.0, stage1=0.0, stage1_weighted=0.0, stage2=0.0, stage3=0.0):
        self.method = method
        self.fes = fes
        self.stage1 = stage1
        self.stage1_weighted = stage1_weighted
        self.stage2 = stage2
        self.stage3 = stage3
        self.stage2_plus_stage3 = stage2 + stage3

    class Meta:
        """Meta class for BreakdownRow."""

        main_field = "method"


class AblationRow(BaseReport):
    """One configuration of the component ablation."""

    COLUMNS = ["scheme", "qps", "recall", "stage3_computations", "stage3_at_target", "slower"]

    def __init__(
        self,
        scheme: str,
        qps: float,
        recall: float,
        stage3_computations: float,
        stage3_at_target=None,
        slower: Optional[bool] = None,
    ):
        self.scheme = scheme
        self.qps = qps
        self.recall = recall
        self.stage3_computations = stage3_computations
        self.stage3_at_target = stage3_at_target
        # throughput below the scheme before it; None on the first row and the baseline
        self.slower = slower

    class Meta:
        """Meta class for AblationRow."""

        main_field = "scheme"


class SensitivityRow(BaseReport):
    """Pilot quality at one (sampling ratio, SVD ratio) pair."""

    COLUMNS = ["sampling_ratio", "svd_ratio", "stage3_at_target", "qps_at_target", "memory_fraction"]

    def __init__(self, sampling_ratio, svd_ratio, stage3_at_target, qps_at_target, memory_fraction):
        self.sampling_ratio = sampling_ratio
        self.svd_ratio = svd_ratio
        self.stage3_at_target = stage3_at_target
        self.qps_at_target = qps_at_target
        self.memory_fraction = memory_fraction

    class Meta:
        """Meta class for SensitivityRow."""

        main_field = "sampling_ratio"


class EntryQualityRow(BaseReport):
    """Recall of an entry-selection method against the true top neighbors."""

    COLUMNS = ["method", "k_entry", "entry_recall", "qps", "computations"]

    def __init__(self, method: str, k_entry: int, entry_recall: float, qps: float, computations: float):
        self.method = method
        self.k_entry = k_entry
        self.entry_recall = entry_recall
        self.qps = qps
        self.computations = computations

    class Meta:
        """Meta class for EntryQualityRow."""

        main_field = "method"


class BloomSafetyReport(BaseReport):
    """Final recall with exact versus pre-filled stage-1 visited tables."""

    COLUMNS = ["fill_fraction", "recall_exact", "recall_prefilled", "difference"]

    def __init__(self, fill_fraction: float, recall_exact: float, recall_prefilled: float):
        self.fill_fraction = fill_fraction
        self.recall_exact = recall_exact
        self.recall_prefilled = recall_prefilled
        self.difference = abs(recall_exact - recall_prefilled)

    class Meta:
        """Meta class for BloomSafetyReport."""

        main_field = "difference"


class FootprintReport(BaseReport):
    """Bytes of the pilot side against the full index."""

    COLUMNS = ["pilot_bytes", "full_bytes", "fraction"]

    def __init__(self, pilot_bytes: int, full_bytes: int):
        self.pilot_bytes = pilot_bytes
        self.full_bytes = full_bytes
        self.fraction = pilot_bytes / full_bytes if full_bytes else 0.0

    class Meta:
        """Meta class for FootprintReport."""

        main_field = "fraction"
