"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.

Experiment harness: recall-throughput sweeps, stage breakdowns, seeded-search and threshold
experiments, ablations and report emission.

Computation counters are deterministic for fixed seeds and batch composition; timings are not.
"""

import csv
import time
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from .config import BenchConfig
from .dataset_io import (
    FlatVectorSet,
    GroundTruth,
    brute_force_topk,
    load_fvecs,
    load_ivecs,
    recall_at_k,
    synthetic_base_and_queries,
    trajectory_base_and_queries,
)
from .engine import SearchToggles, StagedSearchEngine, ablation_schemes
from .entry_selection import traversal_entries
from .exceptions import AblationExpectationException, ParameterException, UnreachableRecallException
from .file_utils import FileUtils
from .graph_index import (
    THRESHOLD_GRID,
    VectorDistance,
    computations_to_recall,
    interpolate_at_recall,
    measure_acceleration_threshold,
    search_batch,
)
from .reports import (
    AblationRow,
    BenchReport,
    BloomSafetyReport,
    BreakdownRow,
    EntryQualityRow,
    SeededRow,
    SensitivityRow,
    SweepRow,
    ThresholdReport,
)
from .reports_base import BaseReport
from .staged_search import StageBudgets

logger = logging.getLogger(__name__)

REPORT_HEADER = "# stagedann-report v1"
DEFAULT_TAU_FRACS = (0.0, 1 / 8, 1 / 4)


class Workload:
    """Base vectors, queries and their ground truth."""

    def __init__(self, base: FlatVectorSet, queries: FlatVectorSet, truth: GroundTruth):
        if truth.count != queries.count:
            raise ParameterException(f"Ground truth has {truth.count} rows for {queries.count} queries")
        self.base = base
        self.queries = queries
        self.truth = truth

    def __repr__(self) -> str:
        return f"<Workload base={self.base.count} queries={self.queries.count} truth_k={self.truth.k}>"


def load_vectors(config: BenchConfig) -> Tuple[FlatVectorSet, FlatVectorSet]:
    """Base and query vectors from the configured fvecs files, or the synthetic set."""
    if config.base_path:
        return load_fvecs(config.base_path), load_fvecs(config.query_path)
    if config.synthetic_kind == "trajectory":
        return trajectory_base_and_queries(
            config.synthetic_n, config.synthetic_queries, config.synthetic_dim, config.seed, config.synthetic_noise
        )
    return synthetic_base_and_queries(
        config.synthetic_n, config.synthetic_queries, config.synthetic_dim, config.synthetic_clusters, config.seed
    )


def load_workload(config: BenchConfig, truth_k: Optional[int] = None) -> Workload:
    """Load the vectors and ensure ground truth of width at least `truth_k` (config.k by default)."""
    truth_k = max(truth_k or config.k, config.k)
    base, queries = load_vectors(config)
    truth = None
    if config.groundtruth_path:
        truth = GroundTruth(load_ivecs(config.groundtruth_path))
        if truth.k < truth_k:
            logger.warning(f"Ground truth file holds {truth.k} neighbors, {truth_k} needed: recomputing")
            truth = None
    if truth is None:
        started = time.perf_counter()
        truth = brute_force_topk(base, queries, min(truth_k, base.count))
        logger.info(f"Computed ground truth top-{truth.k} in {time.perf_counter() - started:.1f}s")
    return Workload(base, queries, truth)


def prepare_engine(config: BenchConfig, workload: Workload) -> StagedSearchEngine:
    """Load the cached artifacts named by the config, or build (and cache) them."""
    paths = [config.index_path, config.pilot_path, config.svd_path]
    options = dict(threads=config.threads, seed=config.seed, vectorized_pilot=config.vectorized_pilot)
    if all(paths) and all(FileUtils(p).exists() for p in paths):
        return StagedSearchEngine.load(workload.base, *paths, **options)
    if config.index_path and FileUtils(config.index_path).exists():
        engine = StagedSearchEngine.load(workload.base, config.index_path, **options)
    else:
        engine = StagedSearchEngine.build(workload.base, config.M, config.ef_construction, **options)
    build_pilot(engine, config)
    if config.index_path:
        engine.save(config.index_path, config.pilot_path, config.svd_path)
    return engine


def build_pilot(engine: StagedSearchEngine, config: BenchConfig, sampling_ratio=None, svd_ratio=None) -> None:
    engine.build_pilot(
        sampling_ratio or config.sampling_ratio,
        svd_ratio or config.svd_ratio,
        config.fes_r,
        config.fes_iters,
        config.M,
        config.ef_construction,
        config.svd_sample_cap,
    )


def _toggles(config: BenchConfig, toggles: Optional[SearchToggles]) -> SearchToggles:
    toggles = toggles or SearchToggles()
    if toggles.fes_e is None and config.fes_e:
        toggles.fes_e = config.fes_e
    return toggles


def measure_point(
    engine: StagedSearchEngine, workload: Workload, config: BenchConfig, ef3: int, toggles: SearchToggles
) -> SweepRow:
    """Warm up, then search every query once at `ef3` and score the result."""
    budgets = StageBudgets.from_ef3(ef3, config.k, config.refine_iters)
    warmup = workload.queries.data[: config.batch_size]
    for _ in range(config.warmup_batches):
        engine.search(warmup, config.k, budgets, toggles, config.batch_size)
    report = engine.search(workload.queries, config.k, budgets, toggles, config.batch_size)
    return SweepRow(ef3, config.k, recall_at_k(report.ids, workload.truth, config.k), report)


def run_sweep(
    config: BenchConfig,
    toggles: Optional[SearchToggles] = None,
    label: str = "pipeline",
    engine: Optional[StagedSearchEngine] = None,
    workload: Optional[Workload] = None,
) -> BenchReport:
    """Recall, throughput and per-stage counters at every ef3 of the configured sweep."""
    config.validate()
    workload = workload or load_workload(config)
    engine = engine or prepare_engine(config, workload)
    toggles = _toggles(config, toggles)
    rows = []
    for ef3 in sorted(set(config.sweep)):
        if ef3 < config.k:
            logger.warning(f"Skipping sweep point ef3={ef3} below k={config.k}")
            continue
        row = measure_point(engine, workload, config, ef3, toggles)
        logger.info(f"{label} ef3={ef3}: recall {row.recall:.4f}, {row.qps:.0f} qps")
        rows.append(row)
    return BenchReport(label, rows)


def matched(report: BenchReport, column: str, target: float) -> Optional[float]:
    """Value of `column` interpolated at the target recall, None when the sweep never reaches it."""
    try:
        return interpolate_at_recall(report.curve(column), target)
    except UnreachableRecallException as ex:
        logger.warning(f"{report.label}: {ex.message}")
        return None


def stage_breakdown(pipeline: BenchReport, baseline: BenchReport, target: float) -> List[BreakdownRow]:
    """Per-stage computations of both curves at the matched target recall.

    Raises:
        UnreachableRecallException: when either curve misses the target.
    """
    rows = [BreakdownRow("baseline", stage3=interpolate_at_recall(baseline.curve("total_computations"), target))]
    values = {
        column: interpolate_at_recall(pipeline.curve(f"{column}_computations"), target)
        for column in ("fes", "stage1", "stage2", "stage3")
    }
    values["stage1_weighted"] = interpolate_at_recall(pipeline.curve("stage1_weighted"), target)
    rows.append(BreakdownRow("pipeline", **values))
    return rows


def run_stage_breakdown(config: BenchConfig) -> List[BreakdownRow]:
    """Sweep the pipeline and the baseline on one engine and compare stage counters at the target."""
    config.validate()
    workload = load_workload(config)
    with prepare_engine(config, workload) as engine:
        pipeline = run_sweep(config, None, "pipeline", engine, workload)
        baseline = run_sweep(config, SearchToggles.baseline(), "baseline", engine, workload)
    return stage_breakdown(pipeline, baseline, config.target_recall)


def run_seeded_experiment(config: BenchConfig, tau_fracs: Sequence[float] = DEFAULT_TAU_FRACS) -> List[SeededRow]:
    """Mean computations to reach the target recall when tau of the ef seeds are true neighbors.

    The tau/ef = 0 row is the random-seed baseline; unreachable rows carry no computations.
    """
    config.validate()
    workload = load_workload(config, max(config.seeded_efs))
    with StagedSearchEngine.build(workload.base, config.M, config.ef_construction, 1, config.seed) as engine:
        graph = engine.graph
    source = VectorDistance(workload.base)
    rows: List[SeededRow] = []
    baseline: Optional[float] = None
    for frac in sorted(set([0.0] + list(tau_fracs))):
        try:
            cost: Optional[float] = computations_to_recall(
                graph,
                source,
                workload.queries.data,
                workload.truth,
                config.seeded_efs,
                frac,
                config.k,
                config.target_recall,
                config.seed,
            )
            best = None
        except UnreachableRecallException as ex:
            cost, best = None, ex.best_recall
        if frac == 0.0:
            baseline = cost
        rows.append(SeededRow(frac, cost, baseline, best))
        logger.info(f"tau/ef={frac:.4f}: {cost} computations per query")
    return rows


def run_threshold_experiment(config: BenchConfig, speedup_target: float = 2.0) -> ThresholdReport:
    """Smallest tau/ef on the 1/16 grid saving `speedup_target` times the baseline computations."""
    config.validate()
    workload = load_workload(config, max(config.seeded_efs))
    with StagedSearchEngine.build(workload.base, config.M, config.ef_construction, 1, config.seed) as engine:
        threshold = measure_acceleration_threshold(
            engine.graph,
            workload.base,
            workload.queries,
            workload.truth,
            config.seeded_efs,
            speedup_target,
            config.k,
            config.target_recall,
            THRESHOLD_GRID,
            config.seed,
        )
    return ThresholdReport(threshold, speedup_target, config.target_recall)


def _baseline_row(engine: StagedSearchEngine, workload: Workload, config: BenchConfig) -> AblationRow:
    """Plain per-query greedy search through the graph module, outside the engine."""
    ef = max(config.ablation_ef3, config.k)
    entries = [engine.default_entries] * workload.queries.count
    source = VectorDistance(workload.base)
    search_batch(engine.graph, source, workload.queries.data[: config.batch_size], entries, ef, config.k)
    started = time.perf_counter()
    ids, stats = search_batch(engine.graph, source, workload.queries.data, entries, ef, config.k)
    elapsed = time.perf_counter() - started
    return AblationRow(
        "baseline",
        workload.queries.count / elapsed if elapsed > 0 else 0.0,
        recall_at_k(ids, workload.truth, config.k),
        stats.distance_computations / max(1, workload.queries.count),
    )


def ablation_failures(rows: Sequence[AblationRow], counters_only: bool = False) -> List[str]:
    """Expectations the ablation table misses, one description each.

    Every removal before the closing baseline row must lower throughput (skipped with
    `counters_only`), and removing the pilot must raise stage-3 computations, compared at the
    target recall when both rows were swept.
    """
    failures = []
    schemes = [row for row in rows if row.scheme != "baseline"]
    if not counters_only:
        for previous, current in zip(schemes, schemes[1:]):
            if current.qps >= previous.qps:
                failures.append(
                    f"Removing {current.scheme} did not reduce throughput ({previous.qps:.0f} -> {current.qps:.0f} qps)"
                )
    by_scheme = {row.scheme: row for row in rows}
    with_pilot, without_pilot = by_scheme.get("-stage2"), by_scheme.get("-stage1")
    if with_pilot is not None and without_pilot is not None:
        column = "stage3_computations"
        if with_pilot.stage3_at_target is not None and without_pilot.stage3_at_target is not None:
            column = "stage3_at_target"
        before, after = getattr(with_pilot, column), getattr(without_pilot, column)
        if after <= before:
            failures.append(f"Removing stage1 did not raise {column} ({before:.1f} -> {after:.1f})")
    return failures


def _ablation_rows(engine: StagedSearchEngine, workload: Workload, config: BenchConfig, matched_recall: bool):
    rows: List[AblationRow] = []
    for name, toggles in ablation_schemes(_toggles(config, None)):
        point = measure_point(engine, workload, config, config.ablation_ef3, toggles)
        at_target = None
        if matched_recall:
            sweep = run_sweep(config, toggles, name, engine, workload)
            at_target = matched(sweep, "stage3_computations", config.target_recall)
        rows.append(AblationRow(name, point.qps, point.recall, point.stage3_computations, at_target))
        logger.info(f"Ablation {name}: {point.qps:.0f} qps, recall {point.recall:.4f}")
    for previous, current in zip(rows, rows[1:]):
        current.slower = current.qps < previous.qps
    rows.append(_baseline_row(engine, workload, config))
    return rows


def run_ablation(
    config: BenchConfig, matched_recall: bool = True, strict: bool = False, reruns: int = 1
) -> List[AblationRow]:
    """Remove pipelining, entry selection, refinement and the pilot one after the other.

    Rows: full, -pipelining, -fes, -stage2, -stage1 (every component removed), baseline.
    With `matched_recall` every scheme is also swept to report stage-3 computations at the
    target recall. A table missing an expectation of `ablation_failures` is measured again up to
    `reruns` times, timings being host noise.

    Raises:
        AblationExpectationException: with `strict`, when the last measured table still misses
            an expectation.
    """
    config.validate()
    workload = load_workload(config)
    with prepare_engine(config, workload) as engine:
        for attempt in range(max(0, reruns) + 1):
            rows = _ablation_rows(engine, workload, config, matched_recall)
            failures = ablation_failures(rows)
            if not failures:
                break
            for failure in failures:
                logger.warning(f"Ablation attempt {attempt + 1}: {failure}")
    if failures and strict:
        raise AblationExpectationException(f"Ablation missed {len(failures)} expectation(s)", failures)
    return rows


def run_sensitivity(
    config: BenchConfig, sampling_ratios: Iterable[float], svd_ratios: Iterable[float]
) -> List[SensitivityRow]:
    """Rebuild the pilot side at every (sampling, SVD) ratio pair over one full graph."""
    config.validate()
    workload = load_workload(config)
    rows: List[SensitivityRow] = []
    svd_ratios = list(svd_ratios)
    with StagedSearchEngine.build(
        workload.base, config.M, config.ef_construction, config.threads, config.seed
    ) as engine:
        for sampling in sampling_ratios:
            for svd in svd_ratios:
                build_pilot(engine, config, sampling, svd)
                report = run_sweep(config, None, f"s={sampling},v={svd}", engine, workload)
                rows.append(
                    SensitivityRow(
                        sampling,
                        svd,
                        matched(report, "stage3_computations", config.target_recall),
                        matched(report, "qps", config.target_recall),
                        engine.footprint().fraction,
                    )
                )
    return rows


def _entry_recall(found: Sequence[Sequence[int]], truth: GroundTruth, k_entry: int) -> float:
    hits = sum(len(set(int(i) for i in ids) & set(truth.ids[row, :k_entry].tolist())) for row, ids in enumerate(found))
    return hits / (k_entry * max(1, truth.count))


def run_fes_analysis(config: BenchConfig, k_entry: int = 100) -> List[EntryQualityRow]:
    """Recall of the top-k_entry entries against the true neighbors: entry cells versus a 2-hop
    traversal of the subgraph from the default member entries."""
    config.validate()
    workload = load_workload(config, k_entry)
    rows: List[EntryQualityRow] = []
    with prepare_engine(config, workload) as engine:
        started = time.perf_counter()
        found, computations = engine.entry_candidates(workload.queries, k_entry)
        elapsed = time.perf_counter() - started
        rows.append(_entry_row("fes", k_entry, found, computations, elapsed, workload))

        primary = engine.primary_queries(workload.queries)
        starts = engine.member_entries()
        started = time.perf_counter()
        results = [
            traversal_entries(engine.subgraph.graph, engine.subgraph.primary_vectors, q, starts, k_entry)
            for q in primary
        ]
        elapsed = time.perf_counter() - started
        found = [ids.tolist() for ids, _ in results]
        rows.append(_entry_row("2-hop", k_entry, found, sum(c for _, c in results), elapsed, workload))
    return rows


def _entry_row(method, k_entry, found, computations, elapsed, workload: Workload) -> EntryQualityRow:
    count = workload.queries.count
    return EntryQualityRow(
        method,
        k_entry,
        _entry_recall(found, workload.truth, k_entry),
        count / elapsed if elapsed > 0 else 0.0,
        computations / max(1, count),
    )


def run_bloom_safety(config: BenchConfig, fill_fraction: float = 0.5) -> BloomSafetyReport:
    """Final recall with exact stage-1 visited sets against blooms with random bits pre-set."""
    config.validate()
    workload = load_workload(config)
    budgets = StageBudgets.from_ef3(config.ablation_ef3, config.k, config.refine_iters)
    with prepare_engine(config, workload) as engine:
        recalls = []
        for toggles in (
            _toggles(config, SearchToggles(stage1_visited="exact")),
            _toggles(config, SearchToggles(bloom_prefill=fill_fraction)),
        ):
            report = engine.search(workload.queries, config.k, budgets, toggles, config.batch_size)
            recalls.append(recall_at_k(report.ids, workload.truth, config.k))
    return BloomSafetyReport(fill_fraction, recalls[0], recalls[1])


ReportLike = Union[BenchReport, BaseReport, Sequence[BaseReport]]


def _rows(report: ReportLike) -> List[BaseReport]:
    if isinstance(report, BenchReport):
        return list(report.rows)
    if isinstance(report, BaseReport):
        return [report]
    return list(report)


def _plot(rows: List[BaseReport], path: Path, title: str) -> Optional[Path]:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        logger.warning("matplotlib is not installed; skipping plot")
        return None
    points = [(row.recall, row.qps) for row in rows if hasattr(row, "recall") and hasattr(row, "qps")]
    if not points:
        logger.warning(f"Nothing to plot in {path}")
        return None
    fig = plt.figure()
    ax = fig.add_subplot(111)
    ax.plot([p[0] for p in points], [p[1] for p in points], marker="o")
    ax.set_xlabel("recall@k")
    ax.set_ylabel("queries / second")
    ax.set_title(title)
    fig.tight_layout()
    image = path.with_suffix(".png")
    fig.savefig(image, dpi=150)
    plt.close(fig)
    return image


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(round(value, 6))
    return str(value)


def emit_report(report: ReportLike, path: Union[str, Path], plot: bool = False) -> List[Path]:
    """Write the rows as CSV under a versioned header line, and a PNG curve when asked.

    Returns the written paths.

    Raises:
        ParameterException: when there is nothing to write or the rows mix schemas.
    """
    rows = _rows(report)
    if not rows:
        raise ParameterException("No report rows to emit")
    columns = rows[0].COLUMNS
    if not columns or any(row.COLUMNS != columns for row in rows):
        raise ParameterException("Report rows must share one column schema")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        handle.write(REPORT_HEADER + "\n")
        writer = csv.writer(handle)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(value) for value in row.to_row()])
    written = [path]
    if plot:
        image = _plot(rows, path, getattr(report, "label", path.stem))
        if image is not None:
            written.append(image)
    logger.info(f"Wrote {len(rows)} rows to {path}")
    return written


def _parse(value: str):
    if value == "":
        return None
    if value in ("True", "False"):
        return value == "True"
    for kind in (int, float):
        try:
            return kind(value)
        except ValueError:
            pass
    return value


def read_report(path: Union[str, Path]) -> Tuple[List[str], List[dict]]:
    """Parse a CSV written by `emit_report` into its columns and typed rows.

    Raises:
        ParameterException: when the versioned header line is missing.
    """
    with Path(path).open(newline="") as handle:
        header = handle.readline().rstrip("\n")
        if header != REPORT_HEADER:
            raise ParameterException(f"{path} is not a stagedann report (header {header!r})")
        reader = csv.DictReader(handle)
        rows = [{key: _parse(value) for key, value in row.items()} for row in reader]
        return list(reader.fieldnames or []), rows

