"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.
"""

import sys
import logging
import argparse
from typing import List
from pathlib import Path

from stagedann import BenchConfig, SearchToggles, StageBudgets, StagedAnnException, StagedSearchEngine
from stagedann import bench
from stagedann.config import DEFAULT_CONFIG_PATH, PRESETS, SYNTHETIC_KINDS
from stagedann.dataset_io import (
    GroundTruth,
    brute_force_topk,
    load_ivecs,
    recall_at_k,
    synthetic_base_and_queries,
    trajectory_base_and_queries,
    write_fvecs,
    write_ivecs,
)
from stagedann.exceptions import AblationExpectationException
from stagedann.reports import SweepRow
from stagedann.svd_transform import rank_correlation
from .table import dict_to_pt, reports_to_pt

logger = logging.getLogger(__name__)

# CLI flag -> BenchConfig key
CONFIG_FLAGS = {
    "base": "base_path",
    "query": "query_path",
    "groundtruth": "groundtruth_path",
    "index": "index_path",
    "pilot": "pilot_path",
    "svd": "svd_path",
    "M": "M",
    "ef_construction": "ef_construction",
    "preset": "preset",
    "sampling_ratio": "sampling_ratio",
    "svd_ratio": "svd_ratio",
    "fes_r": "fes_r",
    "fes_iters": "fes_iters",
    "fes_e": "fes_e",
    "sweep": "sweep",
    "k": "k",
    "batch": "batch_size",
    "threads": "threads",
    "seed": "seed",
    "synthetic_n": "synthetic_n",
    "synthetic_dim": "synthetic_dim",
    "synthetic_queries": "synthetic_queries",
    "synthetic_kind": "synthetic_kind",
}

RANK_CORRELATION_RATIOS = (0.125, 0.25, 0.5, 1.0)


def _load_config(args: argparse.Namespace) -> BenchConfig:
    """Read the config file and apply the flags given on the command line."""
    overrides = {key: getattr(args, flag, None) for flag, key in CONFIG_FLAGS.items()}
    if getattr(args, "per_query_pilot", False):
        overrides["vectorized_pilot"] = False
    return BenchConfig(args.config).apply_overrides(**overrides).validate()


def _toggles(args: argparse.Namespace) -> SearchToggles:
    return SearchToggles(
        fes=not args.no_fes,
        stage1=not args.no_stage1,
        stage2=not args.no_stage2,
        pipelining=not args.no_pipelining,
        stage1_visited="exact" if args.exact_visited else "bloom",
    )


def _emit(report, args: argparse.Namespace) -> None:
    if getattr(args, "output", None):
        for path in bench.emit_report(report, args.output, plot=getattr(args, "plot", False)):
            print(f"Report written to: `{path}`")


def gen_data(args: argparse.Namespace):
    """Write a synthetic dataset (clustered blobs or a trajectory) with exact ground truth."""
    try:
        if args.kind == "trajectory":
            base, queries = trajectory_base_and_queries(args.n, args.queries, args.dim, args.seed)
        else:
            base, queries = synthetic_base_and_queries(args.n, args.queries, args.dim, args.clusters, args.seed)
        truth = brute_force_topk(base, queries, min(args.k, base.count))
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_fvecs(out / "base.fvecs", base)
        write_fvecs(out / "query.fvecs", queries)
        write_ivecs(out / "groundtruth.ivecs", truth.ids)
        print(f"Dataset written to: `{out}` ({base.count} base, {queries.count} queries, dim {base.dim})")
    except StagedAnnException as ex:
        print(f"Failed to generate data: {ex.message}")
        return 1


def build_index(args: argparse.Namespace):
    """Build the full proximity graph of the base vectors."""
    try:
        cfg = _load_config(args)
        if not cfg.index_path:
            print("Failed to build index: --index is required")
            return 1
        base, _ = bench.load_vectors(cfg)
        with StagedSearchEngine.build(base, cfg.M, cfg.ef_construction, cfg.threads, cfg.seed) as engine:
            engine.save(cfg.index_path)
            print(f"Index written to: `{cfg.index_path}` ({engine.graph.edge_count} edges)")
            print(f"Config written to: `{cfg.save_with_artifact(cfg.index_path)}`")
    except StagedAnnException as ex:
        print(f"Failed to build index: {ex.message}")
        return 1


def build_pilot(args: argparse.Namespace):
    """Fit the SVD, sample the pilot subgraph and train the entry cells."""
    try:
        cfg = _load_config(args)
        if not (cfg.index_path and cfg.pilot_path and cfg.svd_path):
            print("Failed to build pilot: --index, --pilot and --svd are required")
            return 1
        base, queries = bench.load_vectors(cfg)
        with StagedSearchEngine.load(base, cfg.index_path, threads=cfg.threads, seed=cfg.seed) as engine:
            bench.build_pilot(engine, cfg)
            engine.save(cfg.index_path, cfg.pilot_path, cfg.svd_path)
            correlation = rank_correlation(engine.svd, base, queries, RANK_CORRELATION_RATIOS, seed=cfg.seed)
            print(dict_to_pt({f"svd ratio {ratio}": value for ratio, value in correlation.items()}, align="l"))
            print(dict_to_pt(engine.footprint().to_dict(), align="l"))
            print(f"Pilot written to: `{cfg.pilot_path}`, SVD to: `{cfg.svd_path}`")
            print(f"Config written to: `{cfg.save_with_artifact(cfg.pilot_path)}`")
    except StagedAnnException as ex:
        print(f"Failed to build pilot: {ex.message}")
        return 1


def search(args: argparse.Namespace):
    """Search the queries with the staged pipeline and report per-stage counters."""
    try:
        cfg = _load_config(args)
        if not cfg.index_path:
            print("Failed to search: --index is required")
            return 1
        base, queries = bench.load_vectors(cfg)
        toggles = _toggles(args)
        pilot = (cfg.pilot_path, cfg.svd_path) if toggles.needs_pilot else (None, None)
        budgets = StageBudgets.from_ef3(args.ef3, cfg.k, cfg.refine_iters)
        options = dict(threads=cfg.threads, seed=cfg.seed, vectorized_pilot=cfg.vectorized_pilot)
        with StagedSearchEngine.load(base, cfg.index_path, *pilot, **options) as engine:
            report = engine.search(queries, cfg.k, budgets, toggles, cfg.batch_size)
        recall = None
        if cfg.groundtruth_path:
            recall = recall_at_k(report.ids, GroundTruth(load_ivecs(cfg.groundtruth_path)), cfg.k)
        row = SweepRow(args.ef3, cfg.k, recall, report)
        print(reports_to_pt([row], align="r"))
        _emit([row], args)
    except StagedAnnException as ex:
        print(f"Failed to search: {ex.message}")
        return 1


def sweep(args: argparse.Namespace):
    """Recall-throughput sweep over the configured ef3 values."""
    try:
        cfg = _load_config(args)
        workload = bench.load_workload(cfg)
        with bench.prepare_engine(cfg, workload) as engine:
            report = bench.run_sweep(cfg, _toggles(args), "pipeline", engine, workload)
        print(reports_to_pt(report.rows, align="r"))
        if not report.recall_monotone:
            print("Warning: recall is not monotone in ef")
        _emit(report, args)
    except StagedAnnException as ex:
        print(f"Failed to run sweep: {ex.message}")
        return 1


def breakdown(args: argparse.Namespace):
    """Per-stage computations of pipeline and baseline at the target recall."""
    try:
        rows = bench.run_stage_breakdown(_load_config(args))
        print(reports_to_pt(rows, align="r"))
        _emit(rows, args)
    except StagedAnnException as ex:
        print(f"Failed to run breakdown: {ex.message}")
        return 1


def seeded_exp(args: argparse.Namespace):
    """Computations to reach the target recall with tau true neighbors among the seeds."""
    try:
        rows = bench.run_seeded_experiment(_load_config(args), args.tau_fracs)
        print(reports_to_pt(rows, align="r"))
        _emit(rows, args)
    except StagedAnnException as ex:
        print(f"Failed to run seeded experiment: {ex.message}")
        return 1


def threshold_exp(args: argparse.Namespace):
    """Smallest tau/ef giving the requested computation saving."""
    try:
        report = bench.run_threshold_experiment(_load_config(args), args.speedup)
        print(reports_to_pt([report], align="r"))
        _emit([report], args)
    except StagedAnnException as ex:
        print(f"Failed to run threshold experiment: {ex.message}")
        return 1


def ablation(args: argparse.Namespace):
    """Throughput while removing pipeline components one after the other."""
    try:
        rows = bench.run_ablation(
            _load_config(args), matched_recall=not args.no_matched, strict=args.strict, reruns=args.reruns
        )
        print(reports_to_pt(rows, align="r"))
        _emit(rows, args)
    except AblationExpectationException as ex:
        print(f"Failed to run ablation: {ex.message}")
        for failure in ex.failures:
            print(f"  {failure}")
        return 1
    except StagedAnnException as ex:
        print(f"Failed to run ablation: {ex.message}")
        return 1


def sensitivity(args: argparse.Namespace):
    """Pilot quality across sampling and SVD ratios."""
    try:
        rows = bench.run_sensitivity(_load_config(args), args.sampling_ratios, args.svd_ratios)
        print(reports_to_pt(rows, align="r"))
        _emit(rows, args)
    except StagedAnnException as ex:
        print(f"Failed to run sensitivity: {ex.message}")
        return 1


def fes_exp(args: argparse.Namespace):
    """Entry recall of the entry cells against a 2-hop traversal."""
    try:
        rows = bench.run_fes_analysis(_load_config(args), args.k_entry)
        print(reports_to_pt(rows, align="r"))
        _emit(rows, args)
    except StagedAnnException as ex:
        print(f"Failed to run entry analysis: {ex.message}")
        return 1


def bloom_safety(args: argparse.Namespace):
    """Final recall with exact versus pre-filled stage-1 visited tables."""
    try:
        report = bench.run_bloom_safety(_load_config(args), args.fill)
        print(reports_to_pt([report], align="r"))
        _emit([report], args)
    except StagedAnnException as ex:
        print(f"Failed to run bloom safety: {ex.message}")
        return 1


def footprint(args: argparse.Namespace):
    """Memory of the pilot side as a fraction of the full index."""
    try:
        cfg = _load_config(args)
        if not (cfg.index_path and cfg.pilot_path and cfg.svd_path):
            print("Failed to compute footprint: --index, --pilot and --svd are required")
            return 1
        base, _ = bench.load_vectors(cfg)
        with StagedSearchEngine.load(base, cfg.index_path, cfg.pilot_path, cfg.svd_path) as engine:
            print(dict_to_pt(engine.footprint().to_dict(), align="l"))
    except StagedAnnException as ex:
        print(f"Failed to compute footprint: {ex.message}")
        return 1


def _add_config_args(parser: argparse.ArgumentParser):
    """Flags overriding the config file."""
    parser.add_argument("--base", type=str, help="Base vectors (fvecs); synthetic data when omitted")
    parser.add_argument("--query", type=str, help="Query vectors (fvecs)")
    parser.add_argument("--groundtruth", type=str, help="Ground truth ids (ivecs)")
    parser.add_argument("--index", type=str, help="Full graph file")
    parser.add_argument("--pilot", type=str, help="Pilot bundle file (subgraph and entry cells)")
    parser.add_argument("--svd", type=str, help="SVD model file")
    parser.add_argument("--M", type=int, help="Maximum out-degree")
    parser.add_argument("--ef-construction", type=int, help="Queue size while building graphs")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="Named sampling / SVD ratio preset")
    parser.add_argument("--sampling-ratio", type=float, help="Fraction of nodes kept in the pilot subgraph")
    parser.add_argument("--svd-ratio", type=float, help="Fraction of dimensions kept as primary")
    parser.add_argument("--fes-r", type=int, help="Number of entry cells")
    parser.add_argument("--fes-iters", type=int, help="k-means iterations of the entry cells")
    parser.add_argument("--fes-e", type=int, help="Entries selected per query (ef1 by default)")
    parser.add_argument("--sweep", type=int, nargs="+", help="ef3 values of the sweep")
    parser.add_argument("--k", type=int, help="Neighbors per query")
    parser.add_argument("--batch", type=int, help="Queries per batch")
    parser.add_argument("--threads", type=int, help="Worker threads")
    parser.add_argument("--seed", type=int, help="Seed of every random choice")
    parser.add_argument("--synthetic-n", type=int, help="Synthetic base size")
    parser.add_argument("--synthetic-dim", type=int, help="Synthetic dimension")
    parser.add_argument("--synthetic-queries", type=int, help="Synthetic query count")
    parser.add_argument("--synthetic-kind", choices=SYNTHETIC_KINDS, help="Synthetic data layout")


def _add_toggle_args(parser: argparse.ArgumentParser):
    parser.add_argument("--no-fes", action="store_true", help="Start the pilot from default member entries")
    parser.add_argument("--no-stage1", action="store_true", help="Skip the pilot traversal")
    parser.add_argument("--no-stage2", action="store_true", help="Skip the residual refinement")
    parser.add_argument("--no-pipelining", action="store_true", help="Run batches strictly one after the other")
    parser.add_argument("--exact-visited", action="store_true", help="Exact visited sets in the pilot traversal")
    parser.add_argument(
        "--per-query-pilot", action="store_true", help="Run the pilot traversal query by query instead of in lockstep"
    )


def _add_output_args(parser: argparse.ArgumentParser, plot: bool = False):
    parser.add_argument("--output", type=str, help="CSV report file")
    if plot:
        parser.add_argument("--plot", action="store_true", help="Also write a PNG recall-throughput curve")


def parse_args(argv: List[str]):
    """Parse command-line arguments for the stagedann CLI."""
    parser = argparse.ArgumentParser(prog="sann")
    parser.add_argument("--config", type=Path, default=DEFAULT_CONFIG_PATH, help="Path to the configuration file")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="Increase verbosity level")

    subparsers = parser.add_subparsers(dest="command")

    gen_parser = subparsers.add_parser("gen-data", help=gen_data.__doc__)
    gen_parser.set_defaults(command=gen_data)
    gen_parser.add_argument("--out-dir", type=str, required=True, help="Output directory")
    gen_parser.add_argument("--n", type=int, default=100_000, help="Base vectors")
    gen_parser.add_argument("--dim", type=int, default=128, help="Dimension")
    gen_parser.add_argument("--clusters", type=int, default=64, help="Mixture components")
    gen_parser.add_argument("--queries", type=int, default=1000, help="Query vectors")
    gen_parser.add_argument("--k", type=int, default=100, help="Ground truth neighbors per query")
    gen_parser.add_argument("--seed", type=int, default=0, help="Seed")
    gen_parser.add_argument("--kind", choices=SYNTHETIC_KINDS, default="blobs", help="Data layout")

    for name, fn, toggles, output in (
        ("build-index", build_index, False, None),
        ("build-pilot", build_pilot, False, None),
        ("search", search, True, False),
        ("sweep", sweep, True, True),
        ("breakdown", breakdown, False, False),
        ("seeded-exp", seeded_exp, False, False),
        ("threshold-exp", threshold_exp, False, False),
        ("ablation", ablation, False, False),
        ("sensitivity", sensitivity, False, False),
        ("fes-exp", fes_exp, False, False),
        ("bloom-safety", bloom_safety, False, False),
        ("footprint", footprint, False, None),
    ):
        sub = subparsers.add_parser(name, help=fn.__doc__)
        sub.set_defaults(command=fn)
        _add_config_args(sub)
        if toggles:
            _add_toggle_args(sub)
        if output is not None:
            _add_output_args(sub, plot=output)
        if name == "search":
            sub.add_argument("--ef3", type=int, default=64, help="Final queue size")
        elif name == "seeded-exp":
            sub.add_argument("--tau-fracs", type=float, nargs="+", default=[0.0, 0.125, 0.25], help="tau/ef values")
        elif name == "threshold-exp":
            sub.add_argument("--speedup", type=float, default=2.0, help="Requested computation saving")
        elif name == "ablation":
            sub.add_argument("--no-matched", action="store_true", help="Skip the matched-recall sweeps")
            sub.add_argument("--strict", action="store_true", help="Fail when a removal does not cost throughput")
            sub.add_argument("--reruns", type=int, default=1, help="Repeats of a table missing its ordering")
        elif name == "sensitivity":
            sub.add_argument("--sampling-ratios", type=float, nargs="+", default=[0.1, 0.25, 0.5], help="Ratios")
            sub.add_argument("--svd-ratios", type=float, nargs="+", default=[0.125, 0.25, 0.5], help="Ratios")
        elif name == "fes-exp":
            sub.add_argument("--k-entry", type=int, default=100, help="Entries compared with the true neighbors")
        elif name == "bloom-safety":
            sub.add_argument("--fill", type=float, default=0.5, help="Fraction of filter bits set before the search")
    return parser.parse_args(argv)


def main():
    """Parse command line arguments and executes the specified command."""
    argv = sys.argv
    args = parse_args(argv[1:])
    logging.basicConfig(
        level=logging.WARNING - (args.verbose * 10),
        format="%(asctime)s %(message)s",
    )
    if args.command:
        try:
            return args.command(args) or 0
        except OSError as ex:
            print(f"Failed to access {ex.filename}: {ex.strerror}")
            return 1
    else:
        print("No command given, use --help for usage")
        return 1


if __name__ == "__main__":
    sys.exit(main())
