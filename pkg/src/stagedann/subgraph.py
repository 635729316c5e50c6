"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.

Sampled pilot subgraph over the original id space.

Non-member nodes keep their slot in the CSR with zero out-degree and no incoming edges, so any id
found on the subgraph indexes the full graph and full vectors directly.
"""

import time
import logging
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from .dataset_io import FlatVectorSet
from .file_utils import FileUtils
from .graph_index import CsrGraph, build_graph
from .svd_transform import SplitVectors
from .exceptions import ArtifactFormatException, DimensionMismatchException, ParameterException

logger = logging.getLogger(__name__)

PILOT_MAGIC = b"SANNPILT"
PILOT_VERSION = 1
SEED_BATCH_FRACTION = 0.01
DEFAULT_SAMPLING_RATIO = 0.25


class PilotSubgraph:
    """Subgraph CSR over the full id space, member flags and zero-filled primary vectors."""

    def __init__(
        self,
        graph: CsrGraph,
        member_flags: np.ndarray,
        sampling_ratio: float,
        primary_vectors: Optional[np.ndarray] = None,
    ):
        member_flags = np.asarray(member_flags, dtype=bool)
        if member_flags.shape[0] != graph.node_count:
            raise DimensionMismatchException(
                f"{member_flags.shape[0]} member flags for a graph of {graph.node_count} nodes"
            )
        self.graph = graph
        self.member_flags = member_flags
        self.sampling_ratio = float(sampling_ratio)
        self.primary_vectors = primary_vectors

    def __repr__(self) -> str:
        return f"<PilotSubgraph members={self.member_count}/{self.node_count} ratio={self.sampling_ratio}>"

    @property
    def node_count(self) -> int:
        return self.graph.node_count

    @property
    def member_count(self) -> int:
        return int(self.member_flags.sum())

    @property
    def primary_dim(self) -> int:
        return 0 if self.primary_vectors is None else int(self.primary_vectors.shape[1])

    def members(self) -> np.ndarray:
        return np.flatnonzero(self.member_flags)

    def default_entries(self, count: int = 16, seed: int = 0) -> List[int]:
        """First member plus `count - 1` fixed pseudo-random members."""
        members = self.members()
        if members.size == 0:
            raise ParameterException("Subgraph has no members")
        rng = np.random.Generator(np.random.PCG64(seed))
        extra = min(count - 1, members.size - 1)
        others = rng.choice(members[1:], size=extra, replace=False).tolist() if extra > 0 else []
        return [int(members[0])] + [int(i) for i in others]

    def validate(self) -> None:
        """Check zero out-degree of non-members and that no edge points to a non-member.

        Raises:
            ArtifactFormatException: on the first violation.
        """
        self.graph.validate()
        degrees = self.graph.degrees()
        if (degrees[~self.member_flags] != 0).any():
            raise ArtifactFormatException("A non-member node has outgoing edges")
        if self.graph.edge_count and not self.member_flags[self.graph.neighbor_ids].all():
            raise ArtifactFormatException("An edge points to a non-member node")
        if self.primary_vectors is not None and np.any(self.primary_vectors[~self.member_flags]):
            raise ArtifactFormatException("A non-member primary row is not zero")

    def memory_bytes(self) -> int:
        """Bytes of the pilot side: primary matrix (all node_count rows) plus subgraph CSR."""
        csr = self.graph.offsets.nbytes + self.graph.neighbor_ids.nbytes
        return self.node_count * self.primary_dim * 4 + csr


def full_index_bytes(vectors: FlatVectorSet, graph: CsrGraph) -> int:
    """Bytes of the full index: float32 vectors plus the full CSR."""
    return vectors.count * vectors.dim * 4 + graph.offsets.nbytes + graph.neighbor_ids.nbytes


def sample_nodes_traced(full: CsrGraph, ratio: float, seed: int = 0) -> Tuple[np.ndarray, List[int]]:
    """Like `sample_nodes`, also returning the seed nodes that ended up as members."""
    if not 0.0 < ratio <= 1.0:
        raise ParameterException(f"Sampling ratio {ratio} outside (0, 1]")
    n = full.node_count
    flags = np.zeros(n, dtype=bool)
    if ratio == 1.0:
        flags[:] = True
        return flags, list(range(n))
    target = max(1, int(round(ratio * n)))
    batch = max(1, int(n * SEED_BATCH_FRACTION))
    rng = np.random.Generator(np.random.PCG64(seed))
    seeds: List[int] = []
    count = 0
    while count < target:
        outside = np.flatnonzero(~flags)
        round_seeds = rng.choice(outside, size=min(batch, outside.size), replace=False)
        additions: List[int] = []
        pending = set()
        for node in round_seeds.tolist():
            if node not in pending:
                pending.add(node)
                additions.append(node)
        for node in round_seeds.tolist():
            for neighbor in full.neighbors(node).tolist():
                if not flags[neighbor] and neighbor not in pending:
                    pending.add(neighbor)
                    additions.append(neighbor)
        if count + len(additions) > target:
            keep = rng.choice(len(additions), size=target - count, replace=False)
            additions = [additions[i] for i in np.sort(keep)]
        flags[additions] = True
        seeds.extend(node for node in round_seeds.tolist() if flags[node])
        count += len(additions)
    return flags, seeds


def sample_nodes(full: CsrGraph, ratio: float, seed: int = 0) -> np.ndarray:
    """Select members by rounds of uniform seed sampling plus 1-hop neighbor expansion.

    Every round draws 1% of node_count seeds among non-members and adds them with their
    out-neighbors; the round that crosses ``ratio * node_count`` is truncated uniformly so the
    member count hits the target.
    """
    flags, _ = sample_nodes_traced(full, ratio, seed)
    logger.info(f"Sampled {int(flags.sum())} of {full.node_count} nodes (ratio {ratio})")
    return flags


def reconnect(
    full_vectors: FlatVectorSet, member_flags: np.ndarray, M: int, ef_construction: int, seed: int = 0
) -> CsrGraph:
    """Build a fresh graph over the member vectors and scatter it back into the full id space."""
    members = np.flatnonzero(member_flags)
    if members.size == 0:
        raise ParameterException("reconnect needs at least one member")
    started = time.perf_counter()
    local = build_graph(full_vectors.subset(members), M, ef_construction, seed)
    degrees = np.zeros(full_vectors.count, dtype=np.int64)
    degrees[members] = local.degrees()
    offsets = np.zeros(full_vectors.count + 1, dtype=np.int64)
    np.cumsum(degrees, out=offsets[1:])
    graph = CsrGraph(offsets, members[local.neighbor_ids], M)
    logger.info(f"Reconnected {members.size} members in {time.perf_counter() - started:.1f}s")
    return graph


def attach_primary(subgraph: PilotSubgraph, split: SplitVectors) -> PilotSubgraph:
    """Return the subgraph carrying member primary rows; non-member rows are zero.

    Raises:
        DimensionMismatchException: when split.count differs from node_count.
    """
    if split.count != subgraph.node_count:
        raise DimensionMismatchException(f"Split has {split.count} rows, subgraph {subgraph.node_count} nodes")
    primary = np.zeros((subgraph.node_count, split.primary_dim), dtype=np.float32)
    primary[subgraph.member_flags] = split.primary[subgraph.member_flags]
    primary.setflags(write=False)
    return PilotSubgraph(subgraph.graph, subgraph.member_flags, subgraph.sampling_ratio, primary)


def build_pilot_subgraph(
    vectors: FlatVectorSet,
    full: CsrGraph,
    split: SplitVectors,
    ratio: float = DEFAULT_SAMPLING_RATIO,
    M: int = 32,
    ef_construction: int = 200,
    seed: int = 0,
) -> PilotSubgraph:
    """Sample, reconnect and attach primary vectors in one call."""
    flags = sample_nodes(full, ratio, seed)
    graph = reconnect(vectors, flags, M, ef_construction, seed)
    return attach_primary(PilotSubgraph(graph, flags, ratio), split)


def save_bundle(path: Union[str, Path], subgraph: PilotSubgraph, entry_index=None) -> int:
    """Persist the pilot subgraph and, when given, its entry index in one versioned file."""
    if subgraph.primary_vectors is None:
        raise ParameterException("Attach primary vectors before saving the pilot bundle")
    arrays = [
        np.packbits(subgraph.member_flags, bitorder="little"),
        subgraph.graph.offsets,
        subgraph.graph.neighbor_ids,
        subgraph.primary_vectors,
    ]
    r = 0
    if entry_index is not None:
        r = entry_index.r
        arrays.extend(entry_index.arrays())
    return FileUtils(path).write_artifact(
        PILOT_MAGIC,
        PILOT_VERSION,
        "<QIIdI",
        (subgraph.node_count, subgraph.graph.max_degree, subgraph.primary_dim, subgraph.sampling_ratio, r),
        arrays,
    )


def load_bundle(path: Union[str, Path]):
    """Read a bundle written by `save_bundle`; returns (PilotSubgraph, EntryIndex or None)."""
    from .entry_selection import EntryIndex

    _, reader = FileUtils(path).open_artifact(PILOT_MAGIC, [PILOT_VERSION])
    node_count, max_degree, primary_dim, ratio, r = reader.unpack("<QIIdI")
    packed = reader.array(np.uint8, (node_count + 7) // 8)
    flags = np.unpackbits(packed, bitorder="little")[:node_count].astype(bool)
    graph = CsrGraph.read_body(reader, node_count, max_degree)
    primary = reader.array(np.float32, node_count * primary_dim).reshape(node_count, primary_dim)
    primary.setflags(write=False)
    subgraph = PilotSubgraph(graph, flags, ratio, primary)
    entry_index = EntryIndex.read_body(reader, r, primary) if r else None
    if not reader.at_end():
        raise ArtifactFormatException(f"Trailing bytes in pilot bundle {path}")
    logger.info(f"Loaded {subgraph} from {path}")
    return subgraph, entry_index
