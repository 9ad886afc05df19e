from __future__ import annotations

import itertools
import json
import logging
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import sparse

from .errors import ParseError, SchemaError, ShapeError, ValidationError
from .ingest import ModuleRecord, OwnershipRecord, RawDependencyEdge, VersionDataset

logger = logging.getLogger(__name__)

GRAPH_FORMAT_VERSION = 1


class GraphView(str, Enum):
    CDG = "CDG"
    DDG = "DDG"
    MSDG = "MSDG"

    @classmethod
    def parse(cls, value: str | GraphView) -> GraphView:
        if isinstance(value, GraphView):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValidationError(f"unknown graph view '{value}' (expected cdg, ddg or msdg)") from None


class Direction(str, Enum):
    BACKWARD = "backward"  # incoming neighbours
    FORWARD = "forward"  # outgoing neighbours


# Row-per-node feature matrix, node order = DependencyGraph.node_ids
NodeFeatureMatrix = np.ndarray


@dataclass(frozen=True)
class DependencyGraph:
    """
    Directed weighted graph over file nodes.

    `edges` maps (src_index, dst_index) to a positive weight. Forward and
    backward neighbour indexes are derived from it on construction and kept
    sorted by neighbour index, so every traversal has a fixed order.

    Attributes:
        view: Which dependency view the graph encodes.
        node_ids: File ids, in node-index order.
        edges: Read-only mapping (src, dst) -> weight.
    """
    view: GraphView
    node_ids: tuple[str, ...]
    edges: Mapping[tuple[int, int], float]
    _forward: tuple = field(default=(), init=False, repr=False, compare=False)
    _backward: tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "view", GraphView.parse(self.view))
        object.__setattr__(self, "node_ids", tuple(self.node_ids))
        n = len(self.node_ids)
        if len(set(self.node_ids)) != n:
            raise ValidationError("graph node ids must be unique")

        clean: dict[tuple[int, int], float] = {}
        fwd: list[list[int]] = [[] for _ in range(n)]
        bwd: list[list[int]] = [[] for _ in range(n)]
        for (s, d), w in sorted(self.edges.items()):
            s, d, w = int(s), int(d), float(w)
            if not (0 <= s < n and 0 <= d < n):
                raise ValidationError(f"edge ({s}, {d}) refers to a node outside 0..{n - 1}")
            if s == d:
                raise ValidationError(f"self-loop on node '{self.node_ids[s]}'")
            if not w > 0 or not np.isfinite(w):
                raise ValidationError(f"edge ({s}, {d}) has non-positive weight {w}")
            clean[(s, d)] = w
            fwd[s].append(d)
            bwd[d].append(s)

        # shared developers link both ways; weights may differ once rows are normalized
        if self.view is GraphView.DDG:
            for s, d in clean:
                if (d, s) not in clean:
                    raise ValidationError(
                        f"DDG edge {self.node_ids[s]}->{self.node_ids[d]} has no reverse edge"
                    )

        object.__setattr__(self, "edges", MappingProxyType(clean))
        object.__setattr__(self, "_forward", tuple(tuple(x) for x in fwd))
        object.__setattr__(self, "_backward", tuple(tuple(x) for x in bwd))

    def __reduce__(self):
        # MappingProxyType does not pickle
        return (DependencyGraph, (self.view, self.node_ids, dict(self.edges)))

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def successors(self, v: int) -> tuple[int, ...]:
        return self._forward[v]

    def predecessors(self, v: int) -> tuple[int, ...]:
        return self._backward[v]

    def weight(self, src: int, dst: int) -> float:
        return self.edges.get((src, dst), 0.0)

    def out_weight_sum(self, v: int) -> float:
        return float(sum(self.edges[(v, u)] for u in self._forward[v]))

    def weights_by_id(self) -> dict[tuple[str, str], float]:
        """Edge weights keyed by (src file id, dst file id)."""
        ids = self.node_ids
        return {(ids[s], ids[d]): w for (s, d), w in self.edges.items()}

    def adjacency(self, direction: Direction | str = Direction.FORWARD, weighted: bool = False) -> sparse.csr_matrix:
        '''
        Sparse aggregation matrix A with (A @ H)[v] = sum of H[u] over the
        neighbours of v in the given direction.

        FORWARD uses outgoing neighbours (A[v, u] for v->u), BACKWARD uses
        incoming neighbours (A[v, u] for u->v). Entries are 1 unless `weighted`.
        '''
        direction = Direction(direction)
        n = self.n_nodes
        if not self.edges:
            return sparse.csr_matrix((n, n), dtype=np.float64)
        src = np.fromiter((s for s, _ in self.edges), dtype=np.int64, count=self.n_edges)
        dst = np.fromiter((d for _, d in self.edges), dtype=np.int64, count=self.n_edges)
        if weighted:
            vals = np.fromiter(self.edges.values(), dtype=np.float64, count=self.n_edges)
        else:
            vals = np.ones(self.n_edges, dtype=np.float64)
        if direction is Direction.FORWARD:
            rows, cols = src, dst
        else:
            rows, cols = dst, src
        return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=np.float64)

    def permuted(self, order: Sequence[int]) -> DependencyGraph:
        """Relabel so that new node i is old node order[i]."""
        order = list(order)
        if sorted(order) != list(range(self.n_nodes)):
            raise ValidationError("order must be a permutation of the node indexes")
        new_index = {old: new for new, old in enumerate(order)}
        return DependencyGraph(
            view=self.view,
            node_ids=tuple(self.node_ids[i] for i in order),
            edges={(new_index[s], new_index[d]): w for (s, d), w in self.edges.items()},
        )

    def reversed(self) -> DependencyGraph:
        return DependencyGraph(
            view=self.view,
            node_ids=self.node_ids,
            edges={(d, s): w for (s, d), w in self.edges.items()},
        )


def _index_records(records: Sequence[ModuleRecord]) -> dict[str, int]:
    index: dict[str, int] = {}
    for i, r in enumerate(records):
        if r.file_id in index:
            raise ValidationError(f"duplicate file id '{r.file_id}'")
        index[r.file_id] = i
    return index


def build_cdg(records: Sequence[ModuleRecord], dep_edges: Sequence[RawDependencyEdge]) -> DependencyGraph:
    '''
    Code dependency graph: Weight(A, B) = num_data(A, B) + num_call(A, B).

    Repeated export rows for the same pair are summed. Self-dependencies are
    dropped.
    '''
    index = _index_records(records)
    weights: Counter = Counter()
    dropped = 0
    for e in dep_edges:
        try:
            s, d = index[e.src], index[e.dst]
        except KeyError as k:
            raise ValidationError(f"dependency endpoint {k} does not match any file") from None
        if s == d:
            dropped += 1
            continue
        weights[(s, d)] += e.count
    if dropped:
        logger.debug("dropped %d self-dependency rows", dropped)
    return DependencyGraph(
        view=GraphView.CDG,
        node_ids=tuple(r.file_id for r in records),
        edges={k: float(w) for k, w in weights.items() if w > 0},
    )


def build_ddg(records: Sequence[ModuleRecord], ownership: Sequence[OwnershipRecord]) -> DependencyGraph:
    '''
    Developer dependency graph: both A->B and B->A carry the number of
    developers that worked on both files.
    '''
    index = _index_records(records)
    files_of: dict[str, set[int]] = defaultdict(set)
    for o in ownership:
        if o.file_id not in index:
            raise ValidationError(f"ownership file '{o.file_id}' does not match any file")
        files_of[o.developer_id].add(index[o.file_id])

    shared: Counter = Counter()
    for files in files_of.values():
        for a, b in itertools.combinations(sorted(files), 2):
            shared[(a, b)] += 1

    edges: dict[tuple[int, int], float] = {}
    for (a, b), w in shared.items():
        edges[(a, b)] = float(w)
        edges[(b, a)] = float(w)
    return DependencyGraph(
        view=GraphView.DDG,
        node_ids=tuple(r.file_id for r in records),
        edges=edges,
    )


def normalize_edge_weights(graph: DependencyGraph) -> DependencyGraph:
    '''
    Divide every outgoing weight of a node by that node's outgoing-weight sum.

    Nodes without outgoing edges are untouched; ratios between the outgoing
    weights of one node are preserved.
    '''
    sums = [graph.out_weight_sum(v) for v in range(graph.n_nodes)]
    edges = {(s, d): w / sums[s] for (s, d), w in graph.edges.items()}
    return DependencyGraph(view=graph.view, node_ids=graph.node_ids, edges=edges)


def build_msdg(cdg: DependencyGraph, ddg: DependencyGraph, sum_normalized: bool = False) -> DependencyGraph:
    '''
    Multi-view graph: Weight(A, B) = Weight_CDG(A, B) + Weight_DDG(A, B), absent
    edges counting as 0.

    Args:
        cdg: Code dependency graph (raw weights).
        ddg: Developer dependency graph (raw weights).
        sum_normalized: Sum the per-view normalized weights instead of the raw
            ones. Off by default; kept for sensitivity checks.
    '''
    if cdg.node_ids != ddg.node_ids:
        raise ValidationError("CDG and DDG must share the same node sequence")
    if sum_normalized:
        cdg = normalize_edge_weights(cdg)
        ddg = normalize_edge_weights(ddg)

    edges: dict[tuple[int, int], float] = dict(cdg.edges)
    for k, w in ddg.edges.items():
        edges[k] = edges.get(k, 0.0) + w
    return DependencyGraph(
        view=GraphView.MSDG,
        node_ids=cdg.node_ids,
        edges={k: w for k, w in edges.items() if w > 0},
    )


def build_view(
    dataset: VersionDataset,
    view: GraphView | str,
    normalize: bool = True,
    sum_normalized: bool = False,
) -> DependencyGraph:
    """Build one view of a dataset, optionally followed by outgoing-weight normalization."""
    view = GraphView.parse(view)
    if view is GraphView.CDG:
        g = build_cdg(dataset.records, dataset.dep_edges)
    elif view is GraphView.DDG:
        g = build_ddg(dataset.records, dataset.ownership)
    else:
        g = build_msdg(
            build_cdg(dataset.records, dataset.dep_edges),
            build_ddg(dataset.records, dataset.ownership),
            sum_normalized=sum_normalized,
        )
    return normalize_edge_weights(g) if normalize else g


def write_graph(graph: DependencyGraph, prefix: str) -> tuple[str, str]:
    '''
    Export a graph as `<prefix>.edges.csv` (src,dst,weight by file id) plus a
    `<prefix>.json` sidecar holding the view tag and node order.

    Returns:
        (edges_path, sidecar_path)
    '''
    edges_path = f"{prefix}.edges.csv"
    sidecar_path = f"{prefix}.json"
    ids = graph.node_ids
    rows = [[ids[s], ids[d], repr(w)] for (s, d), w in graph.edges.items()]
    pd.DataFrame(rows, columns=["src", "dst", "weight"]).to_csv(
        edges_path, index=False, encoding="utf-8", lineterminator="\n"
    )
    with open(sidecar_path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(
            {
                "format_version": GRAPH_FORMAT_VERSION,
                "view": graph.view.value,
                "node_ids": list(ids),
                "edges": os.path.basename(edges_path),
            },
            f,
            indent=2,
        )
        f.write("\n")
    return edges_path, sidecar_path


def read_graph(sidecar_path: str) -> DependencyGraph:
    """Read a graph back from its JSON sidecar (the edge list path is stored in it)."""
    if not os.path.isfile(sidecar_path):
        raise ValidationError(f"file not found: {sidecar_path}")
    with open(sidecar_path, "r", encoding="utf-8") as f:
        meta = json.load(f)
    for key in ("view", "node_ids", "edges"):
        if key not in meta:
            raise SchemaError(key, sidecar_path)

    node_ids = tuple(meta["node_ids"])
    index = {fid: i for i, fid in enumerate(node_ids)}
    edges_path = os.path.join(os.path.dirname(sidecar_path), meta["edges"])
    if not os.path.isfile(edges_path):
        raise ValidationError(f"file not found: {edges_path}")
    try:
        df = pd.read_csv(edges_path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        df = pd.DataFrame(columns=["src", "dst", "weight"])
    for col in ("src", "dst", "weight"):
        if col not in df.columns:
            raise SchemaError(col, edges_path)

    edges: dict[tuple[int, int], float] = {}
    for i, (s, d, w) in enumerate(zip(df["src"], df["dst"], df["weight"])):
        if s not in index or d not in index:
            raise ValidationError(f"edge {s}->{d} refers to an unknown node (row {i})")
        try:
            edges[(index[s], index[d])] = float(w)
        except ValueError:
            raise ParseError(f"non-numeric weight '{w}'", i) from None

    return DependencyGraph(view=GraphView.parse(meta["view"]), node_ids=node_ids, edges=edges)


def check_feature_matrix(graph: DependencyGraph, X: np.ndarray) -> NodeFeatureMatrix:
    """Return X as a float64 matrix after checking it has one finite row per node."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != graph.n_nodes:
        raise ShapeError(
            f"feature matrix has shape {X.shape}, graph has {graph.n_nodes} nodes"
        )
    if not np.all(np.isfinite(X)):
        raise ShapeError("feature matrix contains non-finite values")
    return X
