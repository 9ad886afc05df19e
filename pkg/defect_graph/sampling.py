from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, SamplingError, ShapeError
from .graph import DependencyGraph, check_feature_matrix

logger = logging.getLogger(__name__)

SAMPLING_RATIOS = (0.5, 1.0, 2.0, 3.0, "auto")

Ratio = Union[float, str]


@dataclass(frozen=True)
class SamplingConfig:
    '''
    How many synthetic minority nodes to create.

    Attributes:
        ratio: Target number of synthetic nodes as a multiple of the minority
            training count, or "auto" to top the minority class up to the
            majority training count.
    '''
    ratio: Ratio = "auto"

    def __post_init__(self) -> None:
        object.__setattr__(self, "ratio", parse_ratio(self.ratio))

    def n_synthetic(self, n_minority: int, n_majority: int) -> int:
        if self.ratio == "auto":
            return max(n_majority - n_minority, 0)
        # round half up, so 0.5 x 3 minority nodes gives 2
        return int(math.floor(self.ratio * n_minority + 0.5))


def parse_ratio(value: Ratio | None) -> Ratio | None:
    '''
    Normalize a sampling ratio coming from a config file or a dataclass.

    "auto" stays a string, "none" (or None) disables oversampling, anything
    else has to be a positive number.
    '''
    if value is None:
        return None
    if isinstance(value, str):
        text = value.strip().lower()
        if text == "auto":
            return "auto"
        if text in ("none", "off", ""):
            return None
        try:
            value = float(text)
        except ValueError:
            raise ConfigError(f"sampling ratio must be a number, 'auto' or 'none', got '{value}'") from None
    value = float(value)
    if not value > 0 or not math.isfinite(value):
        raise ConfigError(f"sampling ratio must be > 0, got {value}")
    return value


@dataclass(frozen=True)
class AugmentedDataset:
    '''
    A graph plus node features after oversampling.

    Synthetic nodes are appended after the original ones, so node i < n_original
    keeps its index. `synthetic_origin` maps each synthetic node index to
    (source node, neighbour node, delta).
    '''
    graph: DependencyGraph
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    synthetic_origin: dict = field(default_factory=dict)
    n_original: int = 0

    @property
    def n_synthetic(self) -> int:
        return len(self.synthetic_origin)

    def origin_records(self) -> list[dict]:
        """JSON-ready view of `synthetic_origin` keyed by file ids."""
        ids = self.graph.node_ids
        return [
            {
                "node": ids[k],
                "source": ids[src],
                "neighbor": ids[nbr],
                "delta": delta,
            }
            for k, (src, nbr, delta) in sorted(self.synthetic_origin.items())
        ]


def nearest_same_class(v: int, candidates: Sequence[int], features: np.ndarray) -> int:
    '''
    Closest candidate to node v by Euclidean distance on the feature rows.

    v itself is excluded. Ties go to the smallest node index.
    '''
    pool = np.array(sorted(int(u) for u in set(candidates) if int(u) != v), dtype=np.int64)
    if pool.size == 0:
        raise SamplingError(f"node {v} has no same-class training neighbour")
    d = cdist(features[v][None, :], features[pool])[0]
    # argmin returns the first minimum and the pool is sorted
    return int(pool[int(np.argmin(d))])


def synthesize_node(v_features: np.ndarray, u_features: np.ndarray, delta: float) -> np.ndarray:
    """(1 - delta) * v + delta * u, component-wise."""
    v_features = np.asarray(v_features, dtype=np.float64)
    u_features = np.asarray(u_features, dtype=np.float64)
    if v_features.shape != u_features.shape:
        raise ShapeError(f"cannot interpolate shapes {v_features.shape} and {u_features.shape}")
    if not 0.0 <= delta <= 1.0:
        raise SamplingError(f"delta must lie in [0, 1], got {delta}")
    return (1.0 - delta) * v_features + delta * u_features


def _as_mask(mask: np.ndarray | None, n: int, name: str) -> np.ndarray:
    if mask is None:
        return np.zeros(n, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ShapeError(f"{name} has shape {mask.shape}, expected ({n},)")
    return mask


def minority_label(labels: np.ndarray, train_mask: np.ndarray) -> int:
    """Label with fewer training nodes; label 1 on a tie."""
    n_pos = int(np.sum(labels[train_mask] == 1))
    n_neg = int(np.sum(labels[train_mask] == 0))
    return 0 if n_neg < n_pos else 1


def smote_augment(
    graph: DependencyGraph,
    features: np.ndarray,
    labels: np.ndarray,
    train_mask: np.ndarray,
    config: SamplingConfig | None,
    rng: np.random.Generator,
    val_mask: np.ndarray | None = None,
    test_mask: np.ndarray | None = None,
) -> AugmentedDataset:
    '''
    Oversample the minority training class and wire the new nodes into the graph.

    Each synthetic node interpolates between a randomly drawn minority training
    node (with replacement) and its nearest same-class training neighbour, takes
    the source's label, and receives copies of every incoming and outgoing edge
    of the source with the same weights.

    Args:
        graph: Graph over the original nodes.
        features: (n_nodes, d) initial node features.
        labels: (n_nodes,) binary labels.
        train_mask: Nodes that may be used as sources and neighbours.
        config: Sampling ratio; None disables oversampling.
        rng: Random generator, the only source of randomness.
        val_mask, test_mask: Carried through untouched.

    Returns:
        AugmentedDataset with synthetic nodes appended and train-masked.
    '''
    X = check_feature_matrix(graph, features)
    n = graph.n_nodes
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (n,):
        raise ShapeError(f"labels have shape {y.shape}, expected ({n},)")
    train = _as_mask(train_mask, n, "train_mask")
    val = _as_mask(val_mask, n, "val_mask")
    test = _as_mask(test_mask, n, "test_mask")

    unchanged = AugmentedDataset(
        graph=graph, features=X, labels=y,
        train_mask=train, val_mask=val, test_mask=test,
        synthetic_origin={}, n_original=n,
    )
    if config is None or config.ratio is None:
        return unchanged

    minority = minority_label(y, train)
    pool = np.flatnonzero(train & (y == minority))
    n_majority = int(np.sum(train & (y != minority)))
    n_new = config.n_synthetic(pool.size, n_majority)
    if n_new == 0:
        return unchanged
    if pool.size < 2:
        raise SamplingError(
            f"minority class {minority} has {pool.size} training node(s), at least 2 are needed"
        )

    new_rows = np.empty((n_new, X.shape[1]), dtype=np.float64)
    origin: dict[int, tuple[int, int, float]] = {}
    edges = dict(graph.edges)
    nearest: dict[int, int] = {}
    for k in range(n_new):
        src = int(pool[rng.integers(pool.size)])
        if src not in nearest:
            nearest[src] = nearest_same_class(src, pool, X)
        nbr = nearest[src]
        delta = float(rng.random())
        new_rows[k] = synthesize_node(X[src], X[nbr], delta)

        idx = n + k
        origin[idx] = (src, nbr, delta)
        for u in graph.predecessors(src):
            edges[(u, idx)] = graph.edges[(u, src)]
        for u in graph.successors(src):
            edges[(idx, u)] = graph.edges[(src, u)]

    node_ids = graph.node_ids + tuple(f"{graph.node_ids[origin[n + k][0]]}#smote{k}" for k in range(n_new))
    new_graph = DependencyGraph(view=graph.view, node_ids=node_ids, edges=edges)

    logger.debug("SMOTE added %d synthetic node(s) of class %d", n_new, minority)
    pad = np.zeros(n_new, dtype=bool)
    return AugmentedDataset(
        graph=new_graph,
        features=np.vstack([X, new_rows]),
        labels=np.concatenate([y, np.full(n_new, minority, dtype=np.int64)]),
        train_mask=np.concatenate([train, np.ones(n_new, dtype=bool)]),
        val_mask=np.concatenate([val, pad]),
        test_mask=np.concatenate([test, pad]),
        synthetic_origin=origin,
        n_original=n,
    )
