from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from .errors import AnalysisError, SchemaError, ShapeError, ValidationError
from .graph import DependencyGraph


@dataclass(frozen=True)
class NeighborShareReport:
    '''
    Share of outgoing edge weight that points at same-label successors.

    Attributes:
        per_node: P(v) for every node, in graph order.
        p_total: Mean of P(v) over all nodes.
        view: View tag of the analysed graph.
    '''
    per_node: np.ndarray
    p_total: float
    view: str = ""

    def to_dict(self, node_ids: Sequence[str] | None = None) -> dict:
        d = {"view": self.view, "p_total": self.p_total, "per_node": [float(p) for p in self.per_node]}
        if node_ids is not None:
            d["node_ids"] = list(node_ids)
        return d


@dataclass(frozen=True)
class SeparabilityReport:
    distance: float
    n_defective: int
    n_clean: int

    def to_dict(self) -> dict:
        return {"distance": self.distance, "n_defective": self.n_defective, "n_clean": self.n_clean}


def same_label_weight_share(graph: DependencyGraph, labels) -> NeighborShareReport:
    '''
    P(v) = W2(v) / W1(v), where W1 sums the outgoing weights of v and W2 only
    those going to successors with v's label. Nodes without outgoing weight get
    P(v) = 0. Incoming edges are not counted.
    '''
    labels = np.asarray(labels)
    if labels.shape != (graph.n_nodes,):
        raise ShapeError(f"{labels.size} labels for {graph.n_nodes} nodes")
    shares = np.zeros(graph.n_nodes, dtype=np.float64)
    for v in range(graph.n_nodes):
        w1 = 0.0
        w2 = 0.0
        for u in graph.successors(v):
            w = graph.edges[(v, u)]
            w1 += w
            if labels[u] == labels[v]:
                w2 += w
        shares[v] = w2 / w1 if w1 > 0 else 0.0
    p_total = float(shares.mean()) if shares.size else 0.0
    return NeighborShareReport(per_node=shares, p_total=p_total, view=graph.view.value)


def normalize_rows(features: np.ndarray) -> np.ndarray:
    """Min-max scale every row to [0, 1]; constant rows become zeros."""
    X = np.asarray(features, dtype=np.float64)
    lo = X.min(axis=1, keepdims=True)
    span = X.max(axis=1, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (X - lo) / safe, 0.0)


def interclass_distance(features, labels, already_normalized: bool = False) -> SeparabilityReport:
    '''
    Mean Euclidean distance over every (defective, clean) pair of rows.

    Args:
        features: (n, d) node representations.
        labels: (n,) binary labels.
        already_normalized: Skip the per-row min-max scaling, for callers that
            scaled the rows some other way.
    '''
    X = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] != labels.size:
        raise ShapeError(f"features {X.shape} do not match {labels.size} labels")
    if not already_normalized:
        X = normalize_rows(X)
    D = X[labels == 1]
    ND = X[labels == 0]
    if len(D) == 0 or len(ND) == 0:
        raise AnalysisError("inter-class distance needs both defective and clean rows")
    return SeparabilityReport(
        distance=float(cdist(D, ND).mean()),
        n_defective=len(D),
        n_clean=len(ND),
    )


def neighbor_share_table(dataset: str, reports: Mapping[str, NeighborShareReport]) -> pd.DataFrame:
    """One row per dataset version, one P_total column per view."""
    row = {view: rep.p_total for view, rep in reports.items()}
    return pd.DataFrame([row], index=pd.Index([dataset], name="dataset"))


def separability_table(dataset: str, reports: Mapping[str, SeparabilityReport]) -> pd.DataFrame:
    """One row per dataset version, one distance column per method."""
    row = {method: rep.distance for method, rep in reports.items()}
    return pd.DataFrame([row], index=pd.Index([dataset], name="dataset"))


def read_feature_dump(path: str) -> tuple[list[str], np.ndarray, np.ndarray]:
    '''
    Read a `file,label,<features...>` CSV (prediction-side embedding dumps use
    this layout).

    Returns:
        (file ids, labels, feature matrix)
    '''
    if not os.path.isfile(path):
        raise ValidationError(f"file not found: {path}")
    try:
        df = pd.read_csv(path, dtype={"file": str}, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise ValidationError(f"{path} is empty") from None
    for col in ("file", "label"):
        if col not in df.columns:
            raise SchemaError(col, path)
    feature_cols = [c for c in df.columns if c not in ("file", "label")]
    if not feature_cols:
        raise ValidationError(f"{path} has no feature columns")
    try:
        X = df[feature_cols].apply(pd.to_numeric, errors="raise").to_numpy(dtype=np.float64)
        labels = pd.to_numeric(df["label"], errors="raise").to_numpy(dtype=np.int64)
    except (TypeError, ValueError) as e:
        raise ValidationError(f"{path}: non-numeric value ({e})") from None
    return df["file"].tolist(), labels, X


def write_analysis_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
