import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from defect_graph import (
    DependencyGraph,
    GraphView,
    interclass_distance,
    neighbor_share_table,
    normalize_edge_weights,
    same_label_weight_share,
    separability_table,
)
from defect_graph.analysis import normalize_rows, read_feature_dump, write_analysis_json
from defect_graph.errors import AnalysisError, SchemaError, ShapeError


def _random_instance(rng, n_max=20):
    n = int(rng.integers(2, n_max + 1))
    ids = tuple(f"n{i}" for i in range(n))
    edges = {}
    for s in range(n):
        for d in range(n):
            if s != d and rng.random() < 0.3:
                edges[(s, d)] = float(rng.integers(1, 10))
    labels = rng.integers(0, 2, size=n)
    return DependencyGraph(GraphView.CDG, ids, edges), labels


def _share_oracle(graph, labels):
    shares = []
    for v in range(graph.n_nodes):
        w1 = w2 = 0.0
        for (s, d), w in graph.edges.items():
            if s != v:
                continue
            w1 += w
            if labels[d] == labels[v]:
                w2 += w
        shares.append(w2 / w1 if w1 else 0.0)
    return shares


def _distance_oracle(X, labels):
    total, pairs = 0.0, 0
    for i in range(len(X)):
        for j in range(len(X)):
            if labels[i] == 1 and labels[j] == 0:
                total += float(np.sqrt(np.sum((X[i] - X[j]) ** 2)))
                pairs += 1
    return total / pairs


def test_share_hand_example():
    # v -> u1 (same label, 2), v -> u2 (other label, 3); u1 -> v counts only for u1
    g = DependencyGraph(GraphView.MSDG, ("v", "u1", "u2", "iso"), {(0, 1): 2.0, (0, 2): 3.0, (1, 0): 1.0})
    r = same_label_weight_share(g, [1, 1, 0, 0])
    np.testing.assert_allclose(r.per_node, [0.4, 1.0, 0.0, 0.0])
    assert r.p_total == pytest.approx(1.4 / 4)
    assert r.view == "MSDG"


def test_share_single_label_counts_nodes_with_out_edges():
    g = DependencyGraph(GraphView.CDG, ("a", "b", "c", "d"), {(0, 1): 5.0, (1, 2): 0.1})
    r = same_label_weight_share(g, [1, 1, 1, 1])
    assert r.p_total == pytest.approx(2 / 4)


def test_share_shape_error():
    g = DependencyGraph(GraphView.CDG, ("a", "b"), {})
    with pytest.raises(ShapeError):
        same_label_weight_share(g, [1])


def test_share_oracle_and_normalization_invariance():
    rng = np.random.default_rng(10)
    for _ in range(1000):
        g, labels = _random_instance(rng)
        r = same_label_weight_share(g, labels)
        assert list(r.per_node) == _share_oracle(g, labels)
        assert 0.0 <= r.p_total <= 1.0
    for _ in range(50):
        g, labels = _random_instance(rng)
        raw = same_label_weight_share(g, labels)
        normed = same_label_weight_share(normalize_edge_weights(g), labels)
        np.testing.assert_allclose(normed.per_node, raw.per_node, atol=1e-12)


def test_distance_examples():
    assert interclass_distance([[1.0, 0.0], [0.0, 0.0]], [1, 0], already_normalized=True).distance == 1.0
    same = interclass_distance([[0.2, 0.4], [0.2, 0.4]], [1, 0], already_normalized=True)
    assert same.distance == 0.0
    r = interclass_distance([[0.0, 0.0], [1.0, 1.0], [1.0, 0.0]], [1, 1, 0], already_normalized=True)
    assert r.distance == pytest.approx(1.0)
    assert (r.n_defective, r.n_clean) == (2, 1)


def test_distance_normalizes_rows_by_default():
    X = np.array([[0.0, 10.0], [5.0, 0.0]])
    np.testing.assert_array_equal(normalize_rows(X), [[0.0, 1.0], [1.0, 0.0]])
    assert interclass_distance(X, [1, 0]).distance == pytest.approx(np.sqrt(2.0))
    np.testing.assert_array_equal(normalize_rows([[3.0, 3.0]]), [[0.0, 0.0]])


def test_distance_symmetry_and_oracle():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        n = int(rng.integers(2, 21))
        X = rng.random((n, 3))
        labels = rng.integers(0, 2, size=n)
        labels[0], labels[1] = 0, 1
        r = interclass_distance(X, labels, already_normalized=True)
        assert r.distance == pytest.approx(_distance_oracle(X, labels), abs=1e-9)
        flipped = interclass_distance(X, 1 - labels, already_normalized=True)
        assert flipped.distance == pytest.approx(r.distance, abs=1e-12)


def test_distance_single_class():
    with pytest.raises(AnalysisError):
        interclass_distance([[0.0], [1.0]], [1, 1])


def test_tables_and_json(tmp_path):
    g = DependencyGraph(GraphView.CDG, ("a", "b"), {(0, 1): 1.0})
    shares = {"CDG": same_label_weight_share(g, [1, 1])}
    table = neighbor_share_table("demo-1.0", shares)
    assert list(table.columns) == ["CDG"]
    assert table.loc["demo-1.0", "CDG"] == pytest.approx(0.5)
    sep = separability_table("demo-1.0", {"metrics": interclass_distance([[0.0], [1.0]], [1, 0], True)})
    assert sep.loc["demo-1.0", "metrics"] == 1.0

    path = tmp_path / "a.json"
    write_analysis_json(str(path), {"views": {"CDG": shares["CDG"].to_dict(g.node_ids)}})
    doc = json.loads(path.read_text())
    assert doc["views"]["CDG"]["node_ids"] == ["a", "b"]
    assert doc["views"]["CDG"]["per_node"] == [1.0, 0.0]


def test_read_feature_dump(tmp_path):
    path = tmp_path / "emb.csv"
    pd.DataFrame({"file": ["a", "b"], "label": [1, 0], "h0": [0.5, 0.25], "h1": [1.0, 0.0]}).to_csv(path, index=False)
    ids, labels, X = read_feature_dump(str(path))
    assert ids == ["a", "b"]
    assert list(labels) == [1, 0]
    np.testing.assert_array_equal(X, [[0.5, 1.0], [0.25, 0.0]])

    bad = tmp_path / "bad.csv"
    bad.write_text("file,h0\na,1\n")
    with pytest.raises(SchemaError):
        read_feature_dump(str(bad))
