import pickle
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from defect_graph import (
    DependencyGraph,
    Direction,
    GraphView,
    MetricManifest,
    ModuleRecord,
    OwnershipRecord,
    RawDependencyEdge,
    SyntheticConfig,
    VersionDataset,
    build_cdg,
    build_ddg,
    build_msdg,
    build_view,
    generate_synthetic,
    normalize_edge_weights,
    read_graph,
    write_graph,
)
from defect_graph.errors import ShapeError, ValidationError
from defect_graph.graph import check_feature_matrix

FILES = ("A", "B", "C", "D", "E")


def _records(files=FILES):
    return tuple(ModuleRecord(f, (float(i),), i % 2) for i, f in enumerate(files))


def _two_view_example():
    """Five files; CDG and DDG weights as in the worked two-view example."""
    deps = (
        RawDependencyEdge("C", "A", "data", 1),
        RawDependencyEdge("C", "A", "call", 2),
        RawDependencyEdge("E", "A", "call", 7),
        RawDependencyEdge("E", "B", "data", 8),
        RawDependencyEdge("C", "E", "call", 11),
        RawDependencyEdge("D", "E", "data", 9),
    )
    # five developers shared by A and C, three by B and D
    ownership = [OwnershipRecord(f, f"ac{k}") for k in range(5) for f in ("A", "C")]
    ownership += [OwnershipRecord(f, f"bd{k}") for k in range(3) for f in ("B", "D")]
    ownership.append(OwnershipRecord("E", "solo"))
    return _records(), deps, tuple(ownership)


def _w(graph: DependencyGraph, a: str, b: str) -> float:
    return graph.weights_by_id().get((a, b), 0.0)


def test_build_cdg_two_view_example():
    records, deps, _ = _two_view_example()
    cdg = build_cdg(records, deps)
    assert cdg.view is GraphView.CDG
    assert cdg.weights_by_id() == {
        ("C", "A"): 3.0,
        ("E", "A"): 7.0,
        ("E", "B"): 8.0,
        ("C", "E"): 11.0,
        ("D", "E"): 9.0,
    }


def test_build_cdg_sums_data_and_call():
    records = _records(("A", "B"))
    cdg = build_cdg(records, (RawDependencyEdge("A", "B", "data", 2), RawDependencyEdge("A", "B", "call", 5)))
    assert _w(cdg, "A", "B") == 7.0
    assert _w(cdg, "B", "A") == 0.0


def test_build_cdg_without_edges_keeps_nodes():
    cdg = build_cdg(_records(), ())
    assert cdg.n_nodes == 5
    assert cdg.n_edges == 0


def test_build_cdg_drops_self_dependencies():
    cdg = build_cdg(_records(("A", "B")), (RawDependencyEdge("A", "A", "call", 4),))
    assert cdg.n_edges == 0


def test_build_cdg_unresolved_endpoint():
    with pytest.raises(ValidationError):
        build_cdg(_records(("A",)), (RawDependencyEdge("A", "Q", "call", 1),))


def test_build_ddg_two_view_example():
    records, _, ownership = _two_view_example()
    ddg = build_ddg(records, ownership)
    assert ddg.weights_by_id() == {
        ("A", "C"): 5.0,
        ("C", "A"): 5.0,
        ("B", "D"): 3.0,
        ("D", "B"): 3.0,
    }


def test_build_ddg_counts_shared_developers():
    records = _records(("A", "B"))
    own = [OwnershipRecord("A", d) for d in "xyz"] + [OwnershipRecord("B", d) for d in "yzq"]
    ddg = build_ddg(records, own)
    assert _w(ddg, "A", "B") == 2.0
    assert _w(ddg, "B", "A") == 2.0


def test_build_ddg_disjoint_developers():
    own = [OwnershipRecord(f, f"dev_{f}") for f in FILES]
    assert build_ddg(_records(), own).n_edges == 0


def test_ddg_requires_reverse_edges():
    with pytest.raises(ValidationError, match="reverse"):
        DependencyGraph(GraphView.DDG, ("A", "B"), {(0, 1): 1.0})


def test_build_msdg_adds_view_weights():
    records, deps, ownership = _two_view_example()
    cdg, ddg = build_cdg(records, deps), build_ddg(records, ownership)
    msdg = build_msdg(cdg, ddg)
    assert _w(msdg, "C", "A") == 8.0
    assert _w(msdg, "A", "C") == 5.0
    assert _w(msdg, "E", "B") == 8.0
    ids = msdg.node_ids
    for (s, d), w in msdg.edges.items():
        assert w == cdg.weight(s, d) + ddg.weight(s, d), (ids[s], ids[d])
    assert msdg.n_edges == len(set(cdg.edges) | set(ddg.edges))


def test_build_msdg_empty_inputs():
    cdg = build_cdg(_records(), ())
    ddg = build_ddg(_records(), ())
    assert build_msdg(cdg, ddg).n_edges == 0


def test_build_msdg_rejects_node_mismatch():
    with pytest.raises(ValidationError):
        build_msdg(build_cdg(_records(), ()), build_ddg(_records(("A", "B")), ()))


def test_normalize_edge_weights_divides_by_out_sum():
    g = DependencyGraph(GraphView.CDG, ("A", "B", "C", "D"), {(0, 1): 2.0, (0, 2): 3.0, (1, 2): 4.0})
    n = normalize_edge_weights(g)
    assert n.weight(0, 1) == pytest.approx(0.4)
    assert n.weight(0, 2) == pytest.approx(0.6)
    assert n.weight(1, 2) == 1.0
    assert n.successors(3) == ()


def test_normalized_out_weights_sum_to_one_and_keep_ratios():
    ds = generate_synthetic(SyntheticConfig(n_nodes=60), seed=2)
    raw = build_view(ds, "msdg", normalize=False)
    g = build_view(ds, "msdg")
    for v in range(g.n_nodes):
        succ = g.successors(v)
        if not succ:
            continue
        assert g.out_weight_sum(v) == pytest.approx(1.0, abs=1e-9)
        a, b = succ[0], succ[-1]
        assert g.weight(v, a) / g.weight(v, b) == pytest.approx(raw.weight(v, a) / raw.weight(v, b))


def test_sum_normalized_flag_changes_msdg_weights():
    records, deps, ownership = _two_view_example()
    ds = VersionDataset("p", "1", MetricManifest(("x",), ("code",)), records, deps, ownership)
    g = build_view(ds, GraphView.MSDG, normalize=False, sum_normalized=True)
    # C's CDG out-weights are 3 and 11, its only DDG edge is to A
    assert _w(g, "C", "A") == pytest.approx(3 / 14 + 1.0)


def test_construction_is_row_order_invariant():
    ds = generate_synthetic(SyntheticConfig(n_nodes=40), seed=9)
    rng = np.random.default_rng(0)
    order = rng.permutation(len(ds.records))
    shuffled = VersionDataset(
        ds.project,
        ds.version,
        ds.manifest,
        tuple(ds.records[i] for i in order),
        tuple(ds.dep_edges[i] for i in rng.permutation(len(ds.dep_edges))),
        tuple(ds.ownership[i] for i in rng.permutation(len(ds.ownership))),
    )
    for view in GraphView:
        a = build_view(ds, view).weights_by_id()
        b = build_view(shuffled, view).weights_by_id()
        assert a.keys() == b.keys()
        for k in a:
            assert b[k] == pytest.approx(a[k], rel=1e-12)


def test_adjacency_directions():
    g = DependencyGraph(GraphView.CDG, ("A", "B", "C"), {(0, 1): 2.0, (2, 1): 5.0})
    fwd = g.adjacency(Direction.FORWARD).toarray()
    bwd = g.adjacency(Direction.BACKWARD, weighted=True).toarray()
    np.testing.assert_array_equal(fwd, [[0, 1, 0], [0, 0, 0], [0, 1, 0]])
    np.testing.assert_array_equal(bwd, [[0, 0, 0], [2, 0, 5], [0, 0, 0]])
    assert g.predecessors(1) == (0, 2)


def test_permuted_and_reversed_keep_weights_by_id():
    g = DependencyGraph(GraphView.CDG, ("A", "B", "C"), {(0, 1): 2.0, (2, 1): 5.0})
    p = g.permuted([2, 0, 1])
    assert p.node_ids == ("C", "A", "B")
    assert p.weights_by_id() == g.weights_by_id()
    assert g.reversed().weights_by_id() == {("B", "A"): 2.0, ("B", "C"): 5.0}
    with pytest.raises(ValidationError):
        g.permuted([0, 0, 1])


@pytest.mark.parametrize(
    "edges",
    [{(0, 0): 1.0}, {(0, 1): 0.0}, {(0, 1): -1.0}, {(0, 5): 1.0}],
)
def test_graph_rejects_bad_edges(edges):
    with pytest.raises(ValidationError):
        DependencyGraph(GraphView.CDG, ("A", "B"), edges)


def test_graph_is_read_only_and_picklable():
    g = DependencyGraph(GraphView.MSDG, ("A", "B"), {(0, 1): 1.5})
    with pytest.raises(TypeError):
        g.edges[(1, 0)] = 1.0
    assert pickle.loads(pickle.dumps(g)) == g


def test_graph_export_is_bit_exact(tmp_path):
    ds = generate_synthetic(SyntheticConfig(n_nodes=30), seed=1)
    for view in GraphView:
        g = build_view(ds, view)
        edges_path, sidecar = write_graph(g, str(tmp_path / f"demo.{view.value.lower()}"))
        assert Path(edges_path).read_text().splitlines()[0] == "src,dst,weight"
        back = read_graph(sidecar)
        assert back.view is g.view
        assert back.node_ids == g.node_ids
        assert dict(back.edges) == dict(g.edges)


def test_check_feature_matrix():
    g = DependencyGraph(GraphView.CDG, ("A", "B"), {})
    assert check_feature_matrix(g, [[1, 2], [3, 4]]).dtype == np.float64
    with pytest.raises(ShapeError):
        check_feature_matrix(g, np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        check_feature_matrix(g, [[1, np.nan], [3, 4]])
