import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from defect_graph import (
    SEARCH_SPACE,
    BiGGNNParams,
    DependencyGraph,
    Direction,
    GraphView,
    ModelConfig,
    SyntheticConfig,
    aggregate_directional,
    build_view,
    embed,
    forward,
    fuse,
    generate_synthetic,
    normalize_metrics,
    predict_proba,
    random_search,
    train,
)
from defect_graph import nn
from defect_graph.errors import ConfigError, NumericError, ShapeError, TrainingError
from defect_graph.model import forward_tensors, sample_config


def _random_graph(n=12, p=0.25, seed=0):
    rng = np.random.default_rng(seed)
    ids = tuple(f"n{i}" for i in range(n))
    edges = {}
    for s in range(n):
        for d in range(n):
            if s != d and rng.random() < p:
                edges[(s, d)] = float(rng.uniform(0.1, 1.0))
    return DependencyGraph(GraphView.MSDG, ids, edges)


def _planted(n_nodes=26, separation=4.0, seed=0):
    ds = normalize_metrics(generate_synthetic(SyntheticConfig(n_nodes=n_nodes, defect_rate=0.3, separation=separation), seed))
    return build_view(ds, "msdg"), ds.feature_matrix(), ds.labels()


def _masks(labels, n_val_per_class=3, seed=0):
    rng = np.random.default_rng(seed)
    train = np.ones(labels.size, dtype=bool)
    for c in (0, 1):
        idx = rng.permutation(np.flatnonzero(labels == c))[:n_val_per_class]
        train[idx] = False
    return train, ~train


def test_aggregate_sums_neighbour_rows():
    g = DependencyGraph(GraphView.CDG, ("v", "a", "b", "iso"), {(0, 1): 1.0, (0, 2): 1.0, (1, 2): 0.5})
    H = np.array([[9.0, 9.0], [1.0, 0.0], [0.0, 1.0], [7.0, 7.0]])
    fwd = aggregate_directional(g, H, Direction.FORWARD)
    bwd = aggregate_directional(g, H, Direction.BACKWARD)
    np.testing.assert_array_equal(fwd[0], [1.0, 1.0])
    np.testing.assert_array_equal(fwd[1], [0.0, 1.0])
    np.testing.assert_array_equal(fwd[3], [0.0, 0.0])
    np.testing.assert_array_equal(bwd[2], [10.0, 9.0])
    np.testing.assert_array_equal(bwd[3], [0.0, 0.0])


def test_aggregate_weighted_and_shape_error():
    g = DependencyGraph(GraphView.CDG, ("a", "b"), {(0, 1): 0.5})
    H = np.array([[2.0], [4.0]])
    np.testing.assert_array_equal(aggregate_directional(g, H, "forward", weighted=True), [[2.0], [0.0]])
    with pytest.raises(ShapeError):
        aggregate_directional(g, np.ones((3, 1)), "forward")


def test_reversing_edges_swaps_directions():
    g = _random_graph()
    H = np.random.default_rng(1).normal(size=(g.n_nodes, 3))
    r = g.reversed()
    np.testing.assert_array_equal(aggregate_directional(r, H, "forward"), aggregate_directional(g, H, "backward"))
    np.testing.assert_array_equal(aggregate_directional(r, H, "backward"), aggregate_directional(g, H, "forward"))


def test_fuse_gate_cases():
    a = np.array([[1.0, 2.0]])
    b = np.array([[3.0, -4.0]])
    W0 = np.zeros((2, 8))
    np.testing.assert_allclose(fuse(a, b, W0, np.zeros(2)).data, (a + b) / 2)
    W = np.random.default_rng(0).normal(size=(2, 8))
    np.testing.assert_allclose(fuse(a, a, W, np.array([0.3, -0.7])).data, a)
    out = fuse(a, b, W0, np.array([10.0, -10.0])).data
    np.testing.assert_allclose(out, [[1.0, -4.0]], atol=1e-3)
    with pytest.raises(ShapeError):
        fuse(a, b, np.zeros((2, 4)), np.zeros(2))


def test_forward_rows_are_probabilities():
    g = _random_graph()
    X = np.random.default_rng(2).random((g.n_nodes, 5))
    cfg = ModelConfig(hidden_size=8, graph_hops=3, mlp_hidden=(8, 4))
    params = BiGGNNParams.init(cfg, 5, np.random.default_rng(3))
    probs = forward(g, X, params, cfg)
    assert probs.shape == (g.n_nodes, 2)
    assert np.all(probs > 0)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_array_equal(predict_proba(g, X, params, cfg), probs[:, 1])


def test_forward_is_permutation_equivariant():
    g = _random_graph(seed=4)
    X = np.random.default_rng(5).random((g.n_nodes, 4))
    cfg = ModelConfig(hidden_size=8, graph_hops=2, mlp_hidden=(8, 4))
    params = BiGGNNParams.init(cfg, 4, np.random.default_rng(6))
    order = np.random.default_rng(7).permutation(g.n_nodes)
    base = forward(g, X, params, cfg)
    moved = forward(g.permuted(order), X[order], params, cfg)
    np.testing.assert_allclose(moved, base[order], atol=1e-9)


def test_one_hop_with_zero_gru_halves_projection():
    g = DependencyGraph(GraphView.CDG, ("a", "b"), {(0, 1): 1.0})
    X = np.array([[0.2, 0.4], [1.0, -1.0]])
    cfg = ModelConfig(hidden_size=3, graph_hops=1, mlp_hidden=(2,))
    params = BiGGNNParams.init(cfg, 2, np.random.default_rng(0))
    for k in params.arrays:
        if k.startswith("gru."):
            params.arrays[k][...] = 0.0
    h0 = X @ params.arrays["proj.W"].T + params.arrays["proj.b"]
    # z = r = 0.5 and the candidate state is tanh(0) = 0
    np.testing.assert_allclose(embed(g, X, params, cfg), 0.5 * h0, atol=1e-12)


def test_forward_rejects_wrong_width_and_reports_hop():
    g = _random_graph()
    cfg = ModelConfig(hidden_size=4, graph_hops=1, mlp_hidden=(4,))
    params = BiGGNNParams.init(cfg, 3, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        forward(g, np.ones((g.n_nodes, 5)), params, cfg)
    params.arrays["proj.W"][...] = 10.0
    with pytest.raises(NumericError, match="hop 0"):
        forward(g, np.full((g.n_nodes, 3), 1e308), params, cfg)


@pytest.mark.parametrize(
    "n_nodes, cfg",
    [
        (10, ModelConfig(hidden_size=4, graph_hops=2, mlp_hidden=(3,))),
        (12, ModelConfig(hidden_size=8, graph_hops=2, mlp_hidden=(32, 16))),
    ],
)
def test_end_to_end_gradient_check(n_nodes, cfg):
    g = _random_graph(n=n_nodes, seed=8)
    rng = np.random.default_rng(9)
    X = rng.random((g.n_nodes, 3))
    labels = rng.integers(0, 2, size=g.n_nodes)
    params = BiGGNNParams.init(cfg, 3, rng)

    def loss(t):
        return nn.cross_entropy(forward_tensors(g, X, t, cfg), labels)

    assert nn.grad_check(loss, params.arrays) < 1e-4


def test_params_check_and_checkpoint(tmp_path):
    cfg = ModelConfig(hidden_size=8, mlp_hidden=(8, 4), sampling_ratio=None)
    params = BiGGNNParams.init(cfg, 5, np.random.default_rng(0))
    params.check(cfg)
    assert params.n_mlp_layers() == 2
    with pytest.raises(ShapeError):
        params.check(ModelConfig(hidden_size=16, mlp_hidden=(8, 4)))
    path = str(tmp_path / "model.npz")
    params.save(path, cfg)
    back, back_cfg = BiGGNNParams.load(path)
    assert back_cfg == cfg
    for k, v in params.arrays.items():
        np.testing.assert_array_equal(back.arrays[k], v)


def test_model_config_validation_and_dict():
    cfg = ModelConfig(sampling_ratio="none")
    assert cfg.sampling() is None
    assert cfg.to_dict()["sampling_ratio"] == "none"
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    assert ModelConfig().in_search_space()
    assert not ModelConfig(hidden_size=12).in_search_space()
    with pytest.raises(ConfigError):
        ModelConfig(graph_hops=0)
    with pytest.raises(ConfigError):
        ModelConfig(lr=0.0)


def test_train_overfits_small_planted_graph():
    graph, X, y = _planted()
    train_mask, val_mask = _masks(y)
    cfg = ModelConfig(hidden_size=16, graph_hops=2, lr=0.01, batch_size=16, max_epochs=300)
    params, history = train(graph, X, y, train_mask, val_mask, cfg, np.random.default_rng(0))
    assert len(history.train_loss) == 300
    assert history.train_accuracy[-1] == 1.0
    assert history.train_loss[-1] < history.train_loss[0]
    params.check(cfg)


def test_train_is_deterministic_and_selects_argmax():
    graph, X, y = _planted(seed=1)
    train_mask, val_mask = _masks(y, seed=1)
    cfg = ModelConfig(hidden_size=8, graph_hops=1, mlp_hidden=(8, 4), lr=0.01, max_epochs=8)
    p1, h1 = train(graph, X, y, train_mask, val_mask, cfg, np.random.default_rng(5))
    p2, h2 = train(graph, X, y, train_mask, val_mask, cfg, np.random.default_rng(5))
    assert h1 == h2
    for k in p1.arrays:
        np.testing.assert_array_equal(p1.arrays[k], p2.arrays[k])
    assert h1.val_metric_name == "auc"
    assert h1.selected_epoch == int(np.argmax(h1.val_metric)) + 1
    assert h1.augmented.n_original == graph.n_nodes


def test_single_epoch_selects_epoch_one():
    graph, X, y = _planted(seed=2)
    train_mask, val_mask = _masks(y, seed=2)
    cfg = ModelConfig(hidden_size=8, max_epochs=1, mlp_hidden=(4,))
    _, history = train(graph, X, y, train_mask, val_mask, cfg, np.random.default_rng(0))
    assert history.selected_epoch == 1


def test_train_rejects_single_class():
    graph, X, y = _planted()
    train_mask = y == 0
    with pytest.raises(TrainingError):
        train(graph, X, y, train_mask, ~train_mask, ModelConfig(max_epochs=1), np.random.default_rng(0))
    with pytest.raises(TrainingError):
        train(graph, X, y, np.zeros(y.size, dtype=bool), ~train_mask, ModelConfig(max_epochs=1), np.random.default_rng(0))


def test_sampled_configs_stay_in_grid():
    rng = np.random.default_rng(0)
    for _ in range(100):
        cfg = sample_config(SEARCH_SPACE, rng, ModelConfig())
        assert cfg.in_search_space()


def test_random_search_budget_one_and_ties():
    trials = []
    best = random_search(SEARCH_SPACE, 1, lambda c: 0.5, np.random.default_rng(3), trials=trials)
    assert len(trials) == 1 and best == trials[0][0]
    trials = []
    best = random_search(SEARCH_SPACE, 6, lambda c: 1.0, np.random.default_rng(3), trials=trials)
    assert best == trials[0][0]


def test_random_search_finds_indicator_config():
    trials = []
    best = random_search(
        SEARCH_SPACE, 50, lambda c: float(c.hidden_size == 64), np.random.default_rng(11), trials=trials
    )
    sampled = [c for c, _ in trials]
    assert any(c.hidden_size == 64 for c in sampled)
    assert best.hidden_size == 64
    assert best == next(c for c in sampled if c.hidden_size == 64)


def test_random_search_is_reproducible_and_checks_budget():
    a, b = [], []
    random_search(SEARCH_SPACE, 8, lambda c: c.lr, np.random.default_rng(4), trials=a)
    random_search(SEARCH_SPACE, 8, lambda c: c.lr, np.random.default_rng(4), trials=b)
    assert a == b
    with pytest.raises(ConfigError):
        random_search(SEARCH_SPACE, 0, lambda c: 0.0, np.random.default_rng(0))
