from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import nn
from .errors import ConfigError, NumericError, ShapeError, TrainingError
from .graph import DependencyGraph, Direction, check_feature_matrix
from .metrics import auc
from .sampling import AugmentedDataset, SamplingConfig, parse_ratio, smote_augment

logger = logging.getLogger(__name__)

# Hyperparameter grid used for random search
SEARCH_SPACE: dict[str, tuple] = {
    "hidden_size": (16, 32, 64, 128),
    "graph_hops": (1, 2, 3, 4),
    "lr": (0.01, 0.001, 0.0005, 0.0001),
    "batch_size": (8, 16, 32),
    "mlp_hidden": ((32, 16), (64, 32)),
    "sampling_ratio": (0.5, 1.0, 2.0, 3.0, "auto"),
}


@dataclass(frozen=True)
class ModelConfig:
    '''
    Model and training hyperparameters.

    Attributes:
        hidden_size: Width of node states.
        graph_hops: Number of message-passing hops K (>= 1).
        lr: Adam learning rate.
        batch_size: Training nodes per loss mini-batch.
        mlp_hidden: Hidden widths of the classifier head.
        sampling_ratio: SMOTE ratio, "auto", or None to train without oversampling.
        max_epochs: Upper bound on training epochs.
        seed: Recorded with reports; the training rng is passed in separately.
        weighted_aggregation: Scale neighbour messages by edge weight.
    '''
    hidden_size: int = 32
    graph_hops: int = 2
    lr: float = 0.001
    batch_size: int = 16
    mlp_hidden: tuple[int, ...] = (32, 16)
    sampling_ratio: Any = "auto"
    max_epochs: int = 100
    seed: int = 0
    weighted_aggregation: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "mlp_hidden", tuple(int(x) for x in self.mlp_hidden))
        object.__setattr__(self, "sampling_ratio", parse_ratio(self.sampling_ratio))
        for name in ("hidden_size", "graph_hops", "batch_size", "max_epochs"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if any(w < 1 for w in self.mlp_hidden):
            raise ConfigError(f"mlp_hidden widths must be >= 1, got {self.mlp_hidden}")

    def in_search_space(self, space: Mapping[str, Sequence] = SEARCH_SPACE) -> bool:
        return all(getattr(self, key) in values for key, values in space.items())

    def sampling(self) -> SamplingConfig | None:
        return None if self.sampling_ratio is None else SamplingConfig(self.sampling_ratio)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp_hidden"] = list(self.mlp_hidden)
        if d["sampling_ratio"] is None:
            d["sampling_ratio"] = "none"
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ModelConfig:
        known = {f: d[f] for f in cls.__dataclass_fields__ if f in d}
        return cls(**known)


@dataclass
class BiGGNNParams:
    '''
    Named parameter arrays of the graph model.

    Layout (weights are (out, in)):
        proj.W, proj.b          input projection d_in -> hidden
        fuse.W, fuse.b          gate over [a; b; a*b; a-b], 4*hidden -> hidden
        gru.{W,U,b}_{z,r,h}     GRU shared by every hop
        mlp.<i>.W, mlp.<i>.b    classifier hidden layers
        mlp.out.W, mlp.out.b    last hidden -> 2 classes
    '''
    arrays: dict[str, np.ndarray]

    @classmethod
    def init(cls, config: ModelConfig, input_size: int, rng: np.random.Generator) -> BiGGNNParams:
        h = config.hidden_size
        arrays: dict[str, np.ndarray] = {
            "proj.W": nn.init_weight(rng, h, input_size),
            "proj.b": np.zeros(h),
            "fuse.W": nn.init_weight(rng, h, 4 * h),
            "fuse.b": np.zeros(h),
        }
        arrays.update({f"gru.{k}": v for k, v in nn.init_gru(rng, h, h).items()})
        width = h
        for i, out in enumerate(config.mlp_hidden):
            arrays[f"mlp.{i}.W"] = nn.init_weight(rng, out, width)
            arrays[f"mlp.{i}.b"] = np.zeros(out)
            width = out
        arrays["mlp.out.W"] = nn.init_weight(rng, 2, width)
        arrays["mlp.out.b"] = np.zeros(2)
        return cls(arrays)

    @property
    def input_size(self) -> int:
        return self.arrays["proj.W"].shape[1]

    @property
    def hidden_size(self) -> int:
        return self.arrays["proj.W"].shape[0]

    def n_mlp_layers(self) -> int:
        return sum(1 for k in self.arrays if k.startswith("mlp.") and k.endswith(".W")) - 1

    def copy(self) -> BiGGNNParams:
        return BiGGNNParams({k: v.copy() for k, v in self.arrays.items()})

    def tensors(self, requires_grad: bool = False) -> dict[str, nn.Tensor]:
        return {k: nn.Tensor(v, requires_grad=requires_grad, name=k) for k, v in self.arrays.items()}

    def check(self, config: ModelConfig) -> None:
        h = config.hidden_size
        expected = {"proj.b": (h,), "fuse.W": (h, 4 * h), "fuse.b": (h,)}
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise ShapeError(f"parameter {name} has shape {self.arrays[name].shape}, expected {shape}")
        if self.hidden_size != h:
            raise ShapeError(f"parameters have hidden size {self.hidden_size}, config says {h}")
        if self.n_mlp_layers() != len(config.mlp_hidden):
            raise ShapeError("classifier depth does not match mlp_hidden")
        if not nn.parameters_finite(self.arrays.values()):
            raise NumericError("parameters contain non-finite values")

    def save(self, path: str, config: ModelConfig | None = None) -> None:
        meta = {"config": config.to_dict()} if config is not None else {}
        nn.save_checkpoint(path, self.arrays, **meta)

    @classmethod
    def load(cls, path: str) -> tuple[BiGGNNParams, ModelConfig | None]:
        arrays, meta = nn.load_checkpoint(path)
        config = ModelConfig.from_dict(meta["config"]) if "config" in meta else None
        return cls(arrays), config


@dataclass
class TrainHistory:
    '''
    Per-epoch training record.

    `selected_epoch` is 1-based and is the first epoch reaching the best
    validation score.
    '''
    train_loss: list[float] = field(default_factory=list)
    val_metric: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    selected_epoch: int = 0
    val_metric_name: str = "auc"
    augmented: AugmentedDataset | None = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict:
        return {
            "train_loss": list(self.train_loss),
            "val_metric": list(self.val_metric),
            "train_accuracy": list(self.train_accuracy),
            "selected_epoch": self.selected_epoch,
            "val_metric_name": self.val_metric_name,
        }


def aggregate_directional(
    graph: DependencyGraph,
    H: np.ndarray,
    direction: Direction | str,
    weighted: bool = False,
) -> np.ndarray:
    '''
    Sum of neighbour rows for every node.

    BACKWARD sums over incoming neighbours, FORWARD over outgoing ones. Nodes
    without such neighbours get a zero row.
    '''
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != graph.n_nodes:
        raise ShapeError(f"H has shape {H.shape}, graph has {graph.n_nodes} nodes")
    return np.asarray(graph.adjacency(direction, weighted=weighted) @ H)


def fuse(a, b, W_z, b_z) -> nn.Tensor:
    '''
    Gated sum of the two directional aggregates.

        z = sigmoid(W_z [a; b; a*b; a-b] + b_z)
        out = z * a + (1 - z) * b

    `a` is the incoming (backward) aggregate, `b` the outgoing (forward) one.
    '''
    a, b = nn.as_tensor(a), nn.as_tensor(b)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"cannot fuse shapes {a.shape} and {b.shape}")
    W_z = nn.as_tensor(W_z)
    if W_z.shape != (a.shape[1], 4 * a.shape[1]):
        raise ShapeError(f"W_z has shape {W_z.shape}, expected {(a.shape[1], 4 * a.shape[1])}")
    z = nn.sigmoid(nn.linear(nn.concat([a, b, a * b, a - b], axis=1), W_z, b_z))
    return z * a + (1.0 - z) * b


class _Adjacency:
    """Both aggregation matrices of one graph, built once per training run."""

    def __init__(self, graph: DependencyGraph, weighted: bool) -> None:
        self.backward = graph.adjacency(Direction.BACKWARD, weighted=weighted)
        self.forward = graph.adjacency(Direction.FORWARD, weighted=weighted)


def _gru(t: Mapping[str, nn.Tensor]) -> nn.GruParams:
    return nn.GruParams(**{k: t[f"gru.{k}"] for k in ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")})


def _check_finite(h: nn.Tensor, hop: int) -> None:
    if not np.all(np.isfinite(h.data)):
        raise NumericError(f"non-finite node state at hop {hop}")


def _encode(adj: _Adjacency, X: np.ndarray, t: Mapping[str, nn.Tensor], config: ModelConfig) -> nn.Tensor:
    h = nn.linear(X, t["proj.W"], t["proj.b"])
    _check_finite(h, 0)
    gru = _gru(t)
    for hop in range(1, config.graph_hops + 1):
        a = nn.spmm(adj.backward, h)
        b = nn.spmm(adj.forward, h)
        h = nn.gru_cell(h, fuse(a, b, t["fuse.W"], t["fuse.b"]), gru)
        _check_finite(h, hop)
    return h


def _classify(h: nn.Tensor, t: Mapping[str, nn.Tensor], n_layers: int) -> nn.Tensor:
    for i in range(n_layers):
        h = nn.tanh(nn.linear(h, t[f"mlp.{i}.W"], t[f"mlp.{i}.b"]))
    return nn.softmax(nn.linear(h, t["mlp.out.W"], t["mlp.out.b"]), axis=1)


def forward_tensors(
    graph: DependencyGraph,
    X: np.ndarray,
    tensors: Mapping[str, nn.Tensor],
    config: ModelConfig,
    adjacency: _Adjacency | None = None,
) -> nn.Tensor:
    """Differentiable forward pass; returns (n_nodes, 2) class probabilities."""
    adj = adjacency or _Adjacency(graph, config.weighted_aggregation)
    h = _encode(adj, X, tensors, config)
    return _classify(h, tensors, len(config.mlp_hidden))


def forward(graph: DependencyGraph, X: np.ndarray, params: BiGGNNParams, config: ModelConfig) -> np.ndarray:
    '''
    Class probabilities for every node.

    Returns:
        (n_nodes, 2) array; column 1 is the defective-class probability.
    '''
    X = check_feature_matrix(graph, X)
    if X.shape[1] != params.input_size:
        raise ShapeError(f"X has {X.shape[1]} features, parameters expect {params.input_size}")
    params.check(config)
    return forward_tensors(graph, X, params.tensors(), config).data


def embed(graph: DependencyGraph, X: np.ndarray, params: BiGGNNParams, config: ModelConfig) -> np.ndarray:
    """Node states after the last hop, before the classifier."""
    X = check_feature_matrix(graph, X)
    params.check(config)
    adj = _Adjacency(graph, config.weighted_aggregation)
    return _encode(adj, X, params.tensors(), config).data


def predict_proba(graph: DependencyGraph, X: np.ndarray, params: BiGGNNParams, config: ModelConfig) -> np.ndarray:
    return forward(graph, X, params, config)[:, 1]


def _validation_score(probs: np.ndarray, labels: np.ndarray, val_idx: np.ndarray) -> tuple[float, str]:
    y = labels[val_idx]
    if val_idx.size and np.unique(y).size == 2:
        return auc(probs[val_idx, 1], y), "auc"
    if val_idx.size:
        loss = float(nn.cross_entropy(probs, labels, val_idx).data)
        return -loss, "neg_loss"
    return math.nan, "none"


def train(
    graph: DependencyGraph,
    X: np.ndarray,
    labels: np.ndarray,
    train_mask: np.ndarray,
    val_mask: np.ndarray,
    config: ModelConfig,
    rng: np.random.Generator,
    test_mask: np.ndarray | None = None,
) -> tuple[BiGGNNParams, TrainHistory]:
    '''
    Oversample, then fit the graph model with mini-batch Adam.

    Message passing always runs on the whole (augmented) graph; only the loss is
    restricted to the current batch of training nodes. After every epoch the
    validation nodes are scored by AUC and the parameters of the best epoch are
    kept.

    Args:
        graph: Graph over all nodes (train, validation and test).
        X: (n_nodes, d) initial features.
        labels: (n_nodes,) binary labels.
        train_mask, val_mask: Boolean node masks.
        config: Hyperparameters.
        rng: Only source of randomness (oversampling, init, batch order).
        test_mask: Carried into the augmented dataset untouched.

    Returns:
        (params at the selected epoch, history). `history.augmented` holds the
        augmented graph and features the parameters were trained on.
    '''
    X = check_feature_matrix(graph, X)
    labels = np.asarray(labels, dtype=np.int64)
    train_mask = np.asarray(train_mask, dtype=bool)
    if not train_mask.any():
        raise TrainingError("training mask is empty")
    if np.unique(labels[train_mask]).size < 2:
        raise TrainingError("training nodes contain a single class")

    aug = smote_augment(graph, X, labels, train_mask, config.sampling(), rng, val_mask, test_mask)
    params = BiGGNNParams.init(config, X.shape[1], rng)
    adj = _Adjacency(aug.graph, config.weighted_aggregation)
    adam = nn.AdamState(lr=config.lr)

    train_idx = np.flatnonzero(aug.train_mask)
    original_train = train_idx[train_idx < aug.n_original]
    val_idx = np.flatnonzero(aug.val_mask)
    history = TrainHistory(augmented=aug)
    best_score = -math.inf
    best = params.copy()
    fallback_logged = False

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(train_idx)
        total = 0.0
        for start in range(0, order.size, config.batch_size):
            batch = order[start:start + config.batch_size]
            t = params.tensors(requires_grad=True)
            probs = forward_tensors(aug.graph, aug.features, t, config, adj)
            loss = nn.cross_entropy(probs, aug.labels, batch)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"loss became non-finite in epoch {epoch}")
            loss.backward()
            grads = {k: v.grad for k, v in t.items() if v.grad is not None}
            arrays, adam = nn.adam_step(params.arrays, grads, adam)
            params = BiGGNNParams(arrays)
            total += value * batch.size

        probs = forward_tensors(aug.graph, aug.features, params.tensors(), config, adj).data
        score, name = _validation_score(probs, aug.labels, val_idx)
        if name != "auc" and not fallback_logged:
            logger.warning("validation split has a single class; selecting by %s", name)
            fallback_logged = True
        if name == "none":
            score = -total / train_idx.size
        history.val_metric_name = name if name != "none" else "neg_train_loss"

        history.train_loss.append(total / train_idx.size)
        history.val_metric.append(float(score))
        predicted = probs[original_train].argmax(axis=1)
        history.train_accuracy.append(float(np.mean(predicted == aug.labels[original_train])))

        if score > best_score:
            best_score = score
            best = params.copy()
            history.selected_epoch = epoch
        logger.debug("epoch %d loss=%.5f val=%.5f", epoch, history.train_loss[-1], score)

    return best, history


def sample_config(space: Mapping[str, Sequence], rng: np.random.Generator, base: ModelConfig) -> ModelConfig:
    """Draw one value per key uniformly, in the key order of `space`."""
    picks = {key: values[int(rng.integers(len(values)))] for key, values in space.items()}
    return replace(base, **picks)


def random_search(
    space: Mapping[str, Sequence],
    budget: int,
    eval_fn: Callable[[ModelConfig], float],
    rng: np.random.Generator,
    base: ModelConfig | None = None,
    trials: list | None = None,
) -> ModelConfig:
    '''
    Uniform random search over a Cartesian grid.

    Every sampled (config, score) pair is appended to `trials` when given.
    Ties go to the config sampled first.
    '''
    if budget < 1:
        raise ConfigError(f"search budget must be >= 1, got {budget}")
    base = base or ModelConfig()
    if trials is None:
        trials = []
    best: ModelConfig | None = None
    best_score = -math.inf
    for i in range(budget):
        cfg = sample_config(space, rng, base)
        score = float(eval_fn(cfg))
        trials.append((cfg, score))
        logger.info("trial %d/%d score=%.4f %s", i + 1, budget, score, cfg.to_dict())
        if best is None or score > best_score:
            best, best_score = cfg, score
    return best
