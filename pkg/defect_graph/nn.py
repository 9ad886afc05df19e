'''
Small dense-tensor core with reverse-mode differentiation.

Every Tensor wraps a float64 numpy array. Operations record their parents and
a function mapping the output gradient to one gradient per parent; `backward`
walks the recorded graph in reverse topological order. Only what the graph
model needs is here: elementwise arithmetic, matmul, the usual activations,
sparse @ dense products for message passing, row gathering and reductions.
'''

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.special import expit

from .errors import EvaluationError, GradCheckError, OptimizerError, ShapeError, ValidationError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
LOG_CLAMP = 1e-12


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` back down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    def __init__(self, data, requires_grad: bool = False, name: str = "") -> None:
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], tuple] | None = None

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Sequence[Tensor],
        grad_fn: Callable[[np.ndarray], tuple],
    ) -> Tensor:
        '''
        Result of an operation.

        Args:
            data: Forward value.
            parents: Input tensors.
            grad_fn: Maps the output gradient to a tuple of gradients, one per
                parent (None for parents that need none).
        '''
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._grad_fn = grad_fn
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._grad_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(np.asarray(pg, dtype=np.float64), parent.shape)
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    def __add__(self, other) -> Tensor:
        return add(self, other)

    def __radd__(self, other) -> Tensor:
        return add(other, self)

    def __sub__(self, other) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other) -> Tensor:
        return sub(other, self)

    def __mul__(self, other) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other) -> Tensor:
        return mul(other, self)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other) -> Tensor:
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor.from_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor.from_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor.from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return Tensor.from_op(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(a.data.T, (a,), lambda g: (g.T,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = expit(a.data)
    return Tensor.from_op(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return Tensor.from_op(t, (a,), lambda g: (g * (1.0 - t * t),))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(s, (a,), grad_fn)


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor.from_op(data, ts, grad_fn)


def spmm(A: sparse.spmatrix, x) -> Tensor:
    """Sparse (constant) matrix times dense tensor."""
    x = as_tensor(x)
    if A.shape[1] != x.shape[0]:
        raise ShapeError(f"cannot multiply sparse {A.shape} by {x.shape}")
    A = sparse.csr_matrix(A)
    At = A.T.tocsr()
    return Tensor.from_op(np.asarray(A @ x.data), (x,), lambda g: (np.asarray(At @ g),))


def take_rows(x, index) -> Tensor:
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)

    def grad_fn(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor.from_op(x.data[index], (x,), grad_fn)


def tsum(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def grad_fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor.from_op(out, (a,), grad_fn)


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / count)


def linear(x, W, b=None) -> Tensor:
    '''
    x @ W.T + b with W laid out (out_features, in_features).
    '''
    x, W = as_tensor(x), as_tensor(W)
    if x.shape[-1] != W.shape[1]:
        raise ShapeError(f"linear layer expects {W.shape[1]} inputs, got {x.shape[-1]}")
    out = matmul(x, transpose(W))
    return out if b is None else add(out, b)


@dataclass
class GruParams:
    '''
    Gated recurrent unit weights. Input weights are (hidden, input), hidden
    weights are (hidden, hidden), biases are (hidden,).
    '''
    W_z: Tensor
    U_z: Tensor
    b_z: Tensor
    W_r: Tensor
    U_r: Tensor
    b_r: Tensor
    W_h: Tensor
    U_h: Tensor
    b_h: Tensor

    @property
    def hidden_size(self) -> int:
        return self.W_z.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_z.shape[1]

    def check(self) -> None:
        hid, inp = self.hidden_size, self.input_size
        for name in ("W_z", "W_r", "W_h"):
            if getattr(self, name).shape != (hid, inp):
                raise ShapeError(f"GRU {name} has shape {getattr(self, name).shape}, expected {(hid, inp)}")
        for name in ("U_z", "U_r", "U_h"):
            if getattr(self, name).shape != (hid, hid):
                raise ShapeError(f"GRU {name} has shape {getattr(self, name).shape}, expected {(hid, hid)}")
        for name in ("b_z", "b_r", "b_h"):
            if getattr(self, name).shape != (hid,):
                raise ShapeError(f"GRU {name} has shape {getattr(self, name).shape}, expected {(hid,)}")


def gru_cell(h_prev, x, params: GruParams) -> Tensor:
    '''
    One GRU update on a batch of rows.

        z  = sigmoid(W_z x + U_z h + b_z)
        r  = sigmoid(W_r x + U_r h + b_r)
        h~ = tanh(W_h x + U_h (r * h) + b_h)
        out = (1 - z) * h + z * h~
    '''
    params.check()
    h_prev, x = as_tensor(h_prev), as_tensor(x)
    if h_prev.ndim != 2 or x.ndim != 2 or h_prev.shape[0] != x.shape[0]:
        raise ShapeError(f"GRU inputs must be row-aligned matrices, got {h_prev.shape} and {x.shape}")
    if h_prev.shape[1] != params.hidden_size or x.shape[1] != params.input_size:
        raise ShapeError(
            f"GRU expects hidden {params.hidden_size} / input {params.input_size}, "
            f"got {h_prev.shape[1]} / {x.shape[1]}"
        )
    z = sigmoid(linear(x, params.W_z) + linear(h_prev, params.U_z) + params.b_z)
    r = sigmoid(linear(x, params.W_r) + linear(h_prev, params.U_r) + params.b_r)
    h_tilde = tanh(linear(x, params.W_h) + linear(r * h_prev, params.U_h) + params.b_h)
    return (1.0 - z) * h_prev + z * h_tilde


def _mask_rows(mask, n: int) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype == bool:
        if mask.shape != (n,):
            raise ShapeError(f"mask has shape {mask.shape}, expected ({n},)")
        return np.flatnonzero(mask)
    return mask.astype(np.int64).reshape(-1)


def cross_entropy(probs, labels, mask=None) -> Tensor:
    '''
    Mean of -log p(true class) over the masked rows.

    Args:
        probs: (n, 2) class probabilities, rows summing to 1.
        labels: (n,) integer labels.
        mask: Boolean mask or index array selecting the rows; all rows if None.

    Notes:
        Probabilities are clamped to at least 1e-12 before the log.
    '''
    probs = as_tensor(probs)
    labels = np.asarray(labels, dtype=np.int64)
    n = probs.shape[0]
    rows = np.arange(n) if mask is None else _mask_rows(mask, n)
    if rows.size == 0:
        raise EvaluationError("cross-entropy over an empty mask")
    sums = probs.data[rows].sum(axis=1)
    if not np.all(np.abs(sums - 1.0) <= 1e-6):
        raise EvaluationError("probability rows must sum to 1")

    y = labels[rows]
    p = probs.data[rows, y]
    clamped = np.clip(p, LOG_CLAMP, 1.0)
    loss = -np.mean(np.log(clamped))

    def grad_fn(g):
        full = np.zeros_like(probs.data)
        local = np.where(p >= LOG_CLAMP, -1.0 / (rows.size * clamped), 0.0)
        np.add.at(full, (rows, y), float(g) * local)
        return (full,)

    return Tensor.from_op(np.array(loss), (probs,), grad_fn)


def init_weight(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], shape (fan_out, fan_in)."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_gru(rng: np.random.Generator, input_size: int, hidden_size: int) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for gate in ("z", "r", "h"):
        out[f"W_{gate}"] = init_weight(rng, hidden_size, input_size)
        out[f"U_{gate}"] = init_weight(rng, hidden_size, hidden_size)
        out[f"b_{gate}"] = np.zeros(hidden_size)
    return out


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> tuple[dict[str, np.ndarray], AdamState]:
    '''
    One Adam update with bias correction.

    Returns new parameter arrays; `state` is advanced in place and returned.
    Parameters without a gradient entry are treated as having gradient zero.
    '''
    for name, g in grads.items():
        if name not in params:
            raise OptimizerError(f"gradient for unknown parameter '{name}'")
        if np.shape(g) != np.shape(params[name]):
            raise ShapeError(f"gradient for '{name}' has shape {np.shape(g)}, expected {np.shape(params[name])}")
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient for parameter '{name}'")

    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    updated: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = np.asarray(grads.get(name, np.zeros_like(p)), dtype=np.float64)
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        updated[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return updated, state


def grad_check(
    loss_fn: Callable[[dict[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-4,
) -> float:
    '''
    Compare analytic gradients with central finite differences.

    Args:
        loss_fn: Maps named parameter tensors to a scalar loss tensor. Must be
            pure so it can be evaluated repeatedly.
        params: Named parameter arrays; not modified.
        eps: Finite-difference step, within [1e-6, 1e-3].

    Returns:
        Max over every coordinate of |a - n| / max(1, |a|, |n|).
    '''
    if not 1e-6 <= eps <= 1e-3:
        raise ValidationError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    leaves = {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in base.items()}
    loss = loss_fn(leaves)
    if not np.isfinite(loss.data).all():
        raise GradCheckError("loss is not finite at the base point")
    loss.backward()

    def evaluate(name: str, idx: tuple, delta: float) -> float:
        shifted = {k: Tensor(v) for k, v in base.items()}
        shifted[name].data[idx] += delta
        value = float(loss_fn(shifted).data)
        if not math.isfinite(value):
            raise GradCheckError(f"loss is not finite when perturbing '{name}' at {idx}")
        return value

    worst = 0.0
    for name, arr in base.items():
        analytic = leaves[name].grad
        if analytic is None:
            analytic = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            numeric = (evaluate(name, idx, eps) - evaluate(name, idx, -eps)) / (2.0 * eps)
            a = float(analytic[idx])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst


def save_checkpoint(path: str, arrays: Mapping[str, np.ndarray], **meta) -> None:
    '''
    Write named arrays to a versioned .npz file.

    Extra keyword arguments are stored as a JSON string under `__meta__`.
    '''
    for name in arrays:
        if name.startswith("__"):
            raise ValidationError(f"parameter name '{name}' is reserved")
    payload = {name: np.asarray(a, dtype=np.float64) for name, a in arrays.items()}
    payload["__format_version__"] = np.array(CHECKPOINT_FORMAT_VERSION)
    payload["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as f:
        np.savez(f, **payload)
    logger.info("wrote checkpoint %s (%d arrays)", path, len(arrays))


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint written by save_checkpoint. Returns (arrays, meta)."""
    if not os.path.isfile(path):
        raise ValidationError(f"file not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        if "__format_version__" not in data.files:
            raise ValidationError(f"{path} is not a checkpoint (no format version)")
        version = int(data["__format_version__"])
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValidationError(f"unsupported checkpoint version {version} in {path}")
        meta = json.loads(str(data["__meta__"])) if "__meta__" in data.files else {}
        arrays = {k: data[k].copy() for k in data.files if not k.startswith("__")}
    return arrays, meta


def parameters_finite(arrays: Iterable[np.ndarray]) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)
