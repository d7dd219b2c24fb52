"""Reverse-mode automatic differentiation on numpy arrays, plus SGD/AdamW.

Graphs are built define-by-run: every op returns a fresh ``Tensor`` node and
records a backward closure only if some input requires gradients. Values are
float64 throughout. Gradients accumulate (+=) into leaf tensors across
repeated ``backward`` calls until explicitly zeroed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigError, ContractError, ShapeError

_graph_ids = itertools.count()


class Tensor:
    """A node in the computation graph: a float64 array plus gradient state."""

    __slots__ = ("values", "grad", "requires_grad", "graph_id", "name",
                 "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.graph_id = next(_graph_ids)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad}{label})"


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def parameter(values, name: str | None = None) -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


def _node(values: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    """Build an op output; record the graph edge only if gradients can flow."""
    out = Tensor(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] > 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_result_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.values.shape, b.values.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.values.shape} and {b.values.shape}") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_result_shape("add", a, b)
    return _node(a.values + b.values, (a, b),
                 lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_result_shape("sub", a, b)
    return _node(a.values - b.values, (a, b),
                 lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_result_shape("mul", a, b)
    return _node(a.values * b.values, (a, b),
                 lambda g: (g * b.values, g * a.values))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy's 1-D/2-D semantics (no batched >2-D inputs)."""
    av, bv = a.values, b.values
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ShapeError(f"matmul: only 1-D/2-D operands supported, got {av.shape} and {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree for {av.shape} and {bv.shape}")

    def backward(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 1 and bv.ndim == 2:
            return bv @ g, np.outer(av, g)
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g * bv, g * av  # both 1-D: inner product

    return _node(av @ bv, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _node(a.values * factor, (a,), lambda g: (g * factor,))


def tsum(a: Tensor) -> Tensor:
    return _node(np.asarray(a.values.sum()), (a,),
                 lambda g: (np.full_like(a.values, float(g)),))


def mean(a: Tensor) -> Tensor:
    n = a.values.size
    return _node(np.asarray(a.values.mean()), (a,),
                 lambda g: (np.full_like(a.values, float(g) / n),))


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0
    return _node(np.maximum(a.values, 0.0), (a,), lambda g: (g * mask,))


def silu(a: Tensor) -> Tensor:
    s = expit(a.values)
    out = a.values * s
    # d/dx x*sigmoid(x) = s + x*s*(1-s)
    return _node(out, (a,), lambda g: (g * (s + a.values * s * (1.0 - s)),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.values)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def square(a: Tensor) -> Tensor:
    return _node(a.values * a.values, (a,), lambda g: (g * 2.0 * a.values,))


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: needs at least one input")
    ndim = tensors[0].values.ndim
    for t in tensors:
        if t.values.ndim != ndim:
            raise ShapeError(f"concat: rank mismatch {[t.values.shape for t in tensors]}")
    try:
        values = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.values.shape for t in tensors]}") from None
    sizes = [t.values.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(values, tuple(tensors), backward)


def broadcast(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        values = np.broadcast_to(a.values, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast: cannot expand {a.values.shape} to {tuple(shape)}") from None
    return _node(values, (a,), lambda g: (_unbroadcast(g, a.values.shape),))


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of elementwise squared differences (scalar output)."""
    if a.values.shape != b.values.shape:
        raise ShapeError(f"mse: incompatible shapes {a.values.shape} and {b.values.shape}")
    diff = a.values - b.values
    n = diff.size

    def backward(g):
        d = (2.0 * float(g) / n) * diff
        return d, -d

    return _node(np.asarray(np.mean(diff * diff)), (a, b), backward)


_OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "matmul": matmul,
    "scale": scale,
    "sum": tsum,
    "mean": mean,
    "relu": relu,
    "silu": silu,
    "tanh": tanh,
    "square": square,
    "concat": concat,
    "broadcast": broadcast,
    "mse": mse,
}


def forward_op(op_kind: str, inputs: list[Tensor], **params) -> Tensor:
    """Dispatch an op by name. Unknown names raise ConfigError."""
    try:
        op = _OPS[op_kind]
    except KeyError:
        raise ConfigError(f"unknown op kind {op_kind!r}") from None
    if op_kind == "concat":
        return op(list(inputs), **params)
    return op(*inputs, **params)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.graph_id in seen:
            continue
        seen.add(node.graph_id)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf.

    Only leaves retain gradients; intermediate adjoints live in a transient
    table. Repeated calls accumulate until ``zero_grads`` is used.
    """
    if loss.values.shape != ():
        raise ContractError(f"backward: loss must be scalar-shaped, got {loss.values.shape}")
    if not loss.requires_grad:
        return
    adjoint: dict[int, np.ndarray] = {loss.graph_id: np.ones_like(loss.values)}
    for node in reversed(_toposort(loss)):
        g = adjoint.pop(node.graph_id, None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.values)
            node.grad += _unbroadcast(g, node.values.shape)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            pg = _unbroadcast(np.asarray(pg, dtype=np.float64), parent.values.shape)
            if parent.graph_id in adjoint:
                adjoint[parent.graph_id] += pg
            else:
                adjoint[parent.graph_id] = pg


def zero_grads(params: list[Tensor]) -> None:
    for p in params:
        p.grad = None


@dataclass
class OptimizerState:
    """First-order optimizer state; ``kind`` is "adamw" or "sgd".

    AdamW follows the decoupled-weight-decay formulation with bias
    correction; SGD is the plain update (weight decay applied the same,
    decoupled way when nonzero).
    """

    kind: str = "adamw"
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict[int, np.ndarray] = field(default_factory=dict)
    second_moment: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("adamw", "sgd"):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        for b in (self.beta1, self.beta2):
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"betas must lie in [0, 1), got {b}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be nonnegative, got {self.weight_decay}")


def optimizer_step(state: OptimizerState, params: list[Tensor]) -> None:
    """Apply one update to every parameter, then zero their gradients."""
    for p in params:
        if p.grad is None:
            label = p.name if p.name is not None else f"graph_id={p.graph_id}"
            raise ContractError(f"optimizer_step: parameter {label} has no gradient")
    state.step_count += 1
    t = state.step_count
    lr = state.learning_rate
    for p in params:
        g = p.grad
        if state.kind == "sgd":
            p.values -= lr * g
        else:
            m = state.first_moment.setdefault(p.graph_id, np.zeros_like(p.values))
            v = state.second_moment.setdefault(p.graph_id, np.zeros_like(p.values))
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            m_hat = m / (1.0 - state.beta1 ** t)
            v_hat = v / (1.0 - state.beta2 ** t)
            p.values -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if state.weight_decay:
            p.values -= lr * state.weight_decay * p.values
    zero_grads(params)
