"""A small reverse-mode autodiff engine over float64 numpy arrays, plus Adagrad.

Primitives are plain functions.  Inside ``with Graph() as g:`` every primitive
whose inputs require gradients is recorded on ``g`` (in creation order, which is
a topological order); outside any graph the primitives only compute values, so
inference code pays no taping cost.

    with Graph() as g:
        loss = masked_cross_entropy(matmul(x, w), targets, mask)
    grads = backward(g, loss, [w])
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ContractViolation, ShapeError

__all__ = [
    "Tensor", "Graph", "Node", "parameter", "constant", "backward",
    "add", "sub", "mul", "matmul", "concat", "stack", "getitem", "reshape",
    "transpose", "tensor_sum", "mean", "sigmoid", "tanh", "log", "softmax",
    "log_softmax", "log_sigmoid", "embedding", "target_log_prob",
    "masked_cross_entropy", "blend", "apply_primitive", "PRIMITIVES",
    "OptimizerState", "adagrad_step", "clip_grad_norm", "Adagrad", "init_uniform",
]

_local = threading.local()


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not a primitive")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def constant(data):
    return data if isinstance(data, Tensor) else Tensor(data)


@dataclass
class Node:
    primitive: str
    out: Tensor
    inputs: tuple
    vjp: object


class Graph:
    """Tape of primitive applications, usable as a context manager."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)


def _active_graph():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def _emit(primitive, value, inputs, vjp):
    graph = _active_graph()
    track = graph is not None and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=track)
    if track:
        graph.nodes.append(Node(primitive, out, inputs, vjp))
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(primitive, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(primitive, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# primitives

def add(a, b):
    a, b = constant(a), constant(b)
    _broadcast_shape("add", a, b)
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = constant(a), constant(b)
    _broadcast_shape("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = constant(a), constant(b)
    _broadcast_shape("mul", a, b)
    return _emit("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


def matmul(a, b):
    """Matrix product.  ``a`` may carry leading batch axes when ``b`` is 2-D;
    with two 3-D operands the leading axis is a shared batch axis."""
    a, b = constant(a), constant(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    if b.ndim == 2:
        def vjp(g):
            ga = g @ b.data.T if a.requires_grad else None
            gb = None
            if b.requires_grad:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
    elif a.ndim == 3 and b.ndim == 3 and a.shape[0] == b.shape[0]:
        def vjp(g):
            ga = g @ np.swapaxes(b.data, 1, 2) if a.requires_grad else None
            gb = np.swapaxes(a.data, 1, 2) @ g if b.requires_grad else None
            return ga, gb
    else:
        raise ShapeError("matmul", a.shape, b.shape, detail="unsupported batch layout")
    return _emit("matmul", a.data @ b.data, (a, b), vjp)


def concat(tensors, axis=-1):
    tensors = tuple(constant(t) for t in tensors)
    try:
        value = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    ax = axis % value.ndim
    cuts = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _emit("concat", value, tensors, lambda g: tuple(np.split(g, cuts, axis=ax)))


def stack(tensors, axis=0):
    tensors = tuple(constant(t) for t in tensors)
    try:
        value = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("stack", *(t.shape for t in tensors)) from None
    ax = axis % value.ndim
    return _emit("stack", value, tensors,
                 lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(tensors))))


def getitem(x, idx):
    """Basic (slice/int) indexing only, so the adjoint is a plain scatter."""
    x = constant(x)
    parts = idx if isinstance(idx, tuple) else (idx,)
    if not all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts):
        raise ContractViolation("getitem supports basic slicing only")

    def vjp(g):
        z = np.zeros_like(x.data)
        z[idx] = g
        return (z,)

    try:
        value = x.data[idx]
    except IndexError:
        raise ShapeError("getitem", x.shape, detail=f"index {idx!r}") from None
    return _emit("getitem", value, (x,), vjp)


def reshape(x, shape):
    x = constant(x)
    try:
        value = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, tuple(shape)) from None
    return _emit("reshape", value, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    x = constant(x)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError("transpose", x.shape, detail=f"axes {axes}")
    inverse = np.argsort(axes)
    return _emit("transpose", np.transpose(x.data, axes), (x,),
                 lambda g: (np.transpose(g, inverse),))


def tensor_sum(x, axis=None, keepdims=False):
    x = constant(x)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _emit("sum", x.data.sum(axis=axis, keepdims=keepdims), (x,), vjp)


def mean(x, axis=None):
    x = constant(x)
    n = x.size if axis is None else x.shape[axis]
    return mul(tensor_sum(x, axis=axis), 1.0 / n)


def sigmoid(x):
    x = constant(x)
    y = expit(x.data)
    return _emit("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x):
    x = constant(x)
    y = np.tanh(x.data)
    return _emit("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def log(x):
    x = constant(x)
    return _emit("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def _log_softmax_values(z, axis=-1):
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(x, axis=-1):
    x = constant(x)
    y = np.exp(_log_softmax_values(x.data, axis))
    return _emit("softmax", y, (x,),
                 lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(x, axis=-1):
    x = constant(x)
    y = _log_softmax_values(x.data, axis)
    return _emit("log_softmax", y, (x,),
                 lambda g: (g - np.exp(y) * g.sum(axis=axis, keepdims=True),))


def log_sigmoid(x):
    x = constant(x)
    return _emit("log_sigmoid", -np.logaddexp(0.0, -x.data), (x,),
                 lambda g: (g * expit(-x.data),))


def embedding(table, ids):
    table = constant(table)
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeError("embedding", table.shape, detail="table must be 2-D")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractViolation(
            f"embedding: ids outside [0, {table.shape[0]}) (got {ids.min()}..{ids.max()})")

    def vjp(g):
        z = np.zeros_like(table.data)
        np.add.at(z, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (z,)

    return _emit("embedding", table.data[ids], (table,), vjp)


def _check_targets(primitive, logits, targets):
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(primitive, logits.shape, targets.shape)
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[-1]):
        raise ContractViolation(f"{primitive}: target id out of range")


def target_log_prob(logits, targets):
    """log softmax(logits)[..., target] for each leading position."""
    logits = constant(logits)
    targets = np.asarray(targets)
    _check_targets("target_log_prob", logits, targets)
    lp = _log_softmax_values(logits.data)
    picked = np.take_along_axis(lp, targets[..., None], axis=-1)[..., 0]

    def vjp(g):
        grad = -np.exp(lp) * g[..., None]
        np.put_along_axis(grad, targets[..., None],
                          np.take_along_axis(grad, targets[..., None], axis=-1) + g[..., None],
                          axis=-1)
        return (grad,)

    return _emit("target_log_prob", picked, (logits,), vjp)


def masked_cross_entropy(logits, targets, mask):
    """Mean negative log-likelihood over positions where ``mask`` is nonzero."""
    logits = constant(logits)
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=np.float64)
    _check_targets("masked_cross_entropy", logits, targets)
    if mask.shape != targets.shape:
        raise ShapeError("masked_cross_entropy", targets.shape, mask.shape)
    total = mask.sum()
    if total <= 0:
        raise ContractViolation("masked_cross_entropy: mask selects no positions")
    lp = _log_softmax_values(logits.data)
    picked = np.take_along_axis(lp, targets[..., None], axis=-1)[..., 0]
    value = -(mask * picked).sum() / total

    def vjp(g):
        w = (g / total) * mask
        grad = np.exp(lp) * w[..., None]
        np.put_along_axis(grad, targets[..., None],
                          np.take_along_axis(grad, targets[..., None], axis=-1) - w[..., None],
                          axis=-1)
        return (grad,)

    return _emit("masked_cross_entropy", value, (logits,), vjp)


def blend(mask, a, b):
    """mask * a + (1 - mask) * b for a constant mask; carries recurrent state past padding."""
    a, b = constant(a), constant(b)
    m = np.asarray(mask, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("blend", a.shape, b.shape)
    try:
        np.broadcast_shapes(m.shape, a.shape)
    except ValueError:
        raise ShapeError("blend", m.shape, a.shape) from None
    return _emit("blend", m * a.data + (1.0 - m) * b.data, (a, b),
                 lambda g: (g * m, g * (1.0 - m)))


PRIMITIVES = {
    "add": add, "sub": sub, "mul": mul, "matmul": matmul, "concat": concat,
    "stack": stack, "getitem": getitem, "reshape": reshape, "transpose": transpose,
    "sum": tensor_sum, "sigmoid": sigmoid, "tanh": tanh, "log": log,
    "softmax": softmax, "log_softmax": log_softmax, "log_sigmoid": log_sigmoid,
    "embedding": embedding, "target_log_prob": target_log_prob,
    "masked_cross_entropy": masked_cross_entropy, "blend": blend,
}


def apply_primitive(op_kind, *inputs, **kwargs):
    try:
        fn = PRIMITIVES[op_kind]
    except KeyError:
        raise ContractViolation(f"unknown primitive {op_kind!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# reverse pass

def backward(graph, loss, params=None):
    """Gradients of scalar ``loss`` w.r.t. ``params``.

    With ``params`` given, returns a list aligned with it (zeros for parameters
    the loss does not depend on).  Otherwise returns ``{tensor: grad}`` for every
    gradient-carrying leaf reached.
    """
    if loss.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    produced = set()
    for node in reversed(graph.nodes):
        produced.add(id(node.out))
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            k = id(t)
            prev = grads.get(k)
            grads[k] = gi if prev is None else prev + gi
    if params is not None:
        return [np.array(grads[id(p)], dtype=np.float64) if id(p) in grads
                else np.zeros_like(p.data) for p in params]
    leaves = {}
    for node in graph.nodes:
        for t in node.inputs:
            if t.requires_grad and id(t) not in produced and id(t) in grads:
                leaves[t] = np.array(grads[id(t)], dtype=np.float64)
    return leaves


# ---------------------------------------------------------------------------
# optimisation

@dataclass
class OptimizerState:
    accumulators: list = field(default_factory=list)
    learning_rate: float = 0.1
    epsilon: float = 1e-10

    @classmethod
    def zeros_like(cls, params, learning_rate=0.1, epsilon=1e-10):
        return cls([np.zeros_like(p.data) for p in params], learning_rate, epsilon)


def adagrad_step(params, grads, state):
    """In-place Adagrad update; returns ``(params, state)``."""
    if len(params) != len(grads) or len(params) != len(state.accumulators):
        raise ContractViolation(
            f"adagrad_step: {len(params)} params, {len(grads)} grads, "
            f"{len(state.accumulators)} accumulators")
    for p, g, acc in zip(params, grads, state.accumulators):
        if p.shape != np.shape(g) or acc.shape != p.shape:
            raise ContractViolation(
                f"adagrad_step: gradient shape {np.shape(g)} does not match parameter {p.shape}")
    for p, g, acc in zip(params, grads, state.accumulators):
        acc += g * g
        p.data -= state.learning_rate * g / (np.sqrt(acc) + state.epsilon)
    return params, state


def clip_grad_norm(grads, max_norm):
    """Scale ``grads`` so their global L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads)))
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return [g * scale for g in grads], norm


class Adagrad:
    """Adagrad with global-norm clipping bound to a fixed parameter list."""

    def __init__(self, params, lr=0.1, epsilon=1e-10, clip_norm=5.0):
        self.params = list(params)
        self.state = OptimizerState.zeros_like(self.params, lr, epsilon)
        self.clip_norm = clip_norm
        self.steps = 0

    def step(self, grads):
        grads, norm = clip_grad_norm(grads, self.clip_norm)
        adagrad_step(self.params, grads, self.state)
        self.steps += 1
        return norm


def init_uniform(rng, shape, scale=0.08):
    return rng.uniform(-scale, scale, size=shape)
