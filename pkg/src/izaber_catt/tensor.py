"""Dense f64 tensors with reverse-mode differentiation over an append-only tape.

A :class:`Graph` records every operation in insertion order; a :class:`Tensor`
is a handle to one recorded node. :class:`Parameter` objects live outside any
graph and enter it through :meth:`Graph.parameter`, which is where
:func:`backward` accumulates their gradients.

Operations act on the last two axes. Leading axes are batch axes, and a 2-D
operand (typically a weight) broadcasts over them in :func:`matmul`.
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, DimensionError, InputError

ArrayLike = Union[np.ndarray, Sequence, float]
Vjp = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


def as_array(value: ArrayLike) -> np.ndarray:
    """Copy ``value`` into a fresh float64 array."""
    return np.array(value, dtype=np.float64)


class Parameter:
    """A named trainable array with its gradient accumulator."""

    def __init__(self, name: str, value: ArrayLike) -> None:
        self.name = name
        self.value = as_array(value)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return int(self.value.size)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return "<Parameter {} {}>".format(self.name, list(self.shape))


class _Node:
    __slots__ = ("data", "parents", "vjp", "parameter")

    def __init__(self, data, parents, vjp, parameter):
        self.data = data
        self.parents = parents
        self.vjp = vjp
        self.parameter = parameter


class Tensor:
    """Handle to a node on a :class:`Graph`."""

    __slots__ = ("graph", "index")

    def __init__(self, graph: "Graph", index: int) -> None:
        self.graph = graph
        self.index = index

    @property
    def data(self) -> np.ndarray:
        return self.graph.nodes[self.index].data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        return "<Tensor #{} {}>".format(self.index, list(self.shape))


class Graph:
    """Append-only tape. Topological order is insertion order."""

    def __init__(self) -> None:
        self.nodes: List[_Node] = []
        self._leaves: Dict[int, Tensor] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, data: np.ndarray, parents: Sequence[Tensor] = (), vjp: Optional[Vjp] = None,
               parameter: Optional[Parameter] = None) -> Tensor:
        for parent in parents:
            if parent.graph is not self:
                raise ContractError("operands belong to different graphs")
        self.nodes.append(_Node(data, tuple(p.index for p in parents), vjp, parameter))
        return Tensor(self, len(self.nodes) - 1)

    def constant(self, value: ArrayLike) -> Tensor:
        return self.record(as_array(value))

    def parameter(self, param: Parameter) -> Tensor:
        """Leaf for ``param``. One leaf per Parameter object per graph."""
        leaf = self._leaves.get(id(param))
        if leaf is None:
            leaf = self.record(param.value, parameter=param)
            self._leaves[id(param)] = leaf
        return leaf


def _graph_of(*tensors: Tensor) -> Graph:
    graph = tensors[0].graph
    for t in tensors[1:]:
        if t.graph is not graph:
            raise ContractError("operands belong to different graphs")
    return graph


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _require_matrix(name: str, t: Tensor) -> None:
    if t.data.ndim < 2:
        raise DimensionError("{}: expected at least 2 axes, got shape {}".format(name, list(t.shape)))


# Arithmetic ------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    graph = _graph_of(a, b)
    _require_matrix("matmul", a)
    _require_matrix("matmul", b)
    A, B = a.data, b.data
    if A.shape[-1] != B.shape[-2]:
        raise DimensionError("matmul: cannot multiply {} by {}".format(list(A.shape), list(B.shape)))
    try:
        out = np.matmul(A, B)
    except ValueError:
        raise DimensionError("matmul: batch axes of {} and {} do not broadcast".format(
            list(A.shape), list(B.shape)))

    def vjp(g):
        return _unbroadcast(np.matmul(g, _swap(B)), A.shape), _unbroadcast(np.matmul(_swap(A), g), B.shape)

    return graph.record(out, (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    graph = _graph_of(a, b)
    if a.shape != b.shape:
        raise DimensionError("add: shapes {} and {} differ".format(list(a.shape), list(b.shape)))
    return graph.record(a.data + b.data, (a, b), lambda g: (g, g))


def add_row(x: Tensor, row: Tensor) -> Tensor:
    """Add ``row`` (shape ``[d]`` or ``[1, d]``) to every row of ``x``."""
    graph = _graph_of(x, row)
    width = x.shape[-1]
    if row.data.size != width or (row.data.ndim == 2 and row.shape[0] != 1) or row.data.ndim > 2:
        raise DimensionError("add_row: row {} does not fit width of {}".format(list(row.shape), list(x.shape)))
    r_shape = row.shape
    out = x.data + row.data.reshape(width)

    def vjp(g):
        return g, g.reshape(-1, width).sum(axis=0).reshape(r_shape)

    return graph.record(out, (x, row), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    graph = _graph_of(a, b)
    if a.shape != b.shape:
        raise DimensionError("mul: shapes {} and {} differ".format(list(a.shape), list(b.shape)))
    A, B = a.data, b.data
    return graph.record(A * B, (a, b), lambda g: (g * B, g * A))


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return x.graph.record(x.data * factor, (x,), lambda g: (g * factor,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    return x.graph.record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def transpose(x: Tensor) -> Tensor:
    _require_matrix("transpose", x)
    return x.graph.record(_swap(x.data).copy(), (x,), lambda g: (_swap(g),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError("reshape: cannot view {} as {}".format(list(original), list(shape)))
    return x.graph.record(out, (x,), lambda g: (g.reshape(original),))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return x.graph.record(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_axis(x: Tensor, axis: int) -> Tensor:
    """Mean over ``axis``, which is dropped from the result."""
    shape = x.shape
    axis = axis % len(shape)
    count = shape[axis]

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape) / count,)

    return x.graph.record(x.data.mean(axis=axis), (x,), vjp)


# Structure -------------------------------------------------------------------

def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    graph = _graph_of(a, b)
    if a.shape[:-1] != b.shape[:-1]:
        raise DimensionError("concat_cols: row shapes {} and {} differ".format(list(a.shape), list(b.shape)))
    p = a.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)
    return graph.record(out, (a, b), lambda g: (g[..., :p], g[..., p:]))


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack along the first axis."""
    if not tensors:
        raise DimensionError("concat_rows: nothing to concatenate")
    graph = _graph_of(*tensors)
    tail = tensors[0].shape[1:]
    for t in tensors:
        if t.shape[1:] != tail:
            raise DimensionError("concat_rows: trailing shapes {} and {} differ".format(
                list(tail), list(t.shape[1:])))
    bounds = np.cumsum([t.shape[0] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=0)
    return graph.record(out, tensors, lambda g: tuple(np.split(g, bounds, axis=0)))


def gather_rows(table: Tensor, ids: ArrayLike) -> Tensor:
    """Embedding lookup: ``table[ids]``; shape ``ids.shape + [d]``."""
    idx = np.asarray(ids, dtype=np.int64)
    rows = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        raise InputError("gather_rows: ids must lie in [0, {})".format(rows))
    shape = table.shape

    def vjp(g):
        grad = np.zeros(shape)
        np.add.at(grad, idx, g)
        return (grad,)

    return table.graph.record(table.data[idx], (table,), vjp)


# Normalisation ---------------------------------------------------------------

def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis with per-row max subtraction."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return x.graph.record(s, (x,), vjp)


def log_softmax_rows(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    s = np.exp(out)
    return x.graph.record(out, (x,), lambda g: (g - s * g.sum(axis=-1, keepdims=True),))


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean and unit variance; no affine terms."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv = 1.0 / np.sqrt((centred ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv

    def vjp(g):
        return (inv * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True)),)

    return x.graph.record(xhat, (x,), vjp)


def cross_entropy(logits: Tensor, labels: ArrayLike) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(``logits``)."""
    if logits.data.ndim != 2:
        raise DimensionError("cross_entropy: logits must be [batch, classes], got {}".format(list(logits.shape)))
    y = np.asarray(labels, dtype=np.int64)
    n, classes = logits.shape
    if y.shape != (n,):
        raise DimensionError("cross_entropy: {} labels for {} rows".format(y.size, n))
    if n == 0:
        raise InputError("cross_entropy: empty batch")
    if y.min() < 0 or y.max() >= classes:
        raise InputError("cross_entropy: labels must lie in [0, {})".format(classes))
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    rows = np.arange(n)
    loss = -log_p[rows, y].mean()

    def vjp(g):
        grad = np.exp(log_p)
        grad[rows, y] -= 1.0
        return (grad * (g / n),)

    return logits.graph.record(np.array(loss), (logits,), vjp)


# Reverse pass ----------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into ``grad`` of every reachable Parameter."""
    graph = loss.graph
    if loss.data.size != 1:
        raise ContractError("backward needs a scalar loss, got shape {}".format(list(loss.shape)))
    grads: List[Optional[np.ndarray]] = [None] * (loss.index + 1)
    grads[loss.index] = np.ones_like(loss.data)
    for i in range(loss.index, -1, -1):
        g = grads[i]
        if g is None:
            continue
        node = graph.nodes[i]
        if node.parameter is not None:
            node.parameter.grad += g
            continue
        if node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None:
                continue
            grads[parent] = pg if grads[parent] is None else grads[parent] + pg
        grads[i] = None


def zero_grad(params: Sequence[Parameter]) -> None:
    for p in params:
        p.zero_grad()


# Parameter bundles -----------------------------------------------------------

def glorot(rng: np.random.Generator, name: str, rows: int, cols: int) -> Parameter:
    limit = np.sqrt(6.0 / (rows + cols))
    return Parameter(name, rng.uniform(-limit, limit, size=(rows, cols)))


class EmbedParams:
    """Position-wise feed-forward network of the Embed(.) residual block."""

    def __init__(self, w1: Parameter, b1: Parameter, w2: Parameter, b2: Parameter,
                 layer_norm: bool = False) -> None:
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2
        self.layer_norm = layer_norm

    @classmethod
    def create(cls, rng: np.random.Generator, prefix: str, d: int, ffn_mult: int = 4,
               layer_norm: bool = False) -> "EmbedParams":
        inner = d * ffn_mult
        return cls(
            glorot(rng, prefix + ".w1", d, inner),
            Parameter(prefix + ".b1", np.zeros((1, inner))),
            glorot(rng, prefix + ".w2", inner, d),
            Parameter(prefix + ".b2", np.zeros((1, d))),
            layer_norm=layer_norm,
        )

    def parameters(self) -> List[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]


def embed_block(x: Tensor, params: EmbedParams) -> Tensor:
    """``x + W2 relu(x W1 + b1) + b2``, optionally layer-normalised."""
    graph = x.graph
    if x.shape[-1] != params.w1.shape[0]:
        raise DimensionError("embed_block: input width {} does not match {}".format(
            x.shape[-1], params.w1.shape[0]))
    hidden = relu(add_row(matmul(x, graph.parameter(params.w1)), graph.parameter(params.b1)))
    out = add(x, add_row(matmul(hidden, graph.parameter(params.w2)), graph.parameter(params.b2)))
    if params.layer_norm:
        out = layer_norm(out)
    return out
