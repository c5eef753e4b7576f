"""
Dense tensors with reverse-mode automatic differentiation

Operations executed while a Graph is active are recorded on it in execution
order. backward() walks that record once, in reverse, and deposits gradients
on every leaf tensor with requires_grad set - frozen ones included. Frozen
tensors are only skipped by the optimizer.

Outside an active Graph the same functions simply compute values, which is
how evaluation and decoding run. Such results carry no gradient, so a loss
built from them only differentiates what was recorded.
"""

import logging
import threading
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from semsim.errors import AutodiffError, DimensionError, NumericError, VocabIndexError

logger = logging.getLogger(__name__)

PRECISIONS = {32: np.float32, 64: np.float64}

# Large negative additive mask; exp() of it underflows to exactly 0
MASK_VALUE = -1e9

_local = threading.local()


def _stack() -> List["Graph"]:
    if not hasattr(_local, 'graphs'):
        _local.graphs = []
    return _local.graphs


def get_dtype() -> np.dtype:
    return getattr(_local, 'dtype', np.float32)


def set_precision(bits: int) -> None:
    """Set the default floating precision (32 or 64) for new tensors"""
    if bits not in PRECISIONS:
        raise ValueError(f"precision must be 32 or 64, got {bits}")
    _local.dtype = PRECISIONS[bits]


@contextmanager
def precision(bits: int) -> Iterator[None]:
    previous = get_dtype()
    set_precision(bits)
    try:
        yield
    finally:
        _local.dtype = previous


class Tensor:
    """
    n-dimensional array with an optional gradient

    Args:
        values: array-like payload
        requires_grad: receive gradients during backward
        frozen: participate in backward but never updated by an optimizer
        name: parameter name used in logs and checkpoints
    """

    def __init__(self, values, requires_grad: bool = False, frozen: bool = False,
                 name: Optional[str] = None, dtype=None):
        self.values = np.asarray(values, dtype=dtype or get_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.frozen = frozen
        self.name = name
        self.node: Optional["Node"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else float('nan')

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flags = []
        if self.requires_grad:
            flags.append('requires_grad')
        if self.frozen:
            flags.append('frozen')
        label = f"{self.name}, " if self.name else ''
        return f"Tensor({label}shape={self.shape}{', ' + ', '.join(flags) if flags else ''})"

    # Operator sugar for the model code
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Node:
    """One executed operation: its inputs, output and local backward rule"""

    def __init__(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor,
                 backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]], graph: "Graph"):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward
        self.graph = graph


class Graph:
    """
    Ordered record of the operations executed while it is active

    Use as a context manager:

        with Graph() as graph:
            loss = ml_loss(doc, ref, model)
        backward(loss)
    """

    def __init__(self):
        self.nodes: List[Node] = []
        self.consumed = False

    def __enter__(self) -> "Graph":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _stack().pop()
        return False

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def reset(self) -> None:
        self.nodes = []
        self.consumed = False


def active_graph() -> Optional[Graph]:
    stack = _stack()
    return stack[-1] if stack else None


def as_tensor(x: Union[Tensor, float, np.ndarray], dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _pair(a, b) -> Tuple[Tensor, Tensor]:
    """Wrap constants in the dtype of their tensor partner"""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(b, dtype=a.values.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(a, dtype=b.values.dtype), b
    return as_tensor(a), as_tensor(b)


def _result(values: np.ndarray, inputs: Tuple[Tensor, ...], backward, op: str) -> Tensor:
    # without an active graph the result is a plain value, never a gradient leaf
    graph = active_graph()
    requires_grad = graph is not None and any(t.requires_grad for t in inputs)
    out = Tensor(values, requires_grad=requires_grad, dtype=values.dtype)
    if requires_grad:
        out.node = Node(op, inputs, out, backward, graph)
        graph.record(out.node)
    return out


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`"""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def backward(loss: Tensor) -> None:
    """
    Reverse pass from a scalar loss over the graph that recorded it

    Every requires_grad leaf reachable from the loss gets its gradient added
    into `.grad`. A graph can be differentiated once; call zero_grads()
    between updates.

    Raises:
        AutodiffError: the loss depends on a result recorded by another graph
    """
    if loss.values.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        raise AutodiffError("loss is not connected to a recorded graph")
    graph = loss.node.graph
    if graph.consumed:
        raise AutodiffError("graph already differentiated; gradients would accumulate twice")

    pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for node in reversed(graph.nodes):
        grad_out = pending.pop(id(node.output), None)
        if grad_out is None:
            continue
        for tensor, grad in zip(node.inputs, node.backward(grad_out)):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor.node is None:
                grad = grad.astype(tensor.values.dtype, copy=False)
                tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
            elif tensor.node.graph is not graph:
                raise AutodiffError(f"'{node.op}' consumes a '{tensor.node.op}' result recorded by another graph")
            else:
                key = id(tensor)
                pending[key] = grad if key not in pending else pending[key] + grad
    if pending:
        raise AutodiffError(f"{len(pending)} recorded results never received their gradient")
    graph.consumed = True


def zero_grads(tensors) -> None:
    for tensor in tensors:
        tensor.zero_grad()


def detach(x: Tensor) -> Tensor:
    return Tensor(x.values, dtype=x.values.dtype)


# ---------------------------------------------------------------------------
# Element-wise arithmetic

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    values = a.values + b.values

    def _backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _result(values, (a, b), _backward, 'add')


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    values = a.values - b.values

    def _backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _result(values, (a, b), _backward, 'sub')


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    values = a.values * b.values

    def _backward(g):
        return unbroadcast(g * b.values, a.shape), unbroadcast(g * a.values, b.shape)

    return _result(values, (a, b), _backward, 'mul')


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation"""
    c = float(np.sqrt(2.0 / np.pi))
    inner = c * (x.values + 0.044715 * x.values ** 3)
    t = np.tanh(inner)
    values = 0.5 * x.values * (1.0 + t)

    def _backward(g):
        d_inner = c * (1.0 + 3 * 0.044715 * x.values ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.values * (1.0 - t ** 2) * d_inner),)

    return _result(values, (x,), _backward, 'gelu')


# ---------------------------------------------------------------------------
# Shape operations

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    values = np.matmul(a.values, b.values)

    def _backward(g):
        grad_a = np.matmul(g, np.swapaxes(b.values, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.values, -1, -2), g)
        return unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)

    return _result(values, (a, b), _backward, 'matmul')


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    values = np.transpose(x.values, axes)

    def _backward(g):
        return (np.transpose(g, inverse),)

    return _result(values, (x,), _backward, 'transpose')


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    values = x.values.reshape(shape)

    def _backward(g):
        return (g.reshape(original),)

    return _result(values, (x,), _backward, 'reshape')


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    values = np.concatenate([t.values for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(values, tensors, _backward, 'concat')


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup: table[ids] with gradients scattered back into table rows"""
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise VocabIndexError(f"token id out of range for vocabulary of size {vocab}")
    values = table.values[ids]

    def _backward(g):
        grad = np.zeros_like(table.values)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (grad,)

    return _result(values, (table,), _backward, 'embedding')


# ---------------------------------------------------------------------------
# Reductions

def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    values = np.sum(x.values, axis=axis, keepdims=keepdims)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(values), (x,), _backward, 'sum')


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    values = np.mean(x.values, axis=axis, keepdims=keepdims)
    count = x.values.size // max(np.asarray(values).size, 1)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape) / count,)

    return _result(np.asarray(values), (x,), _backward, 'mean')


# ---------------------------------------------------------------------------
# Normalisation and probabilities

def _check_finite(x: Tensor, op: str) -> None:
    if np.isnan(x.values).any():
        raise NumericError(f"{op} received NaN input (shape {x.shape})")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_finite(x, 'softmax')
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    values = exp / exp.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (values * (g - (g * values).sum(axis=axis, keepdims=True)),)

    return _result(values, (x,), _backward, 'softmax')


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_finite(x, 'log_softmax')
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    values = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def _backward(g):
        return (g - np.exp(values) * g.sum(axis=axis, keepdims=True),)

    return _result(values, (x,), _backward, 'log_softmax')


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift"""
    mu = x.values.mean(axis=-1, keepdims=True)
    centered = x.values - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    x_hat = centered * inv_std
    values = x_hat * gamma.values + beta.values
    n = x.shape[-1]

    def _backward(g):
        g_hat = g * gamma.values
        grad_x = inv_std / n * (
            n * g_hat
            - g_hat.sum(axis=-1, keepdims=True)
            - x_hat * (g_hat * x_hat).sum(axis=-1, keepdims=True)
        )
        return grad_x, unbroadcast(g * x_hat, gamma.shape), unbroadcast(g, beta.shape)

    return _result(values, (x, gamma, beta), _backward, 'layer_norm')


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0"""
    if not training or p <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.values.dtype) / (1.0 - p)
    return mul(x, Tensor(keep, dtype=x.values.dtype))


def nll_loss(log_probs: Tensor, targets, mask=None) -> Tensor:
    """
    Summed negative log-likelihood of the target ids

    Args:
        log_probs: [..., T, V] log-probabilities
        targets: integer ids with the leading shape of log_probs
        mask: optional 0/1 weights (padding positions set to 0)

    Returns:
        Scalar tensor: -sum_t mask_t * log_probs[t, target_t]
    """
    targets = np.asarray(targets, dtype=np.int64)
    vocab = log_probs.shape[-1]
    if targets.shape != log_probs.shape[:-1]:
        raise DimensionError(f"nll_loss targets {targets.shape} do not match log_probs {log_probs.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise VocabIndexError(f"target id out of range for vocabulary of size {vocab}")
    weights = np.ones(targets.shape, dtype=log_probs.values.dtype) if mask is None \
        else np.asarray(mask, dtype=log_probs.values.dtype)
    picked = np.take_along_axis(log_probs.values, targets[..., None], axis=-1)[..., 0]
    values = np.asarray(-(picked * weights).sum(), dtype=log_probs.values.dtype)

    def _backward(g):
        grad = np.zeros_like(log_probs.values)
        np.put_along_axis(grad, targets[..., None], (-g * weights)[..., None], axis=-1)
        return (grad,)

    return _result(values, (log_probs,), _backward, 'nll_loss')


def parameter(values, name: str, frozen: bool = False) -> Tensor:
    return Tensor(values, requires_grad=True, frozen=frozen, name=name)
