"""
Reverse-mode automatic differentiation over dense numpy tensors.

Every op builds a new node that remembers its parents and a closure mapping the
upstream gradient to one gradient per parent. The tape is implicit: nodes carry
a global creation index, and since the graph is built define-by-run a parent is
always created before its children. backward() therefore walks the reachable
nodes in decreasing creation index, which is a reverse topological order that
does not depend on traversal details.
"""
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from dgnn.errors import GraphIndexError, ShapeError, TapeError

_sequence = itertools.count()

ACTIVATIONS = ("relu", "sigmoid", "tanh", "none")


class Tensor:
    __slots__ = ("data", "parents", "op", "backward_fn", "requires_grad", "seq", "consumed", "name")

    def __init__(self, data, parents=(), op="const", backward_fn=None, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else _float_dtype(data))
        self.data = arr
        self.parents = tuple(parents)
        self.op = op
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.seq = next(_sequence)
        self.consumed = False
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(op={self.op!r}, shape={self.shape}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


class Parameter(Tensor):
    """Trainable leaf. Its array may be replaced between tapes by an optimizer."""

    __slots__ = ()

    def __init__(self, data, name=None, dtype=None):
        super().__init__(data, op="param", requires_grad=True, name=name, dtype=dtype)


def _float_dtype(data):
    dt = getattr(data, "dtype", None)
    if dt is not None and np.issubdtype(dt, np.floating):
        return dt
    return np.float64


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _node(data, parents, op, backward_fn):
    data.setflags(write=False)
    requires = any(p.requires_grad for p in parents)
    return Tensor(data, parents, op, backward_fn if requires else None, requires_grad=requires)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def _pair(a, b):
    ref = a if isinstance(a, Tensor) else b
    dtype = ref.dtype if isinstance(ref, Tensor) else None
    return as_tensor(a, dtype), as_tensor(b, dtype)


# --- elementwise ---------------------------------------------------------


def add(a, b):
    a, b = _pair(a, b)
    _broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), "add", backward)


def sub(a, b):
    a, b = _pair(a, b)
    _broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), "sub", backward)


def mul(a, b):
    a, b = _pair(a, b)
    _broadcast(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), "mul", backward)


def sigmoid(x):
    s = expit(x.data)

    def backward(g):
        return (g * s * (1.0 - s),)

    return _node(s, (x,), "sigmoid", backward)


def tanh(x):
    t = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - t * t),)

    return _node(t, (x,), "tanh", backward)


def relu(x):
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _node(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), "relu", backward)


def activate(x, activation):
    if activation == "relu":
        return relu(x)
    if activation == "sigmoid":
        return sigmoid(x)
    if activation == "tanh":
        return tanh(x)
    if activation == "none" or activation is None:
        return x
    raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")


# --- linear algebra ------------------------------------------------------


def matmul(a, b):
    a, b = _pair(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), "matmul", backward)


def dense(x, W, b, activation="none"):
    """activation(x W + b)"""
    x = as_tensor(x, dtype=W.dtype)
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeError(f"dense: input {x.shape} does not fit weights {W.shape}")
    if b.shape != (W.shape[1],):
        raise ShapeError(f"dense: bias {b.shape} does not fit weights {W.shape}")
    return activate(add(matmul(x, W), b), activation)


def batched_matvec(A, x):
    """y[e] = A[e] @ x[e] for A of shape (E, p, q) and x of shape (E, q)."""
    if A.data.ndim != 3 or x.data.ndim != 2 or A.shape[0] != x.shape[0] or A.shape[2] != x.shape[1]:
        raise ShapeError(f"batched_matvec: {A.shape} and {x.shape} are incompatible")

    def backward(g):
        dA = g[:, :, None] * x.data[:, None, :]
        dx = np.matmul(np.swapaxes(A.data, 1, 2), g[:, :, None])[:, :, 0]
        return dA, dx

    out = np.matmul(A.data, x.data[:, :, None])[:, :, 0]
    return _node(out, (A, x), "batched_matvec", backward)


# --- structural ----------------------------------------------------------


def reshape(x, shape):
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")

    def backward(g):
        return (g.reshape(x.shape),)

    return _node(np.array(out), (x,), "reshape", backward)


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} do not align on axis {axis}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tensors, "concat", backward)


def _check_index(index, limit, op):
    index = np.asarray(index, dtype=np.int64).reshape(-1)
    if index.size and (index.min() < 0 or index.max() >= limit):
        raise GraphIndexError(f"{op}: index out of range [0, {limit})")
    return index


def take_rows(x, index):
    """Gather rows x[index]; the gradient scatters back with np.add.at."""
    index = _check_index(index, x.shape[0], "take_rows")

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return _node(x.data[index], (x,), "take_rows", backward)


def segment_sum(values, segments, num_segments):
    """Row i of the result is the sum of the rows of values assigned to segment i."""
    segments = _check_index(segments, num_segments, "segment_sum")
    if segments.size != values.shape[0]:
        raise ShapeError(f"segment_sum: {segments.size} segment ids for {values.shape[0]} rows")
    out = np.zeros((num_segments,) + values.shape[1:], dtype=values.dtype)
    np.add.at(out, segments, values.data)

    def backward(g):
        return (g[segments],)

    return _node(out, (values,), "segment_sum", backward)


def sum_all(x):
    def backward(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _node(np.array(x.data.sum(), dtype=x.dtype), (x,), "sum", backward)


def mean_squared_error(pred, target):
    """mean((pred - target)^2) as a scalar node."""
    target = as_tensor(np.asarray(target, dtype=pred.dtype).reshape(pred.shape))
    diff = sub(pred, target)
    n = max(1, diff.data.size)
    return mul(sum_all(mul(diff, diff)), 1.0 / n)


# --- GRU -----------------------------------------------------------------


@dataclass
class GruParams:
    W_z: Tensor
    U_z: Tensor
    b_z: Tensor
    W_r: Tensor
    U_r: Tensor
    b_r: Tensor
    W_h: Tensor
    U_h: Tensor
    b_h: Tensor


def gru_cell(h, m, params: GruParams):
    """
    z = sigmoid(m W_z + h U_z + b_z)
    r = sigmoid(m W_r + h U_r + b_r)
    h_hat = tanh(m W_h + (r * h) U_h + b_h)
    h' = (1 - z) * h + z * h_hat
    """
    if h.shape != m.shape:
        raise ShapeError(f"gru_cell: state {h.shape} and message {m.shape} differ")
    p = params
    z = sigmoid(matmul(m, p.W_z) + matmul(h, p.U_z) + p.b_z)
    r = sigmoid(matmul(m, p.W_r) + matmul(h, p.U_r) + p.b_r)
    h_hat = tanh(matmul(m, p.W_h) + matmul(mul(r, h), p.U_h) + p.b_h)
    return mul(sub(1.0, z), h) + mul(z, h_hat)


# --- backward ------------------------------------------------------------


def _reachable(root):
    nodes, seen, stack = [], {id(root)}, [root]
    while stack:
        node = stack.pop()
        nodes.append(node)
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                seen.add(id(parent))
                stack.append(parent)
    nodes.sort(key=lambda n: n.seq, reverse=True)
    return nodes


def backward(loss):
    """
    Propagate d(loss)/d(node) through the tape rooted at loss.

    Returns {Parameter: gradient array} for every trainable leaf reachable from
    loss. A tape can be consumed once; rebuild the forward pass to differentiate
    again.
    """
    if loss.data.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.consumed:
        raise TapeError("this tape was already differentiated; run the forward pass again")
    loss.consumed = True

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in _reachable(loss):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            if isinstance(node, Parameter):
                leaves[node] = g
            continue
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.array(pg, dtype=parent.dtype)
    return leaves


# --- initialisation ------------------------------------------------------


def glorot(rng, fan_in, fan_out, name=None, dtype=np.float64, scale=1.0):
    limit = scale * np.sqrt(6.0 / (fan_in + fan_out))
    return Parameter(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype), name=name)


def zeros(shape, name=None, dtype=np.float64):
    return Parameter(np.zeros(shape, dtype=dtype), name=name)
