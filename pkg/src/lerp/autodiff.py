"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

Only the operations the cross-attention graph needs are provided. Shapes are
never broadcast: every op checks its operands and raises
:class:`~lerp.exceptions.DimensionError` on mismatch.

Typical use::

    with Tape() as tape:
        w = tape.variable(np.ones((2, 3)))
        x = tape.constant(np.arange(3.0).reshape(3, 1))
        loss = total(matmul(w, x))
    backward(tape, loss)
    w.grad  # d loss / d w
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import ConfigurationError, ContractError, DimensionError

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Node:
    """A value recorded on a tape, plus the gradient accumulated into it."""

    __slots__ = ("value", "grad", "parents", "requires_grad", "name", "_backward")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.value = value
        self.parents = tuple(parents)
        self.requires_grad = requires_grad
        self.name = name
        self._backward = backward_fn
        self.grad = np.zeros_like(value) if requires_grad else None

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Nodes in creation order, which is always a topological order.

    Ops append their outputs to the innermost tape entered with ``with``.
    Ops run outside any tape are not recorded, which suits forward-only
    evaluation.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _CURRENT.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _CURRENT.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def variable(self, value, name=None) -> Node:
        """Record a leaf whose gradient is wanted (a parameter)."""
        node = Node(_as_array(value), requires_grad=True, name=name)
        self.nodes.append(node)
        return node

    def constant(self, value, name=None) -> Node:
        node = Node(_as_array(value), name=name)
        self.nodes.append(node)
        return node

    def record(self, value, parents, backward_fn: BackwardFn, name=None) -> Node:
        """Append the result of an op.

        ``backward_fn`` maps the output gradient to one gradient per parent
        (``None`` for parents that do not need one).
        """
        requires_grad = any(p.requires_grad for p in parents)
        node = Node(value, parents, backward_fn if requires_grad else None, requires_grad, name)
        self.nodes.append(node)
        return node


def _as_array(value) -> np.ndarray:
    return np.array(value, dtype=DTYPE)


_CURRENT: list[Tape] = []


def _emit(value, parents, backward_fn, name=None) -> Node:
    if _CURRENT:
        return _CURRENT[-1].record(value, parents, backward_fn, name)
    requires_grad = any(p.requires_grad for p in parents)
    return Node(value, parents, backward_fn if requires_grad else None, requires_grad, name)


def constant(value) -> Node:
    """A leaf without gradient that is not recorded on any tape."""
    return Node(_as_array(value))


def custom_op(value: np.ndarray, parents: Sequence[Node], backward_fn: BackwardFn, name=None) -> Node:
    """Record an op defined elsewhere (for fused losses and the like)."""
    return _emit(value, parents, backward_fn, name)


def backward(tape: Tape, loss: Node) -> None:
    """Fill ``grad`` of every node on ``tape`` with d loss / d node."""
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.nodes or not any(n is loss for n in reversed(tape.nodes)):
        raise ContractError("loss node is not on the given tape")
    for node in tape.nodes:
        if node.requires_grad:
            node.grad = np.zeros_like(node.value)
    if not loss.requires_grad:
        return
    loss.grad = np.ones_like(loss.value)
    for node in reversed(tape.nodes):
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is not None and parent.requires_grad:
                parent.grad += g


# --------------------------------------------------------------------------
# elementwise and structural ops


def _same_shape(a: Node, b: Node, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Node, b: Node) -> Node:
    _same_shape(a, b, "add")
    return _emit(a.value + b.value, (a, b), lambda g: (g, g))


def mul(a: Node, b: Node) -> Node:
    _same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return _emit(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Node, c: float) -> Node:
    return _emit(a.value * c, (a,), lambda g: (g * c,))


def add_bias(x: Node, b: Node) -> Node:
    """Add the length-p vector ``b`` to every column of the p x q matrix ``x``."""
    if x.value.ndim != 2 or b.value.ndim != 1 or x.shape[0] != b.shape[0]:
        raise DimensionError(f"add_bias: matrix {x.shape} and bias {b.shape} are incompatible")
    return _emit(x.value + b.value[:, None], (x, b), lambda g: (g, g.sum(axis=1)))


def matmul(a: Node, b: Node) -> Node:
    """Matrix product of a p x q and a q x r node."""
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    av, bv = a.value, b.value
    return _emit(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a: Node) -> Node:
    if a.value.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")
    return _emit(a.value.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Node, shape) -> Node:
    shape = tuple(shape)
    if int(np.prod(shape)) != a.value.size:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")
    old = a.shape
    return _emit(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(a: Node, b: Node) -> Node:
    """Join two rank-1 nodes end to end."""
    if a.value.ndim != 1 or b.value.ndim != 1:
        raise DimensionError(f"concat needs two vectors, got shapes {a.shape} and {b.shape}")
    p = a.shape[0]
    return _emit(np.concatenate([a.value, b.value]), (a, b), lambda g: (g[:p], g[p:]))


def total(a: Node) -> Node:
    """Sum of all elements as a shape-() node."""
    shape = a.shape
    return _emit(np.array(a.value.sum()), (a,), lambda g: (np.full(shape, g),))


def relu(x: Node) -> Node:
    pos = x.value > 0
    return _emit(np.where(pos, x.value, 0.0), (x,), lambda g: (g * pos,))


def sigmoid(x: Node) -> Node:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _emit(y, (x,), lambda g: (g * y * (1.0 - y),))


def softmax(x: Node, axis: int = -1, mask: Optional[np.ndarray] = None) -> Node:
    """Softmax along ``axis``; positions where ``mask`` is False get exactly 0.

    Every slice along ``axis`` needs at least one unmasked position.
    """
    v = x.value
    if mask is None:
        mask = np.ones(v.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != v.shape:
            raise DimensionError(f"softmax: mask shape {mask.shape} differs from input {v.shape}")
    if not mask.any(axis=axis).all():
        raise DimensionError("softmax: a slice is fully masked")
    shifted = np.where(mask, v, -np.inf)
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    e = np.where(mask, np.exp(shifted), 0.0)
    y = e / e.sum(axis=axis, keepdims=True)

    def _back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _emit(y, (x,), _back)


# --------------------------------------------------------------------------
# convolution and pooling


def conv1d(x: Node, kernel: Node, bias: Node) -> Node:
    """Same-padded 1-D cross-correlation of a C x L input.

    ``kernel`` is C_out x C x k with odd k; the input is zero padded by
    (k - 1) / 2 on both ends so the output is C_out x L.
    """
    if x.value.ndim != 2 or kernel.value.ndim != 3 or bias.value.ndim != 1:
        raise DimensionError(
            f"conv1d: expected input C x L, kernel C_out x C x k, bias C_out; "
            f"got {x.shape}, {kernel.shape}, {bias.shape}"
        )
    c_out, c_in, k = kernel.shape
    if k % 2 == 0:
        raise ConfigurationError(f"conv1d: kernel width must be odd, got {k}")
    if x.shape[0] != c_in or bias.shape[0] != c_out:
        raise DimensionError(
            f"conv1d: input {x.shape}, kernel {kernel.shape} and bias {bias.shape} disagree"
        )
    length = x.shape[1]
    pad = (k - 1) // 2
    xp = np.pad(x.value, ((0, 0), (pad, pad)))
    # cols[c, j, n] = xp[c, n + j]
    cols = np.stack([xp[:, j : j + length] for j in range(k)], axis=1).reshape(c_in * k, length)
    w2 = kernel.value.reshape(c_out, c_in * k)
    out = w2 @ cols + bias.value[:, None]

    def _back(g):
        dw = (g @ cols.T).reshape(c_out, c_in, k)
        dcols = (w2.T @ g).reshape(c_in, k, length)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dxp[:, j : j + length] += dcols[:, j, :]
        return dxp[:, pad : pad + length], dw, g.sum(axis=1)

    return _emit(out, (x, kernel, bias), _back)


def maxpool_axis(x: Node, axis: int, window: int, stride: int = 1, same: bool = False) -> Node:
    """Max over sliding windows along one axis of a matrix.

    With ``same=True`` the output keeps the axis length: the window at
    position i covers [i - (window - 1) // 2, ...) clipped to the valid range
    (stride must then be 1). Gradients route to the first maximal element.
    """
    if x.value.ndim != 2:
        raise DimensionError(f"maxpool_axis needs a matrix, got shape {x.shape}")
    if axis not in (0, 1, -1, -2):
        raise DimensionError(f"maxpool_axis: bad axis {axis}")
    axis = axis % 2
    n = x.shape[axis]
    if window < 1 or window > n:
        raise ConfigurationError(f"maxpool_axis: window {window} does not fit axis of length {n}")
    if stride < 1:
        raise ConfigurationError(f"maxpool_axis: stride must be >= 1, got {stride}")
    if same:
        if stride != 1:
            raise ConfigurationError("maxpool_axis: same padding requires stride 1")
        left = (window - 1) // 2
        idx = np.arange(n)[:, None] - left + np.arange(window)[None, :]
        idx = np.clip(idx, 0, n - 1)
    else:
        starts = np.arange(0, n - window + 1, stride)
        idx = starts[:, None] + np.arange(window)[None, :]
    v = np.moveaxis(x.value, axis, -1)  # other x n
    windows = v[:, idx]  # other x n_out x window
    n_out = idx.shape[0]
    pick = idx[np.arange(n_out)[None, :], windows.argmax(axis=2)]  # other x n_out
    out = np.take_along_axis(v, pick, axis=1)
    rows = np.arange(v.shape[0])[:, None].repeat(pick.shape[1], 1)
    in_shape = v.shape

    def _back(g):
        gm = np.moveaxis(g, axis, -1)
        dv = np.zeros(in_shape)
        np.add.at(dv, (rows, pick), gm)
        return (np.moveaxis(dv, -1, axis),)

    return _emit(np.moveaxis(out, -1, axis).copy(), (x,), _back)


# --------------------------------------------------------------------------
# embedding lookups


def gather_columns(table: Node, ids: Sequence[int]) -> Node:
    """Rows ``ids`` of a V x D table, laid out as a D x N matrix.

    Row 0 is the padding row and never receives gradient.
    """
    ids = np.asarray(ids, dtype=np.int64)
    rows = table.shape[0]

    def _back(g):
        dt = np.zeros((rows, g.shape[0]))
        np.add.at(dt, ids, g.T)
        dt[0] = 0.0
        return (dt,)

    return _emit(table.value[ids].T.copy(), (table,), _back)


def entity_mean(table: Node, entities: Sequence[Sequence[int]]) -> Node:
    """Column i is the mean of the table rows listed in ``entities[i]``."""
    rows, dim = table.shape
    ids = [np.asarray(e, dtype=np.int64) for e in entities]
    out = np.zeros((dim, len(ids)))
    for i, e in enumerate(ids):
        out[:, i] = table.value[e].mean(axis=0)

    def _back(g):
        dt = np.zeros((rows, dim))
        for i, e in enumerate(ids):
            np.add.at(dt, e, g[:, i] / len(e))
        dt[0] = 0.0
        return (dt,)

    return _emit(out, (table,), _back)


def diag_kernel(w: Node, channels: int) -> Node:
    """Expand a 1 x 1 x k kernel into a channels x channels x k one.

    The result applies the same filter to every channel independently, so a
    conv with it commutes with any permutation of the channels.
    """
    if w.value.ndim != 3 or w.shape[:2] != (1, 1):
        raise DimensionError(f"diag_kernel expects a 1 x 1 x k kernel, got {w.shape}")
    k = w.shape[2]
    out = np.zeros((channels, channels, k))
    diag = np.arange(channels)
    out[diag, diag, :] = w.value[0, 0]

    def _back(g):
        return (g[diag, diag, :].sum(axis=0).reshape(1, 1, k),)

    return _emit(out, (w,), _back)


def tile(v: Node, times: int) -> Node:
    """Repeat a length-1 vector ``times`` times."""
    if v.shape != (1,):
        raise DimensionError(f"tile expects shape (1,), got {v.shape}")
    return _emit(np.repeat(v.value, times), (v,), lambda g: (np.array([g.sum()]),))
