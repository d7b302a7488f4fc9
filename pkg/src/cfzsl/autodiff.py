"""Reverse-mode gradient engine over dense float64 matrices.

Small by design: exactly the operations the feature-space models need
(linear layers, ReLU, softmax cross-entropy, MSE, row gathers, scalar
affine transforms). Heavy math is delegated to ``cfzsl.kernels``; the
tape itself is plain Python. Every matrix is 2-D, row-major, float64.
"""

import numpy as np

from cfzsl import kernels as K
from cfzsl.errors import ShapeError


def _as_matrix(data):
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected a matrix, got array of ndim {arr.ndim}")
    return arr


class Tensor:
    """A node in the computation graph: a matrix plus an optional gradient."""

    def __init__(self, data, requires_grad=False):
        self.data = _as_matrix(data)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backprop = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data[0, 0])

    def backward(self):
        """Accumulate gradients of this scalar into every reachable tensor."""
        if self.data.shape != (1, 1):
            raise ShapeError(f"backward() requires a 1x1 tensor, got {self.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self._accumulate(np.ones((1, 1)))
        for node in reversed(order):
            if node._backprop is not None and node.grad is not None:
                node._backprop(node.grad)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable leaf tensor with per-parameter optimizer buffers."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)
        self.state = {}

    def __repr__(self):
        return f"Parameter(shape={self.shape})"


def constant(data):
    return Tensor(data, requires_grad=False)


def _node(data, parents, backprop):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backprop = backprop
    return out


def _check_broadcast(a, b, opname):
    if b.shape == a.shape or b.shape == (1, 1):
        return
    if b.shape == (1, a.cols):
        return
    raise ShapeError(f"{opname}: cannot broadcast {b.shape} onto {a.shape}")


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    if shape == (1, 1):
        return g.sum().reshape(1, 1)
    return g.sum(axis=0, keepdims=True)


def matmul(a, b):
    """Matrix product; gradients accumulate to both operands."""
    if a.cols != b.rows:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backprop(g):
        if a.requires_grad:
            a._accumulate(K.matmul_nt(g, b.data))
        if b.requires_grad:
            b._accumulate(K.matmul_tn(a.data, g))

    return _node(K.matmul(a.data, b.data), (a, b), backprop)


def add(a, b):
    """Elementwise sum; b may be a row vector or 1x1 scalar (broadcast)."""
    _check_broadcast(a, b, "add")

    def backprop(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(_reduce_to(g, b.shape))

    return _node(a.data + b.data, (a, b), backprop)


def sub(a, b):
    """Elementwise difference; b may be a row vector or 1x1 scalar."""
    _check_broadcast(a, b, "sub")

    def backprop(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-_reduce_to(g, b.shape))

    return _node(a.data - b.data, (a, b), backprop)


def mul(a, b):
    """Elementwise product; b may be a row vector or 1x1 scalar."""
    _check_broadcast(a, b, "mul")

    def backprop(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(_reduce_to(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), backprop)


def scale(a, c):
    """Product with a plain float that carries no gradient."""
    c = float(c)

    def backprop(g):
        if a.requires_grad:
            a._accumulate(c * g)

    return _node(c * a.data, (a,), backprop)


def relu(a):
    """Elementwise max(0, x); gradient is masked where x <= 0."""

    def backprop(g):
        if a.requires_grad:
            a._accumulate(K.relu_backward(a.data, g))

    return _node(K.relu_forward(a.data), (a,), backprop)


def clamp01(a):
    """Clip into [0, 1]; gradient passes through on the closed interval.

    The closed interval keeps a parameter sitting exactly on a bound
    trainable; training loops that rely on that must also project the raw
    value back into [0, 1] after each step so it cannot drift outside.
    """

    def backprop(g):
        if a.requires_grad:
            mask = (a.data >= 0.0) & (a.data <= 1.0)
            a._accumulate(np.where(mask, g, 0.0))

    return _node(np.clip(a.data, 0.0, 1.0), (a,), backprop)


def take_rows(a, indices):
    """Gather rows by index; the backward pass scatter-adds them back."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("take_rows: indices must be one-dimensional")

    def backprop(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf, idx, g)
            a._accumulate(buf)

    return _node(a.data[idx], (a,), backprop)


def take_cols(a, indices):
    """Gather columns by index; the backward pass scatter-adds them back."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("take_cols: indices must be one-dimensional")

    def backprop(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf.T, idx, g.T)
            a._accumulate(buf)

    return _node(np.ascontiguousarray(a.data[:, idx]), (a,), backprop)


def linear_forward(x, weight, bias):
    """x @ weight + bias, the bias row broadcast over all rows of x."""
    if x.cols != weight.rows:
        raise ShapeError(
            f"linear_forward: input {x.shape} incompatible with weight {weight.shape}"
        )
    if bias.shape != (1, weight.cols):
        raise ShapeError(
            f"linear_forward: bias {bias.shape} does not match weight {weight.shape}"
        )
    return add(matmul(x, weight), bias)


def softmax_cross_entropy(logits, targets):
    """Mean negative log-softmax of the target class per row, as a 1x1 tensor."""
    t = np.ascontiguousarray(targets, dtype=np.int64).ravel()
    if t.shape[0] != logits.rows:
        raise ShapeError(
            f"softmax_cross_entropy: {t.shape[0]} targets for {logits.rows} rows"
        )
    n = logits.cols
    bad = (t < 0) | (t >= n)
    if bad.any():
        raise IndexError(
            f"target index {int(t[bad][0])} out of range for {n} classes"
        )
    loss, grad = K.softmax_cross_entropy(logits.data, t)

    def backprop(g):
        if logits.requires_grad:
            logits._accumulate(g[0, 0] * grad)

    return _node(np.array([[loss]]), (logits,), backprop)


def mse(pred, target):
    """Mean squared error against a constant target matrix, as a 1x1 tensor."""
    target = _as_matrix(target)
    if target.shape != pred.shape:
        raise ShapeError(f"mse: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target

    def backprop(g):
        if pred.requires_grad:
            pred._accumulate(g[0, 0] * (2.0 / diff.size) * diff)

    return _node(np.array([[np.mean(diff * diff)]]), (pred,), backprop)


def softmax(logits):
    """Row-wise softmax of a plain matrix (no gradient tracking)."""
    return K.softmax(_as_matrix(logits))
