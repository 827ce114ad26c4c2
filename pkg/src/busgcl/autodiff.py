"""Minimal reverse-mode differentiation over numpy arrays.

A Tensor wraps a float64 ndarray and records the operations that produced
it.  Calling ``backward()`` on a scalar Tensor walks the recorded graph in
reverse topological order and accumulates gradients into every leaf that
was created with ``requires_grad=True``.  Only the operations this project
needs are implemented; all of them are exact (no numerical approximation
anywhere in the backward pass).
"""

from __future__ import annotations

import numpy as np

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (pure inference)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverses numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- graph construction helpers ------------------------------------

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad += grad

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        # Clear first so repeated backward passes over shared subgraphs
        # never accumulate stale gradients.
        for node in topo:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators ------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data
        if not _needs_graph(self, other):
            return Tensor(out_data)
        a, b = self, other

        def bw(g):
            if a.requires_grad or a._parents:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad or b._parents:
                b._accumulate(_unbroadcast(g, b.data.shape))

        return Tensor(out_data, parents=(a, b), backward=bw)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (as_tensor(other) * -1.0)

    def __rsub__(self, other):
        return as_tensor(other) + (self * -1.0)

    def __mul__(self, other):
        other = as_tensor(other)
        out_data = self.data * other.data
        if not _needs_graph(self, other):
            return Tensor(out_data)
        a, b = self, other

        def bw(g):
            if a.requires_grad or a._parents:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad or b._parents:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Tensor(out_data, parents=(a, b), backward=bw)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __matmul__(self, other):
        other = as_tensor(other)
        out_data = self.data @ other.data
        if not _needs_graph(self, other):
            return Tensor(out_data)
        a, b = self, other

        def bw(g):
            if a.requires_grad or a._parents:
                a._accumulate(g @ b.data.T)
            if b.requires_grad or b._parents:
                b._accumulate(a.data.T @ g)

        return Tensor(out_data, parents=(a, b), backward=bw)

    def t(self):
        out_data = self.data.T
        if not _needs_graph(self):
            return Tensor(out_data)
        a = self

        def bw(g):
            a._accumulate(g.T)

        return Tensor(out_data, parents=(a,), backward=bw)

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        if not _needs_graph(self):
            return Tensor(out_data)
        a = self

        def bw(g):
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape))
            else:
                ge = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(ge, a.data.shape))

        return Tensor(out_data, parents=(a,), backward=bw)

    def exp(self):
        out_data = np.exp(self.data)
        if not _needs_graph(self):
            return Tensor(out_data)
        a = self

        def bw(g):
            a._accumulate(g * out_data)

        return Tensor(out_data, parents=(a,), backward=bw)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _needs_graph(*tensors):
    return _grad_enabled and any(t.requires_grad or t._parents for t in tensors)


def parameter(data):
    """Leaf tensor that collects gradients."""
    return Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True)


def constant(data):
    return Tensor(np.asarray(data, dtype=np.float64))


# -- structured ops -----------------------------------------------------


def gather(x, idx):
    """Row selection x[idx]; backward scatter-adds into the source rows."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    out_data = x.data[idx]
    if not _needs_graph(x):
        return Tensor(out_data)

    def bw(g):
        acc = np.zeros_like(x.data)
        np.add.at(acc, idx, g)
        x._accumulate(acc)

    return Tensor(out_data, parents=(x,), backward=bw)


def concat_rows(tensors):
    """Vertical stack; backward splits the gradient back."""
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=0)
    if not _needs_graph(*tensors):
        return Tensor(out_data)
    sizes = [t.data.shape[0] for t in tensors]

    def bw(g):
        start = 0
        for t, n in zip(tensors, sizes):
            if t.requires_grad or t._parents:
                t._accumulate(g[start:start + n])
            start += n

    return Tensor(out_data, parents=tuple(tensors), backward=bw)


def spmm(adj, x, transpose=False):
    """Sparse-constant times dense: adj.mat @ x (or adj.mat.T @ x).

    `adj` must expose `.mat` and `.mat_t` as scipy CSR matrices; the sparse
    matrix itself is never differentiated.
    """
    x = as_tensor(x)
    fwd = adj.mat_t if transpose else adj.mat
    bwd = adj.mat if transpose else adj.mat_t
    out_data = fwd @ x.data
    if not _needs_graph(x):
        return Tensor(out_data)

    def bw(g):
        x._accumulate(bwd @ g)

    return Tensor(out_data, parents=(x,), backward=bw)


def leaky_relu(x, slope):
    """max(x, slope*x); the subgradient at 0 is defined as `slope`."""
    x = as_tensor(x)
    mask = np.where(x.data > 0, 1.0, slope)
    out_data = x.data * mask
    if not _needs_graph(x):
        return Tensor(out_data)

    def bw(g):
        x._accumulate(g * mask)

    return Tensor(out_data, parents=(x,), backward=bw)


def normalize_rows(x):
    """Scale each row to unit L2 norm; all-zero rows stay zero (and get
    zero gradient, matching the sim=0 convention for degenerate rows)."""
    x = as_tensor(x)
    norms = np.linalg.norm(x.data, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    out_data = x.data / safe
    if not _needs_graph(x):
        return Tensor(out_data)

    def bw(g):
        dot = (out_data * g).sum(axis=1, keepdims=True)
        grad = (g - out_data * dot) / safe
        grad[norms[:, 0] == 0] = 0.0
        x._accumulate(grad)

    return Tensor(out_data, parents=(x,), backward=bw)


def logsumexp(x, axis, keepdims=False):
    """Numerically stable log(sum(exp(x))) along `axis`."""
    x = as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    shifted = np.exp(x.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out_full = m + np.log(total)
    out_data = out_full if keepdims else np.squeeze(out_full, axis=axis)
    if not _needs_graph(x):
        return Tensor(out_data)
    softmax = shifted / total

    def bw(g):
        ge = g if keepdims else np.expand_dims(g, axis)
        x._accumulate(softmax * ge)

    return Tensor(out_data, parents=(x,), backward=bw)


def softplus(x):
    """log(1 + exp(x)) computed without overflow for large |x|."""
    x = as_tensor(x)
    out_data = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))
    if not _needs_graph(x):
        return Tensor(out_data)
    sig = _sigmoid(x.data)

    def bw(g):
        x._accumulate(g * sig)

    return Tensor(out_data, parents=(x,), backward=bw)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
