"""Minimal reverse-mode autodiff on flat float64 numpy arrays.

Every model computation is expressed through the op functions below. When a
Tape is active (``with Tape() as t:``), each op appends a node holding exact
vector-Jacobian-product closures for its inputs; ``Tape.backward`` replays the
nodes in reverse append order. Without an active tape the same functions run
pure forward math, bit-identical to the recorded path.

No broadcasting beyond scalar-vs-tensor; shape mismatches raise ShapeError
naming the op and both shapes.
"""

from __future__ import annotations

import threading

import numpy as np


class ShapeError(ValueError):
    """Input shapes do not conform to an op's shape rule."""


class Tensor:
    """N-dimensional float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "node")

    def __init__(self, data, node=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item: tensor has shape {self.shape}, not scalar")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, tracked={self.node is not None})"


class Node:
    __slots__ = ("tape", "index", "parents", "vjps")

    def __init__(self, tape, index, parents, vjps):
        self.tape = tape
        self.index = index
        self.parents = parents
        self.vjps = vjps


_LOCAL = threading.local()


def _active_tape():
    stack = getattr(_LOCAL, "tapes", None)
    return stack[-1] if stack else None


class Tape:
    """Append-only record of ops; append order is a topological order."""

    def __init__(self):
        self.nodes = []
        self.grads = {}

    def __enter__(self):
        stack = getattr(_LOCAL, "tapes", None)
        if stack is None:
            stack = _LOCAL.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _LOCAL.tapes.pop()
        return False

    def _record(self, value, parents, vjps):
        node = Node(self, len(self.nodes), parents, vjps)
        self.nodes.append(node)
        return Tensor(value, node)

    def leaf(self, tensor):
        """Register tensor as a gradient-receiving leaf on this tape."""
        node = Node(self, len(self.nodes), (), ())
        self.nodes.append(node)
        tensor.node = node
        return tensor

    def backward(self, loss):
        """Accumulate d(loss)/d(node) for every node reachable from loss.

        loss must be a scalar (shape (1,) or ()) recorded on this tape; the
        seed gradient is 1.0.
        """
        if loss.node is None or loss.node.tape is not self:
            raise ValueError("backward: loss is not recorded on this tape")
        if loss.data.size != 1:
            raise ShapeError(f"backward: loss has shape {loss.shape}, expected scalar")
        grads = {loss.node.index: np.ones_like(loss.data)}
        for i in range(loss.node.index, -1, -1):
            g = grads.get(i)
            if g is None:
                continue
            node = self.nodes[i]
            for parent, vjp in zip(node.parents, node.vjps):
                if parent is None:
                    continue
                contrib = vjp(g)
                seen = grads.get(parent)
                if seen is None:
                    # always copy: identity/view vjps may alias other entries
                    grads[parent] = np.array(contrib)
                else:
                    seen += contrib
        self.grads = grads
        return grads

    def grad(self, tensor):
        """Gradient accumulated for tensor by the last backward, or None."""
        if tensor.node is None or tensor.node.tape is not self:
            return None
        return self.grads.get(tensor.node.index)


def tensor(data):
    return Tensor(data)


def zeros(shape):
    return Tensor(np.zeros(shape, dtype=np.float64))


def _parent(t, tape):
    if t.node is not None and t.node.tape is tape:
        return t.node.index
    return None


def _emit(tape, value, inputs, vjps):
    if tape is None:
        return Tensor(value)
    parents = tuple(_parent(t, tape) for t in inputs)
    return tape._record(value, parents, vjps)


def _scalar_pair(kind, a, b):
    """Validate same-shape or scalar-vs-tensor operands; return scalar flags."""
    a_scalar = a.data.size == 1
    b_scalar = b.data.size == 1
    if a.shape != b.shape and not (a_scalar or b_scalar):
        raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}")
    return a_scalar, b_scalar


# ---------------------------------------------------------------------------
# primitive ops


def add(a, b):
    a_s, b_s = _scalar_pair("add", a, b)
    out = a.data + b.data
    tape = _active_tape()

    def da(g):
        return np.array([g.sum()]) if a_s and g.size > 1 else g

    def db(g):
        return np.array([g.sum()]) if b_s and g.size > 1 else g

    return _emit(tape, out, (a, b), (da, db))


def mul(a, b):
    a_s, b_s = _scalar_pair("mul", a, b)
    out = a.data * b.data
    tape = _active_tape()
    ad, bd = a.data, b.data

    def da(g):
        gb = g * bd
        return np.array([gb.sum()]) if a_s and gb.size > 1 else gb

    def db(g):
        ga = g * ad
        return np.array([ga.sum()]) if b_s and ga.size > 1 else ga

    return _emit(tape, out, (a, b), (da, db))


def scalar_scale(a, c):
    """Multiply by a python float constant."""
    c = float(c)
    out = a.data * c
    return _emit(_active_tape(), out, (a,), (lambda g: g * c,))


def matmul(a, b):
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        out = ad @ bd
        vjps = (lambda g: g @ bd.T, lambda g: ad.T @ g)
    elif ad.ndim == 1 and bd.ndim == 2:
        if ad.shape[0] != bd.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        out = ad @ bd
        vjps = (lambda g: bd @ g, lambda g: np.outer(ad, g))
    elif ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        out = ad @ bd
        vjps = (lambda g: np.outer(g, bd), lambda g: ad.T @ g)
    else:
        raise ShapeError(f"matmul: unsupported ranks {a.shape} and {b.shape}")
    return _emit(_active_tape(), out, (a, b), vjps)


def concat(parts):
    """Concatenate 1-d tensors."""
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError(f"concat: expected 1-d parts, got {p.shape}")
    out = np.concatenate([p.data for p in parts])
    offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])
    vjps = tuple(
        (lambda lo, hi: lambda g: g[lo:hi])(offsets[i], offsets[i + 1])
        for i in range(len(parts))
    )
    return _emit(_active_tape(), out, tuple(parts), vjps)


def stack_rows(rows):
    """Stack equal-length 1-d tensors into a matrix, one per row."""
    width = rows[0].data.shape[0]
    for r in rows:
        if r.data.ndim != 1 or r.data.shape[0] != width:
            raise ShapeError(f"stack-rows: expected ({width},) rows, got {r.shape}")
    out = np.stack([r.data for r in rows])
    vjps = tuple((lambda i: lambda g: g[i])(i) for i in range(len(rows)))
    return _emit(_active_tape(), out, tuple(rows), vjps)


def slice1d(a, start, stop):
    if a.data.ndim != 1:
        raise ShapeError(f"slice: expected 1-d input, got {a.shape}")
    n = a.data.shape[0]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice: range [{start}:{stop}) outside shape {a.shape}")
    out = a.data[start:stop]
    size = n

    def da(g):
        full = np.zeros(size)
        full[start:stop] = g
        return full

    return _emit(_active_tape(), out, (a,), (da,))


def sigmoid(a):
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _emit(_active_tape(), out, (a,), (lambda g: g * out * (1.0 - out),))


def tanh(a):
    out = np.tanh(a.data)
    return _emit(_active_tape(), out, (a,), (lambda g: g * (1.0 - out * out),))


def relu(a):
    out = np.maximum(a.data, 0.0)
    mask = a.data > 0
    return _emit(_active_tape(), out, (a,), (lambda g: g * mask,))


def log(a):
    out = np.log(a.data)
    ad = a.data
    return _emit(_active_tape(), out, (a,), (lambda g: g / ad,))


def softplus(a):
    """log(1 + exp(x)), overflow-safe."""
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = np.empty_like(x)
    pos = x >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    sig[~pos] = ex / (1.0 + ex)
    return _emit(_active_tape(), out, (a,), (lambda g: g * sig,))


def _check_softmax_input(kind, a):
    if a.data.ndim not in (1, 2):
        raise ShapeError(f"{kind}: expected 1-d or 2-d input, got {a.shape}")


def softmax(a):
    """Softmax over the last axis."""
    _check_softmax_input("softmax", a)
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=-1, keepdims=True)

    def da(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return out * (g - dot)

    return _emit(_active_tape(), out, (a,), (da,))


def log_softmax(a):
    _check_softmax_input("log-softmax", a)
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)

    def da(g):
        return g - sm * g.sum(axis=-1, keepdims=True)

    return _emit(_active_tape(), out, (a,), (da,))


def embedding_lookup(table, ids):
    """Gather rows of a (V, e) matrix; gradient scatters back into rows."""
    if table.data.ndim != 2:
        raise ShapeError(f"embedding-lookup: table must be 2-d, got {table.shape}")
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ShapeError("embedding-lookup: ids must be a non-empty 1-d sequence")
    if ids.min() < 0 or ids.max() >= table.data.shape[0]:
        raise ShapeError(
            f"embedding-lookup: id outside table with {table.data.shape[0]} rows"
        )
    out = table.data[ids]
    shape = table.data.shape

    def da(g):
        full = np.zeros(shape)
        np.add.at(full, ids, g)
        return full

    return _emit(_active_tape(), out, (table,), (da,))


def conv1d(x, filters, bias):
    """Valid 1-d convolution over time.

    x: (n, e) sequence; filters: (F, w, e); bias: (F,). Output (n-w+1, F)
    where out[t, f] = sum(filters[f] * x[t:t+w]) + bias[f]. Requires n >= w.
    """
    xd, fd, bd = x.data, filters.data, bias.data
    if xd.ndim != 2 or fd.ndim != 3 or bd.ndim != 1:
        raise ShapeError(
            f"1-d-convolution: expected (n,e), (F,w,e), (F,), got "
            f"{x.shape}, {filters.shape}, {bias.shape}"
        )
    nfilters, width, e = fd.shape
    n = xd.shape[0]
    if xd.shape[1] != e or bd.shape[0] != nfilters:
        raise ShapeError(
            f"1-d-convolution: incompatible shapes {x.shape} and {filters.shape}"
        )
    if n < width:
        raise ShapeError(f"1-d-convolution: input length {n} < filter width {width}")
    m = n - width + 1
    cols = np.empty((m, width * e))
    for i in range(width):
        cols[:, i * e : (i + 1) * e] = xd[i : i + m]
    fmat = fd.reshape(nfilters, width * e)
    out = cols @ fmat.T + bd

    def dx(g):
        dcols = g @ fmat
        full = np.zeros_like(xd)
        for i in range(width):
            full[i : i + m] += dcols[:, i * e : (i + 1) * e]
        return full

    def dfilters(g):
        return (g.T @ cols).reshape(nfilters, width, e)

    def dbias(g):
        return g.sum(axis=0)

    return _emit(_active_tape(), out, (x, filters, bias), (dx, dfilters, dbias))


def max_pool_time(a):
    """Column-wise max over time; gradient routes to the first maximal row."""
    if a.data.ndim != 2:
        raise ShapeError(f"max-pool-over-time: expected 2-d input, got {a.shape}")
    out = a.data.max(axis=0)
    argmax = a.data.argmax(axis=0)
    shape = a.data.shape

    def da(g):
        full = np.zeros(shape)
        full[argmax, np.arange(shape[1])] = g
        return full

    return _emit(_active_tape(), out, (a,), (da,))


def scatter_add(values, ids, size):
    """Route a 1-d vector into a zero vector of the given size by index."""
    if values.data.ndim != 1:
        raise ShapeError(f"scatter-add: expected 1-d values, got {values.shape}")
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != values.data.shape:
        raise ShapeError(
            f"scatter-add: ids shape {tuple(ids.shape)} != values shape {values.shape}"
        )
    if ids.size and (ids.min() < 0 or ids.max() >= size):
        raise ShapeError(f"scatter-add: id outside output size {size}")
    out = np.zeros(size)
    np.add.at(out, ids, values.data)
    return _emit(_active_tape(), out, (values,), (lambda g: g[ids],))


def sum_all(a):
    out = np.array([a.data.sum()])
    shape = a.data.shape
    return _emit(_active_tape(), out, (a,), (lambda g: np.full(shape, g[0]),))


def mean_all(a):
    n = a.data.size
    out = np.array([a.data.sum() / n])
    shape = a.data.shape
    return _emit(_active_tape(), out, (a,), (lambda g: np.full(shape, g[0] / n),))


def backward(loss):
    """Run backward on the tape that recorded loss; returns the grads map."""
    if loss.node is None:
        raise ValueError("backward: loss has no tape node")
    return loss.node.tape.backward(loss)


def grad_check(f, params, eps=1e-5):
    """Max relative error between tape gradients of f and central differences.

    f maps the given list of leaf Tensors to a scalar Tensor and must be a
    deterministic function of their values (define-by-run: it is re-executed
    per evaluation). Relative error per entry is |analytic - numeric| /
    max(1, |numeric|).
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    with Tape() as tape:
        for p in params:
            tape.leaf(p)
        out = f(params)
        if not np.isfinite(out.data).all():
            raise ValueError("grad_check: f returned a non-finite value")
        tape.backward(out)
        analytic = [tape.grad(p) for p in params]
    for p in params:
        p.node = None

    def value():
        y = f(params).item()
        if not np.isfinite(y):
            raise ValueError("grad_check: f returned a non-finite value")
        return y

    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        an_flat = (an if an is not None else np.zeros_like(p.data)).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = value()
            flat[j] = orig - eps
            down = value()
            flat[j] = orig
            numeric = (up - down) / (2.0 * eps)
            err = abs(an_flat[j] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst
