"""Reverse-mode differentiation over numpy arrays.

Only the operations the framelet teachers and FMLP students compose are
provided. Every op builds a :class:`Tensor` that remembers its parents and a
closure mapping the output adjoint to parent adjoints; :func:`gradients`
walks the recorded graph in reverse topological order.
"""
import numpy as np


class Tensor:
    __slots__ = ("value", "parents", "backward_fn", "requires_grad")

    __array_priority__ = 1000  # make ndarray @ Tensor defer to Tensor.__rmatmul__

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def variable(value):
    """A leaf that gradients are taken with respect to."""
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True)


def lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _op(value, parents, backward_fn):
    if not any(p.requires_grad for p in parents):
        return Tensor(value)
    return Tensor(value, parents, backward_fn)


# ----------------------------------------------------------------- primitives


def add(a, b):
    a, b = lift(a), lift(b)
    return _op(a.value + b.value, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = lift(a), lift(b)
    return _op(a.value - b.value, (a, b),
               lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b):
    a, b = lift(a), lift(b)
    return _op(a.value * b.value, (a, b),
               lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def matmul(a, b):
    a, b = lift(a), lift(b)

    def back(g):
        ga = g @ b.value.T if a.requires_grad else None
        gb = a.value.T @ g if b.requires_grad else None
        return ga, gb

    return _op(a.value @ b.value, (a, b), back)


def sigmoid(x):
    x = lift(x)
    v = x.value
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ez = np.exp(v[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _op(out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x):
    x = lift(x)
    mask = x.value > 0
    return _op(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def softmax_rows(x):
    """Row-wise softmax with max subtraction."""
    x = lift(x)
    z = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (s * (g - np.sum(g * s, axis=1, keepdims=True)),)

    return _op(s, (x,), back)


def log_floor(x, floor=1e-12):
    """log(max(x, floor)); zero gradient where the floor is active."""
    x = lift(x)
    active = x.value > floor
    safe = np.where(active, x.value, floor)
    return _op(np.log(safe), (x,), lambda g: (np.where(active, g / safe, 0.0),))


def concat_cols(a, b):
    a, b = lift(a), lift(b)
    k = a.shape[1]
    return _op(np.concatenate([a.value, b.value], axis=1), (a, b), lambda g: (g[:, :k], g[:, k:]))


def take_rows(x, rows):
    """Rows selected by an index array or boolean mask."""
    x = lift(x)
    rows = np.asarray(rows)
    if rows.dtype == bool:
        rows = np.flatnonzero(rows)

    def back(g):
        out = np.zeros_like(x.value)
        np.add.at(out, rows, g)
        return (out,)

    return _op(x.value[rows], (x,), back)


def gather(x, rows, cols):
    """x[rows[k], cols[k]] as a vector."""
    x = lift(x)
    rows = np.asarray(rows)
    cols = np.asarray(cols)

    def back(g):
        out = np.zeros_like(x.value)
        np.add.at(out, (rows, cols), g)
        return (out,)

    return _op(x.value[rows, cols], (x,), back)


def sum_rows(x):
    """Sum over columns, keeping an (n, 1) column."""
    x = lift(x)
    return _op(x.value.sum(axis=1, keepdims=True), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def total(x):
    x = lift(x)
    return _op(np.asarray(x.value.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def mean(x):
    x = lift(x)
    size = x.value.size
    return _op(np.asarray(x.value.mean()), (x,), lambda g: (np.full(x.shape, float(g) / size),))


# ------------------------------------------------------------------- backward


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def gradients(loss, params):
    """d loss / d p for every tensor in ``params`` (zeros if ``loss`` does not depend on it)."""
    if loss.value.size != 1:
        raise ValueError("gradients() needs a scalar loss")
    adj = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topological(loss)):
        g = adj.pop(id(node), None)
        if g is None or node.backward_fn is None:
            if g is not None:
                adj[id(node)] = g  # leaf: keep for lookup
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            adj[key] = adj[key] + pg if key in adj else pg
    return [adj.get(id(p), np.zeros_like(p.value)) for p in params]


def column(x):
    """Reshape a length-n vector to an (n, 1) column."""
    x = lift(x)
    shape = x.shape
    return _op(x.value.reshape(-1, 1), (x,), lambda g: (g.reshape(shape),))
