"""Reverse-mode autodiff tensor over float64 numpy buffers.

Every operation the detection pipeline needs is a module-level function
returning a new Tensor whose ``_backward`` closure accumulates exact
gradients into its inputs. ``Tensor.backward()`` topologically sorts the
graph and runs the closures in reverse.

Broadcasting is deliberately restricted to bias addition; everything else
takes explicit shapes (reshape/permute/concat are provided instead).
All op outputs are checked finite and raise NumericalError otherwise.
"""

import numpy as np

from ..errors import NumericalError, ValidationError

# Flip off only for throwaway experiments; acceptance runs keep it on.
FINITE_CHECKS = True


class Tensor:
    """N-d float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_backward", "_prev")

    def __init__(self, data, requires_grad=False, op="leaf", _prev=()):
        arr = np.asarray(data, dtype=np.float64)
        if FINITE_CHECKS and not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite values in tensor from op '{op}'", op)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._backward = None
        self._prev = _prev

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self, seed=None):
        """Run reverse-mode accumulation from this tensor.

        ``seed`` defaults to ones (use a scalar output for losses).
        """
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if id(child) not in visited:
                    stack.append((child, False))
        self.accumulate(np.ones_like(self.data) if seed is None else np.asarray(seed, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op}, requires_grad={self.requires_grad})"


def _result(data, prev, op):
    req = any(p.requires_grad for p in prev)
    out = Tensor(data, requires_grad=req, op=op, _prev=tuple(p for p in prev if p.requires_grad))
    return out


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ValidationError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "add")
    out = _result(a.data + b.data, (a, b), "add")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    out._backward = _backward
    return out


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "sub")
    out = _result(a.data - b.data, (a, b), "sub")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(-g)

    out._backward = _backward
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "mul")
    out = _result(a.data * b.data, (a, b), "mul")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(g * b.data)
        if b.requires_grad:
            b.accumulate(g * a.data)

    out._backward = _backward
    return out


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "div")
    with np.errstate(invalid="ignore", divide="ignore"):
        y = a.data / b.data
    out = _result(y, (a, b), "div")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(g / b.data)
        if b.requires_grad:
            b.accumulate(-g * a.data / (b.data * b.data))

    out._backward = _backward
    return out


def scale(a, s):
    """Multiply by a python/numpy constant (no gradient for s)."""
    a = as_tensor(a)
    s = float(s)
    out = _result(a.data * s, (a,), "scale")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(g * s)

    out._backward = _backward
    return out


def add_const(a, c):
    """Add a constant array or scalar (no gradient for c)."""
    a = as_tensor(a)
    c = np.asarray(c, dtype=np.float64)
    if c.ndim and c.shape != a.data.shape:
        raise ValidationError(f"add_const: shape mismatch {a.data.shape} vs {c.shape}")
    out = _result(a.data + c, (a,), "add_const")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(g)

    out._backward = _backward
    return out


def neg(a):
    return scale(a, -1.0)


def add_bias(x, b):
    """x[..., C] + b[C]; the only broadcast in the engine."""
    x, b = as_tensor(x), as_tensor(b)
    if b.data.ndim != 1 or x.data.shape[-1] != b.data.shape[0]:
        raise ValidationError(f"add_bias: bias {b.data.shape} does not match {x.data.shape}")
    out = _result(x.data + b.data, (x, b), "add_bias")

    def _backward(g):
        if x.requires_grad:
            x.accumulate(g)
        if b.requires_grad:
            b.accumulate(g.reshape(-1, b.data.shape[0]).sum(axis=0))

    out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# activations and pointwise nonlinearities


def relu(a):
    a = as_tensor(a)
    out = _result(np.maximum(a.data, 0.0), (a,), "relu")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(g * (a.data > 0.0))

    out._backward = _backward
    return out


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = _result(y, (a,), "sigmoid")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(g * y * (1.0 - y))

    out._backward = _backward
    return out


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    out = _result(y, (a,), "exp")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(g * y)

    out._backward = _backward
    return out


def log(a):
    a = as_tensor(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        y = np.log(a.data)
    out = _result(y, (a,), "log")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(g / a.data)

    out._backward = _backward
    return out


def sqrt(a):
    a = as_tensor(a)
    y = np.sqrt(a.data)
    out = _result(y, (a,), "sqrt")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(g * 0.5 / y)

    out._backward = _backward
    return out


def pow_const(a, p):
    """a ** p for a constant exponent; defined for a >= 0."""
    a = as_tensor(a)
    p = float(p)
    out = _result(np.power(a.data, p), (a,), "pow_const")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(g * p * np.power(a.data, p - 1.0))

    out._backward = _backward
    return out


def clamp_min(a, c):
    """Lower clamp; gradient passes only where a > c."""
    a = as_tensor(a)
    c = float(c)
    out = _result(np.maximum(a.data, c), (a,), "clamp_min")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(g * (a.data > c))

    out._backward = _backward
    return out


def softmax(a, axis=-1):
    """Max-subtracted softmax along one axis."""
    a = as_tensor(a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _result(y, (a,), "softmax")

    def _backward(g):
        if a.requires_grad:
            gy = g * y
            a.accumulate(gy - y * gy.sum(axis=axis, keepdims=True))

    out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape):
    a = as_tensor(a)
    out = _result(a.data.reshape(shape), (a,), "reshape")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(g.reshape(a.data.shape))

    out._backward = _backward
    return out


def permute(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = _result(np.ascontiguousarray(a.data.transpose(axes)), (a,), "permute")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(g.transpose(inv))

    out._backward = _backward
    return out


def transpose2d(a):
    return permute(a, (1, 0))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    out = _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat")
    offsets = np.cumsum([0] + sizes)

    def _backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate(g[tuple(idx)])

    out._backward = _backward
    return out


def subsample2d(a, step):
    """Keep every step-th row/column of a [C, H, W] tensor, starting at 0.

    Composing a same-padding conv with this equals the strided conv
    evaluated at positions 0, step, 2*step, ...
    """
    a = as_tensor(a)
    if a.data.ndim != 3:
        raise ValidationError("subsample2d: expects [C, H, W]")
    out = _result(a.data[:, ::step, ::step].copy(), (a,), "subsample2d")

    def _backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, ::step, ::step] = g
            a.accumulate(full)

    out._backward = _backward
    return out


def narrow(a, axis, start, length):
    """Contiguous slice along one axis."""
    a = as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = _result(a.data[idx].copy(), (a,), "narrow")

    def _backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            a.accumulate(full)

    out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValidationError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    out = _result(a.data @ b.data, (a, b), "matmul")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# reductions


def sum_all(a):
    a = as_tensor(a)
    out = _result(a.data.sum(), (a,), "sum")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(np.full_like(a.data, float(g)))

    out._backward = _backward
    return out


def sum_axis(a, axis):
    a = as_tensor(a)
    out = _result(a.data.sum(axis=axis), (a,), "sum_axis")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    out._backward = _backward
    return out


def mean_all(a):
    a = as_tensor(a)
    return scale(sum_all(a), 1.0 / a.data.size)


def abs_(a):
    a = as_tensor(a)
    out = _result(np.abs(a.data), (a,), "abs")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(g * np.sign(a.data))

    out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# gather / scatter


def gather_rows(a, idx):
    """Select rows of a 2-d tensor: out[i] = a[idx[i]]."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    if a.data.ndim != 2:
        raise ValidationError("gather_rows: expects a 2-d tensor")
    out = _result(a.data[idx], (a,), "gather_rows")

    def _backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, idx, g)
            a.accumulate(acc)

    out._backward = _backward
    return out


def gather_elements(a, rows, cols):
    """out[i] = a[rows[i], cols[i]] for a 2-d tensor."""
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    out = _result(a.data[rows, cols], (a,), "gather_elements")

    def _backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, (rows, cols), g)
            a.accumulate(acc)

    out._backward = _backward
    return out


def scatter_rows(rows, idx, size):
    """Place rows[i] at position idx[i] of a zero-initialized [size, C] tensor.

    Indices must be unique (each output row is written at most once).
    """
    rows = as_tensor(rows)
    idx = np.asarray(idx, dtype=np.int64)
    if rows.data.ndim != 2 or idx.shape != (rows.data.shape[0],):
        raise ValidationError("scatter_rows: rows must be [N, C] with idx of length N")
    data = np.zeros((size, rows.data.shape[1]), dtype=np.float64)
    data[idx] = rows.data
    out = _result(data, (rows,), "scatter_rows")

    def _backward(g):
        if rows.requires_grad:
            rows.accumulate(g[idx])

    out._backward = _backward
    return out


def scale_rows(a, s):
    """Row-wise scaling of a 2-d tensor by a constant vector s[N]."""
    a = as_tensor(a)
    s = np.asarray(s, dtype=np.float64)
    if a.data.ndim != 2 or s.shape != (a.data.shape[0],):
        raise ValidationError("scale_rows: scale vector must match row count")
    out = _result(a.data * s[:, None], (a,), "scale_rows")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(g * s[:, None])

    out._backward = _backward
    return out
