"""Composed layers built from tensor primitives."""

import math

from ..errors import ValidationError
from . import tensor as T


def linear(x, weight, bias=None):
    """y = x @ W (+ b) for x [..., Cin], W [Cin, Cout], b [Cout]."""
    x = T.as_tensor(x)
    if x.data.shape[-1] != weight.data.shape[0]:
        raise ValidationError(
            f"linear: input width {x.data.shape[-1]} != weight rows {weight.data.shape[0]}")
    lead = x.data.shape[:-1]
    flat = T.reshape(x, (-1, x.data.shape[-1])) if x.data.ndim != 2 else x
    y = T.matmul(flat, weight)
    if bias is not None:
        y = T.add_bias(y, bias)
    if x.data.ndim != 2:
        y = T.reshape(y, lead + (weight.data.shape[1],))
    return y


def attention(q, k, v):
    """Scaled dot-product attention: softmax(q kT / sqrt(d)) v.

    q: [Nq, d]; k, v: [Nk, d]. Single head, no projections.
    """
    q, k, v = T.as_tensor(q), T.as_tensor(k), T.as_tensor(v)
    if q.data.shape[1] != k.data.shape[1] or k.data.shape[0] != v.data.shape[0]:
        raise ValidationError("attention: q/k width or k/v length mismatch")
    logits = T.scale(T.matmul(q, T.transpose2d(k)), 1.0 / math.sqrt(q.data.shape[1]))
    return T.matmul(T.softmax(logits, axis=1), v)
