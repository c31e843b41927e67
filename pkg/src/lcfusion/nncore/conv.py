"""Strided N-d cross-correlation via im2col patches and slice col2im.

conv2d works on [C,H,W], conv3d on [C,X,Y,Z] (no batch axis; the pipeline
is single-scene). Zero padding; output extents must divide exactly:
out = (n + 2*pad - k)/stride + 1.

The patch matrix [Cin*prod(k), prod(out)] is assembled from one strided
slice per kernel offset, so the convolution is a single gemm. Backward is
exact: weight grads gemm the output gradient against the patches, input
grads push the patch gradient back through the same slices.
"""

import itertools

import numpy as np

from ..errors import ValidationError
from .tensor import _result, as_tensor


def _out_size(n, k, stride, pad, op):
    if (n + 2 * pad - k) % stride != 0:
        raise ValidationError(
            f"{op}: non-integral output size for extent {n}, kernel {k}, "
            f"stride {stride}, padding {pad}")
    return (n + 2 * pad - k) // stride + 1


def _offset_slices(kshape, oshape, stride):
    return [
        (slice(None),) + tuple(slice(o, o + n * stride, stride) for o, n in zip(offs, oshape))
        for offs in itertools.product(*[range(k) for k in kshape])
    ]


def _conv_nd(x, kernel, bias, stride, padding, nd, op):
    x, kernel = as_tensor(x), as_tensor(kernel)
    if bias is not None:
        bias = as_tensor(bias)
    if x.data.ndim != nd + 1 or kernel.data.ndim != nd + 2:
        raise ValidationError(f"{op}: expects [C, spatial...] input and [Co, Ci, k...] kernel")
    cin = x.data.shape[0]
    cout = kernel.data.shape[0]
    if kernel.data.shape[1] != cin:
        raise ValidationError(f"{op}: kernel Cin {kernel.data.shape[1]} != input channels {cin}")
    kshape = kernel.data.shape[2:]
    spatial = x.data.shape[1:]
    oshape = tuple(_out_size(n, k, stride, padding, op) for n, k in zip(spatial, kshape))
    if bias is not None and bias.data.shape != (cout,):
        raise ValidationError(f"{op}: bias shape {bias.data.shape} != ({cout},)")
    prev = tuple(t for t in (x, kernel, bias) if t is not None)
    npos = int(np.prod(oshape))

    if all(k == 1 for k in kshape) and stride == 1 and padding == 0:
        # pointwise fast path
        kmat = kernel.data.reshape(cout, cin)
        y = kmat @ x.data.reshape(cin, npos)
        if bias is not None:
            y = y + bias.data[:, None]
        out = _result(y.reshape((cout,) + oshape), prev, op)

        def _backward_pw(g):
            gmat = g.reshape(cout, npos)
            if x.requires_grad:
                x.accumulate((kmat.T @ gmat).reshape(x.data.shape))
            if kernel.requires_grad:
                kernel.accumulate((gmat @ x.data.reshape(cin, npos).T).reshape(kernel.data.shape))
            if bias is not None and bias.requires_grad:
                bias.accumulate(gmat.sum(axis=1))

        out._backward = _backward_pw
        return out

    padded = tuple(n + 2 * padding for n in spatial)
    inner = (slice(None),) + tuple(slice(padding, padding + n) for n in spatial)
    if padding:
        xpad = np.zeros((cin,) + padded, dtype=np.float64)
        xpad[inner] = x.data
    else:
        xpad = x.data
    slices = _offset_slices(kshape, oshape, stride)
    nk = len(slices)
    patches = np.empty((cin, nk, npos), dtype=np.float64)
    for si, sl in enumerate(slices):
        patches[:, si, :] = xpad[sl].reshape(cin, npos)
    patches = patches.reshape(cin * nk, npos)
    kmat = kernel.data.reshape(cout, cin * nk)
    y = kmat @ patches
    if bias is not None:
        y += bias.data[:, None]
    out = _result(y.reshape((cout,) + oshape), prev, op)

    def _backward(g):
        gmat = g.reshape(cout, npos)
        if kernel.requires_grad:
            kernel.accumulate((gmat @ patches.T).reshape(kernel.data.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate(gmat.sum(axis=1))
        if x.requires_grad:
            gpatches = (kmat.T @ gmat).reshape(cin, nk, npos)
            gpad = np.zeros((cin,) + padded, dtype=np.float64)
            for si, sl in enumerate(slices):
                gpad[sl] += gpatches[:, si, :].reshape((cin,) + oshape)
            x.accumulate(gpad[inner] if padding else gpad)

    out._backward = _backward
    return out


def conv2d(x, kernel, bias=None, stride=1, padding=0):
    """Cross-correlate x [Cin,H,W] with kernel [Cout,Cin,kh,kw]."""
    return _conv_nd(x, kernel, bias, stride, padding, 2, "conv2d")


def conv3d(x, kernel, bias=None, stride=1, padding=0):
    """Cross-correlate x [Cin,X,Y,Z] with kernel [Cout,Cin,kx,ky,kz]."""
    return _conv_nd(x, kernel, bias, stride, padding, 3, "conv3d")
