"""Differentiable scatter/gather primitives used by the fusion stages."""

import numpy as np

from ..errors import ValidationError
from .tensor import _result, as_tensor


def knn_weighted_pool(cells, idx, weights):
    """Weighted sum of gathered rows: out[n] = sum_k weights[n,k] * cells[idx[n,k]].

    cells: [Ncells, C] tensor; idx, weights: [N, K] constants. Used to pool
    the K nearest camera feature cells around each projected voxel center.
    """
    cells = as_tensor(cells)
    idx = np.asarray(idx, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if cells.data.ndim != 2 or idx.shape != weights.shape or idx.ndim != 2:
        raise ValidationError("knn_weighted_pool: cells [Ncells,C], idx/weights [N,K]")
    gathered = cells.data[idx]                      # [N, K, C]
    out = _result(np.einsum("nkc,nk->nc", gathered, weights), (cells,), "knn_weighted_pool")

    def _backward(g):
        if cells.requires_grad:
            acc = np.zeros_like(cells.data)
            contrib = weights[:, :, None] * g[:, None, :]   # [N, K, C]
            np.add.at(acc, idx.reshape(-1), contrib.reshape(-1, cells.data.shape[1]))
            cells.accumulate(acc)

    out._backward = _backward
    return out


def splat_to_voxels(features, probs, vox_idx, n_voxels):
    """Scatter depth-weighted cell features into a flat voxel tensor.

    features: [C, Ncells] tensor; probs: [D, Ncells] tensor; vox_idx: [D, Ncells]
    int constant (target flat voxel, or -1 to drop the contribution).
    Returns ([n_voxels, C] tensor, dropped_l1_mass float). The dropped mass is
    sum(prob * ||feature||_1) over dropped pairs, so with non-negative features
    the retained plus dropped L1 mass equals the total emitted mass.
    """
    features, probs = as_tensor(features), as_tensor(probs)
    vox_idx = np.asarray(vox_idx, dtype=np.int64)
    if features.data.ndim != 2 or probs.data.ndim != 2 or \
            features.data.shape[1] != probs.data.shape[1] or vox_idx.shape != probs.data.shape:
        raise ValidationError("splat_to_voxels: features [C,N], probs [D,N], vox_idx [D,N]")
    c = features.data.shape[0]
    d = probs.data.shape[0]
    feat_t = features.data.T                         # [N, C]
    out_data = np.zeros((n_voxels, c), dtype=np.float64)
    dropped = 0.0
    keep = vox_idx >= 0
    l1 = np.abs(feat_t).sum(axis=1)                  # [N]
    for b in range(d):
        m = keep[b]
        np.add.at(out_data, vox_idx[b, m], probs.data[b, m, None] * feat_t[m])
        if not m.all():
            dropped += float(probs.data[b, ~m] @ l1[~m])
    out = _result(out_data, (features, probs), "splat_to_voxels")

    def _backward(g):
        if features.requires_grad:
            gf = np.zeros_like(feat_t)
            for b in range(d):
                m = keep[b]
                gf[m] += probs.data[b, m, None] * g[vox_idx[b, m]]
            features.accumulate(gf.T)
        if probs.requires_grad:
            gp = np.zeros_like(probs.data)
            for b in range(d):
                m = keep[b]
                gp[b, m] = np.einsum("nc,nc->n", feat_t[m], g[vox_idx[b, m]])
            probs.accumulate(gp)

    out._backward = _backward
    return out, dropped


def gated_blend(a, b, gate):
    """Convex blend y = b + g*(a - b) with a single-channel gate.

    a, b: [C, *S]; gate: [1, *S] with values in [0,1]. The b + g*(a-b)
    arithmetic keeps every output exactly inside [min(a,b), max(a,b)]
    componentwise for g in [0,1].
    """
    a, b, gate = as_tensor(a), as_tensor(b), as_tensor(gate)
    if a.data.shape != b.data.shape or gate.data.shape != (1,) + a.data.shape[1:]:
        raise ValidationError("gated_blend: a/b must match and gate must be single-channel")
    g0 = gate.data[0]
    diff = a.data - b.data
    out = _result(b.data + g0 * diff, (a, b, gate), "gated_blend")

    def _backward(g):
        if a.requires_grad:
            a.accumulate(g * g0)
        if b.requires_grad:
            b.accumulate(g * (1.0 - g0))
        if gate.requires_grad:
            gate.accumulate((g * diff).sum(axis=0, keepdims=True))

    out._backward = _backward
    return out
