"""Independent brute-force reference implementations.

Deliberately naive: plain loops, no shared code with the fast paths they
check. Used by the selftest command and the test suite.
"""

import itertools
import math

import numpy as np

from . import geom


def conv2d_loops(x, k, b=None, stride=1, padding=0):
    """Triple-loop 2-d cross-correlation with zero padding."""
    cin, h, w = x.shape
    cout, _, kh, kw = k.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    xp = np.zeros((cin, h + 2 * padding, w + 2 * padding))
    xp[:, padding:padding + h, padding:padding + w] = x
    y = np.zeros((cout, ho, wo))
    for co in range(cout):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for ci in range(cin):
                    for a in range(kh):
                        for bb in range(kw):
                            acc += k[co, ci, a, bb] * xp[ci, i * stride + a, j * stride + bb]
                y[co, i, j] = acc + (b[co] if b is not None else 0.0)
    return y


def conv3d_loops(x, k, b=None, stride=1, padding=0):
    cin, sx, sy, sz = x.shape
    cout = k.shape[0]
    kx, ky, kz = k.shape[2:]
    ox = (sx + 2 * padding - kx) // stride + 1
    oy = (sy + 2 * padding - ky) // stride + 1
    oz = (sz + 2 * padding - kz) // stride + 1
    xp = np.zeros((cin, sx + 2 * padding, sy + 2 * padding, sz + 2 * padding))
    xp[:, padding:padding + sx, padding:padding + sy, padding:padding + sz] = x
    y = np.zeros((cout, ox, oy, oz))
    for co in range(cout):
        for i in range(ox):
            for j in range(oy):
                for l in range(oz):
                    acc = 0.0
                    for ci in range(cin):
                        for a in range(kx):
                            for bb in range(ky):
                                for c in range(kz):
                                    acc += k[co, ci, a, bb, c] * \
                                        xp[ci, i * stride + a, j * stride + bb, l * stride + c]
                    y[co, i, j, l] = acc + (b[co] if b is not None else 0.0)
    return y


def attention_loops(q, k, v):
    """Row-by-row softmax(q kT / sqrt(d)) v."""
    nq, d = q.shape
    nk = k.shape[0]
    out = np.zeros((nq, v.shape[1]))
    for i in range(nq):
        logits = [sum(q[i, t] * k[j, t] for t in range(d)) / math.sqrt(d) for j in range(nk)]
        mx = max(logits)
        es = [math.exp(l - mx) for l in logits]
        z = sum(es)
        for j in range(nk):
            for t in range(v.shape[1]):
                out[i, t] += es[j] / z * v[j, t]
    return out


def hungarian_brute(cost):
    """Exact minimum assignment by enumerating all column permutations."""
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    best = None
    best_cost = math.inf
    for perm in itertools.permutations(range(m), n):
        c = sum(cost[i, perm[i]] for i in range(n))
        if c < best_cost:
            best_cost = c
            best = perm
    return list(best), best_cost


def nearest_seed_fill(values, mask):
    """Per-pixel scan over all seeds; first row-major seed wins exact ties."""
    h, w = values.shape
    seeds = [(y, x) for y in range(h) for x in range(w) if mask[y, x]]
    out = np.zeros_like(values)
    for y in range(h):
        for x in range(w):
            best = None
            best_d = None
            for sy, sx in seeds:
                d = (y - sy) ** 2 + (x - sx) ** 2
                if best is None or d < best_d:
                    best, best_d = (sy, sx), d
            out[y, x] = values[best]
    return out


def splat_accumulate(features, probs, cam, grid, stride, bin_centers):
    """Per-(cell, bin) accumulation into a dense voxel volume.

    features: [C, Hf, Wf]; probs: [D, Hf, Wf]. Returns ([C,Nx,Ny,Nz], dropped mass).
    """
    c, hf, wf = features.shape
    d = probs.shape[0]
    out = np.zeros((c,) + grid.dims)
    dropped = 0.0
    for r in range(hf):
        for cc in range(wf):
            for b in range(d):
                p = geom.unproject_pixel(cc * stride, r * stride, bin_centers[b], cam)
                (ix, iy, iz), ok = geom.voxel_index(p, grid)
                if ok:
                    out[:, ix, iy, iz] += probs[b, r, cc] * features[:, r, cc]
                else:
                    dropped += probs[b, r, cc] * np.abs(features[:, r, cc]).sum()
    return out, dropped


def ap_reference(records, n_gt):
    """AP from (is_tp, score, order) records via trapezoidal np.trapz.

    records must already be the greedy match outcomes; this recomputes the
    ranking, the PR curve and the integral with independent code.
    """
    if n_gt == 0:
        return None
    if not records:
        return 0.0
    ranked = sorted(records, key=lambda r: (-r[1], r[2]))
    tps = np.cumsum([1 if r[0] else 0 for r in ranked])
    ranks = np.arange(1, len(ranked) + 1)
    precision = tps / ranks
    recall = tps / n_gt
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    recall = np.concatenate([[0.0], recall])
    precision = np.concatenate([[precision[0]], precision])
    return float(np.trapz(precision, recall))


def match_greedy(predictions, gts, threshold):
    """Independent greedy matcher for the AP oracle.

    predictions: list of (score, order, scene, x, y); gts: list of
    (scene, x, y). Returns records for ap_reference.
    """
    taken = set()
    records = []
    for score, order, scene, px, py in sorted(predictions, key=lambda p: (-p[0], p[1])):
        cands = []
        for gi, (gscene, gx, gy) in enumerate(gts):
            if gscene != scene or gi in taken:
                continue
            dist = math.hypot(px - gx, py - gy)
            if dist <= threshold:
                cands.append((dist, gi))
        if cands:
            cands.sort()
            taken.add(cands[0][1])
            records.append((True, score, order))
        else:
            records.append((False, score, order))
    return records


def vem_scalar(voxel_feature, neighbor_features, distances, weight, bias, eps):
    """Scalar evaluation of the voxel enhancement for one voxel.

    Reciprocal-distance softmax weights, weighted feature sum, linear+relu,
    residual add. All plain python floats.
    """
    logits = [1.0 / (d + eps) for d in distances]
    mx = max(logits)
    es = [math.exp(l - mx) for l in logits]
    z = sum(es)
    ws = [e / z for e in es]
    c2d = len(neighbor_features[0])
    pooled = [sum(ws[k] * neighbor_features[k][j] for k in range(len(ws))) for j in range(c2d)]
    out = []
    for j in range(len(bias)):
        val = sum(pooled[i] * weight[i][j] for i in range(c2d)) + bias[j]
        out.append(max(val, 0.0) + voxel_feature[j])
    return out


def gate_fuse_scalar(f_lidar, f_cam, params):
    """Scalar evaluation of the adaptive fusion for one voxel column.

    f_lidar, f_cam: [C] lists; params carries 1x1x1 conv weights as plain
    nested lists: proj (applied beforehand by the caller if needed),
    gate_a/gate_b [C][C] + biases, gate_c [2C] + bias.
    """
    c = len(f_lidar)
    a = [sum(params["gate_a_k"][o][i] * f_lidar[i] for i in range(c)) + params["gate_a_b"][o]
         for o in range(c)]
    b = [sum(params["gate_b_k"][o][i] * f_cam[i] for i in range(c)) + params["gate_b_b"][o]
         for o in range(c)]
    alpha = sum(params["gate_c_k"][i] * (a + b)[i] for i in range(2 * c)) + params["gate_c_b"]
    g = 1.0 / (1.0 + math.exp(-alpha))
    return [f_cam[i] + g * (f_lidar[i] - f_cam[i]) for i in range(c)]
