"""Query-based detection head: attention decode, box/class prediction,
Hungarian matching and the focal + L1 training losses."""

import math
from dataclasses import dataclass

import numpy as np

from . import nncore
from .errors import ValidationError


@dataclass
class Box3D:
    """Oriented 3D box: center (x,y,z) m, size (w,l,h) m, yaw rad, class id, score."""

    center: tuple
    size: tuple
    yaw: float
    class_id: int
    score: float = 1.0

    def __post_init__(self):
        self.center = tuple(float(v) for v in self.center)
        self.size = tuple(float(v) for v in self.size)
        self.yaw = float(self.yaw)
        if any(s <= 0 for s in self.size):
            raise ValidationError("Box3D: sizes must be positive")

    def encoded(self):
        """Regression target [x, y, z, w, l, h, sin(yaw), cos(yaw)]."""
        return np.array([*self.center, *self.size, math.sin(self.yaw), math.cos(self.yaw)])


class QuerySet:
    """Learned object query embeddings [Nq, d]."""

    def __init__(self, embeddings):
        self.embeddings = embeddings
        if embeddings.data.ndim != 2:
            raise ValidationError("QuerySet: embeddings must be [Nq, d]")

    @property
    def count(self):
        return self.embeddings.data.shape[0]

    @property
    def dim(self):
        return self.embeddings.data.shape[1]


def sinusoidal_pe_2d(nx, ny, d):
    """Additive 2D positional encodings for BEV keys flattened as x*ny + y."""
    if d % 4:
        raise ValidationError("sinusoidal_pe_2d: model width must be divisible by 4")
    half = d // 2

    def pe_1d(positions):
        i = np.arange(half // 2)
        freq = 1.0 / np.power(10000.0, 2.0 * i / half)
        ang = positions[:, None] * freq[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)

    xs = np.repeat(np.arange(nx, dtype=np.float64), ny)
    ys = np.tile(np.arange(ny, dtype=np.float64), nx)
    return np.concatenate([pe_1d(xs), pe_1d(ys)], axis=1)


@dataclass
class AttentionParams:
    wq: nncore.Parameter
    bq: nncore.Parameter
    wk: nncore.Parameter
    bk: nncore.Parameter
    wv: nncore.Parameter
    bv: nncore.Parameter
    wo: nncore.Parameter
    bo: nncore.Parameter


@dataclass
class DecodeParams:
    key_k: nncore.Parameter      # 1x1 conv BEV channels -> d
    key_b: nncore.Parameter
    self_attn: AttentionParams
    cross_attn: AttentionParams
    ffn_w1: nncore.Parameter
    ffn_b1: nncore.Parameter
    ffn_w2: nncore.Parameter
    ffn_b2: nncore.Parameter


def _attend(x, keys, p):
    q = nncore.linear(x, p.wq.tensor, p.bq.tensor)
    k = nncore.linear(keys, p.wk.tensor, p.bk.tensor)
    v = nncore.linear(keys, p.wv.tensor, p.bv.tensor)
    out = nncore.attention(q, k, v)
    return nncore.linear(out, p.wo.tensor, p.bo.tensor)


def decode(queries, bev, params):
    """Decode object queries against BEV features.

    One self-attention layer over the queries, one cross-attention layer to
    the 1x1-projected, positionally-encoded BEV keys, then a two-layer FFN,
    each wrapped in a residual connection.
    """
    d = queries.dim
    if params.key_k.data.shape[0] != d or params.key_k.data.shape[1] != bev.data.shape[0]:
        raise ValidationError("decode: key projection does not match BEV channels / model width")
    nx, ny = bev.data.shape[1], bev.data.shape[2]
    proj = nncore.conv2d(bev, params.key_k.tensor, params.key_b.tensor)
    keys = nncore.transpose2d(nncore.reshape(proj, (d, nx * ny)))
    keys = nncore.add_const(keys, sinusoidal_pe_2d(nx, ny, d))
    x = queries.embeddings if isinstance(queries.embeddings, nncore.Tensor) else queries.embeddings.tensor
    x = nncore.add(x, _attend(x, x, params.self_attn))
    x = nncore.add(x, _attend(x, keys, params.cross_attn))
    h = nncore.relu(nncore.linear(x, params.ffn_w1.tensor, params.ffn_b1.tensor))
    return nncore.add(x, nncore.linear(h, params.ffn_w2.tensor, params.ffn_b2.tensor))


@dataclass
class PredictParams:
    cls_w1: nncore.Parameter
    cls_b1: nncore.Parameter
    cls_w2: nncore.Parameter
    cls_b2: nncore.Parameter
    box_w1: nncore.Parameter
    box_b1: nncore.Parameter
    box_w2: nncore.Parameter
    box_b2: nncore.Parameter


def predict(decoded, params, grid):
    """Map decoded queries to (class logits [Nq, n_cls+1], boxes [Nq, 8]).

    Box columns are [x, y, z, w, l, h, sin_yaw, cos_yaw]: centers are
    sigmoid-normalized over the grid range, sizes exp-mapped (always > 0),
    and the yaw pair normalized to the unit circle. The last class index
    is "no object".
    """
    h_cls = nncore.relu(nncore.linear(decoded, params.cls_w1.tensor, params.cls_b1.tensor))
    logits = nncore.linear(h_cls, params.cls_w2.tensor, params.cls_b2.tensor)
    h_box = nncore.relu(nncore.linear(decoded, params.box_w1.tensor, params.box_b1.tensor))
    raw = nncore.linear(h_box, params.box_w2.tensor, params.box_b2.tensor)
    if raw.data.shape[1] != 8:
        raise ValidationError("predict: box head must emit 8 values per query")
    cols = [nncore.narrow(raw, 1, i, 1) for i in range(8)]
    centers = []
    for axis in range(3):
        lo = grid.range_min[axis]
        hi = grid.range_max[axis]
        centers.append(nncore.add_const(nncore.scale(nncore.sigmoid(cols[axis]), hi - lo), lo))
    sizes = [nncore.exp(cols[i]) for i in (3, 4, 5)]
    s, c = cols[6], cols[7]
    norm = nncore.clamp_min(nncore.sqrt(nncore.add(nncore.mul(s, s), nncore.mul(c, c))), 1e-6)
    boxes = nncore.concat(centers + sizes + [nncore.div(s, norm), nncore.div(c, norm)], axis=1)
    return logits, boxes


def boxes_from_predictions(logits, boxes, min_score=0.0):
    """Decode per-query outputs into Box3D detections.

    Class is the argmax over real classes; the score is that class's
    softmax probability (so queries confident in "no object" rank last).
    """
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    out = []
    for q in range(boxes.shape[0]):
        cls = int(np.argmax(probs[q, :-1]))
        score = float(probs[q, cls])
        if score < min_score:
            continue
        x, y, z, w, l, h, sy, cy = boxes[q]
        out.append(Box3D((x, y, z), (w, l, h), math.atan2(sy, cy), cls, score))
    return out


def hungarian(cost):
    """Minimum-cost injective assignment of rows to columns (n <= m).

    Potentials-based shortest augmenting path; returns one column index per
    row, all distinct, with optimal total cost.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValidationError("hungarian: cost must be 2-d")
    n, m = cost.shape
    if n > m:
        raise ValidationError(f"hungarian: needs n <= m, got {n}x{m}")
    if not np.all(np.isfinite(cost)):
        raise ValidationError("hungarian: non-finite costs")
    inf = float("inf")
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)     # p[j] = row matched to column j (1-based)
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = -1
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assign = np.zeros(n, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            assign[p[j] - 1] = j - 1
    return assign


def match_cost(class_probs, pred_boxes, gt_boxes, lambda_cls=1.0, lambda_box=0.25):
    """[n_gt, Nq] matching cost.

    cost = lambda_cls * (1 - p(gt class)) + lambda_box * mean-L1 between the
    8 predicted box parameters and the encoded ground truth.
    """
    n_gt = len(gt_boxes)
    nq = class_probs.shape[0]
    cost = np.zeros((n_gt, nq))
    for i, gt in enumerate(gt_boxes):
        enc = gt.encoded()
        cls_term = 1.0 - class_probs[:, gt.class_id]
        box_term = np.abs(pred_boxes - enc[None, :]).mean(axis=1)
        cost[i] = lambda_cls * cls_term + lambda_box * box_term
    return cost


def focal_loss(class_probs, targets, n_matched, alpha=0.25, gamma=2.0):
    """Focal classification loss over all queries.

    class_probs: [Nq, n_cls+1] tensor of softmax probabilities; targets: the
    per-query class index (matched queries get their gt class, the rest the
    "no object" index). Summed over queries, normalized by matched count.
    """
    targets = np.asarray(targets, dtype=np.int64)
    nq = class_probs.data.shape[0]
    pt = nncore.gather_elements(class_probs, np.arange(nq), targets)
    focus = nncore.pow_const(nncore.add_const(nncore.neg(pt), 1.0), gamma)
    lg = nncore.log(nncore.clamp_min(pt, 1e-12))
    return nncore.scale(nncore.sum_all(nncore.mul(focus, lg)), -alpha / max(n_matched, 1))


def l1_box_loss(pred_boxes, gt_encoded, matched_queries):
    """Mean absolute error over the 8 box parameters of matched pairs."""
    if len(matched_queries) == 0:
        return nncore.Tensor(0.0)
    sel = nncore.gather_rows(pred_boxes, np.asarray(matched_queries, dtype=np.int64))
    diff = nncore.add_const(sel, -np.asarray(gt_encoded, dtype=np.float64))
    return nncore.mean_all(nncore.abs_(diff))
