"""Single-stage joint training of all pipeline parameters."""

import numpy as np

from . import head, nncore
from .errors import ValidationError


def scene_loss(model, cache, hcfg):
    """Focal + weighted L1 loss for one scene.

    Matching: Hungarian on the class/box cost over (gt, query); matched
    queries are supervised toward their gt class and box, the rest toward
    "no object". Returns (total, focal, l1) tensors.
    """
    logits, boxes, _ = model.forward(cache)
    probs = nncore.softmax(logits, axis=1)
    gts = cache.scene.boxes
    nq = logits.data.shape[0]
    no_object = hcfg.num_classes
    targets = np.full(nq, no_object, dtype=np.int64)
    matched_queries = []
    gt_encoded = []
    if gts:
        if len(gts) > nq:
            raise ValidationError(f"scene has {len(gts)} boxes but only {nq} queries")
        cost = head.match_cost(probs.data, boxes.data, gts,
                               hcfg.cost_class_weight, hcfg.cost_box_weight)
        assign = head.hungarian(cost)
        for gi, qi in enumerate(assign):
            targets[qi] = gts[gi].class_id
            matched_queries.append(int(qi))
            gt_encoded.append(gts[gi].encoded())
    focal = head.focal_loss(probs, targets, len(matched_queries),
                            hcfg.focal_alpha, hcfg.focal_gamma)
    l1 = head.l1_box_loss(boxes, np.array(gt_encoded).reshape(-1, 8), matched_queries)
    total = nncore.add(focal, nncore.scale(l1, hcfg.loss_box_weight))
    return total, focal, l1


class _ScheduleIterator:
    """Deterministic shuffled scene order: a fresh permutation per epoch from (seed, epoch)."""

    def __init__(self, n_scenes, seed):
        self.n = n_scenes
        self.seed = seed
        self.epoch = 0
        self.pos = 0
        self.order = self._perm()

    def _perm(self):
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, self.epoch]))
        return rng.permutation(self.n)

    def take(self, k):
        out = []
        for _ in range(k):
            if self.pos == self.n:
                self.epoch += 1
                self.pos = 0
                self.order = self._perm()
            out.append(int(self.order[self.pos]))
            self.pos += 1
        return out


def train(model, scenes, tcfg, hcfg, start_step=0, opt_state=None):
    """Run tcfg.steps optimization steps; deterministic given seeds.

    Returns (losses, optimizer) where losses is a list of
    (step, total, focal, l1) float tuples, one per step.
    """
    caches = [model.prepare(s) for s in scenes]
    opt = nncore.Adam(list(model.params), lr=tcfg.lr)
    if opt_state is not None:
        opt.m, opt.v, opt.step_count = opt_state
    schedule = _ScheduleIterator(len(scenes), tcfg.seed)
    # replay the schedule consumed before a resume point
    schedule.take(start_step * tcfg.batch_size)
    losses = []
    for step in range(start_step, tcfg.steps):
        opt.zero_grad()
        batch = schedule.take(tcfg.batch_size)
        total = None
        focal_v = 0.0
        l1_v = 0.0
        for si in batch:
            t, fo, l1 = scene_loss(model, caches[si], hcfg)
            focal_v += float(fo.data)
            l1_v += float(l1.data)
            total = t if total is None else nncore.add(total, t)
        total = nncore.scale(total, 1.0 / len(batch))
        total.backward()
        opt.step()
        losses.append((step, float(total.data), focal_v / len(batch), l1_v / len(batch)))
    return losses, opt


def losses_csv(losses):
    lines = ["step,total,focal,l1"]
    for step, total, focal, l1 in losses:
        lines.append(f"{step},{total!r},{focal!r},{l1!r}")
    return "\n".join(lines) + "\n"


def optimizer_records(opt):
    """Optimizer state as checkpoint records (moments plus step counter)."""
    rec = {}
    for p in opt.params:
        rec[f"opt.m.{p.name}"] = opt.m[p.name]
        rec[f"opt.v.{p.name}"] = opt.v[p.name]
    rec["_meta.step"] = np.array([float(opt.step_count)])
    return rec


def optimizer_state_from_records(records, params):
    """Inverse of optimizer_records; None if the checkpoint has no optimizer state."""
    if "_meta.step" not in records:
        return None
    m = {}
    v = {}
    for p in params:
        mk, vk = f"opt.m.{p.name}", f"opt.v.{p.name}"
        if mk not in records or vk not in records:
            return None
        m[p.name] = records[mk].copy()
        v[p.name] = records[vk].copy()
    return m, v, int(records["_meta.step"][0])
