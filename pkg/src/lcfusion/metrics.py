"""Center-distance matched average precision, nuScenes-style at desk scale."""

import math
from dataclasses import dataclass

from .errors import ValidationError

THRESHOLDS = (0.5, 1.0, 2.0, 4.0)


@dataclass
class DetectionSet:
    """Predictions (scored Box3D) and ground truth for one scene."""

    predictions: list
    ground_truth: list
    scene_id: int = 0

    def __post_init__(self):
        for p in self.predictions:
            if not 0.0 <= p.score <= 1.0:
                raise ValidationError("DetectionSet: scores must be in [0, 1]")
            if not all(math.isfinite(c) for c in p.center):
                raise ValidationError("DetectionSet: non-finite prediction center")


def _bev_dist(a, b):
    return math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1])


def ap_at_threshold(sets, class_id, threshold):
    """Average precision for one class at one BEV center-distance threshold.

    Predictions are ranked by descending score (ties by insertion order) and
    each greedily matches the nearest unmatched ground truth of the class in
    its scene within the threshold. AP is the trapezoidal area under the
    precision-recall curve after making precision non-increasing from the
    right. Returns None when the class has no ground truth.
    """
    preds = []
    n_gt = 0
    for si, ds in enumerate(sets):
        for pi, p in enumerate(ds.predictions):
            if p.class_id == class_id:
                preds.append((p.score, si, pi, p))
        n_gt += sum(1 for g in ds.ground_truth if g.class_id == class_id)
    if n_gt == 0:
        return None
    if not preds:
        return 0.0
    preds.sort(key=lambda t: (-t[0], t[1], t[2]))
    matched = [set() for _ in sets]
    tp = []
    for _, si, _, p in preds:
        gts = sets[si].ground_truth
        best = None
        best_d = None
        for gi, g in enumerate(gts):
            if g.class_id != class_id or gi in matched[si]:
                continue
            d = _bev_dist(p, g)
            if d <= threshold and (best is None or d < best_d):
                best, best_d = gi, d
        if best is not None:
            matched[si].add(best)
            tp.append(1)
        else:
            tp.append(0)
    # precision-recall points, then monotone precision from the right
    cum = 0
    precision = []
    recall = []
    for i, t in enumerate(tp):
        cum += t
        precision.append(cum / (i + 1))
        recall.append(cum / n_gt)
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    area = 0.0
    prev_r, prev_p = 0.0, precision[0]
    for r, p in zip(recall, precision):
        area += (r - prev_r) * (p + prev_p) / 2.0
        prev_r, prev_p = r, p
    return area


def per_class_ap(sets, class_ids, thresholds=THRESHOLDS):
    """{class_id: {threshold: AP}} for classes that have ground truth."""
    table = {}
    for c in class_ids:
        aps = {t: ap_at_threshold(sets, c, t) for t in thresholds}
        if any(v is not None for v in aps.values()):
            table[c] = aps
    return table


def map_score(sets, class_ids, thresholds=THRESHOLDS):
    """Mean over classes (with >= 1 gt) of the mean AP over thresholds."""
    table = per_class_ap(sets, class_ids, thresholds)
    if not table:
        raise ValidationError("map_score: no class has ground truth")
    class_means = [sum(aps.values()) / len(aps) for aps in table.values()]
    return sum(class_means) / len(class_means)


def render_report(sets, class_ids, thresholds=THRESHOLDS):
    """Plain-text metrics report.

    Line schema (space-separated, floats via repr):
        detection-metrics-report v1
        classes_evaluated <k>
        ap class=<c> threshold=<t> value=<ap>
        class_mean class=<c> value=<mean ap>
        mAP <value>
    """
    table = per_class_ap(sets, class_ids, thresholds)
    lines = ["detection-metrics-report v1", f"classes_evaluated {len(table)}"]
    for c in sorted(table):
        for t in thresholds:
            lines.append(f"ap class={c} threshold={t!r} value={table[c][t]!r}")
    for c in sorted(table):
        mean = sum(table[c].values()) / len(table[c])
        lines.append(f"class_mean class={c} value={mean!r}")
    lines.append(f"mAP {map_score(sets, class_ids, thresholds)!r}")
    return "\n".join(lines) + "\n"
