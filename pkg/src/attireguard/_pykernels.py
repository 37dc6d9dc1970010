"""Pure numpy fallback for the compiled kernels in ``_ckernels.pyx``.

Same signatures and same results (up to floating-point summation order).
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    z = np.exp(x[~pos])
    out[~pos] = z / (1.0 + z)
    return out


def decode_candidates(data, anchors, conf_floor):
    s, _, nb, ch = data.shape
    nc = ch - 5
    flat = data.reshape(-1, ch)
    obj = _sigmoid(flat[:, 4])
    logits = flat[:, 5:]
    best = np.argmax(logits, axis=1)
    e = np.exp(logits - logits[np.arange(len(best)), best][:, None])
    probs = e / e.sum(axis=1, keepdims=True)
    scores = obj * probs[np.arange(len(best)), best]
    keep = np.flatnonzero(scores >= conf_floor)

    cy, cx, a = np.unravel_index(keep, (s, s, nb))
    slots = np.stack([cy, cx, a], axis=1).astype(np.int64)
    kept = flat[keep]
    boxes = np.empty((len(keep), 4))
    boxes[:, 0] = _sigmoid(kept[:, 0]) + cx
    boxes[:, 1] = _sigmoid(kept[:, 1]) + cy
    boxes[:, 2] = anchors[a, 0] * np.exp(kept[:, 2])
    boxes[:, 3] = anchors[a, 1] * np.exp(kept[:, 3])
    return (slots, best[keep].astype(np.int64), scores[keep], obj[keep], boxes, probs[keep].reshape(-1, nc))


def _iou_one_to_many(box, others):
    ax1, ay1 = box[0] - box[2] / 2.0, box[1] - box[3] / 2.0
    ax2, ay2 = box[0] + box[2] / 2.0, box[1] + box[3] / 2.0
    bx1, by1 = others[:, 0] - others[:, 2] / 2.0, others[:, 1] - others[:, 3] / 2.0
    bx2, by2 = others[:, 0] + others[:, 2] / 2.0, others[:, 1] + others[:, 3] / 2.0
    iw = np.minimum(ax2, bx2) - np.maximum(ax1, bx1)
    ih = np.minimum(ay2, by2) - np.maximum(ay1, by1)
    inter = iw * ih
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.minimum(1.0, inter / (box[2] * box[3] + others[:, 2] * others[:, 3] - inter))
    r = np.where((iw <= 0) | (ih <= 0), 0.0, r)
    return np.where(np.all(others == box, axis=1), 1.0, r)


def greedy_nms(boxes, class_ids, thresh):
    # each kept box suppresses later same-class boxes; IOU is symmetric, so
    # this keeps exactly the boxes that no earlier kept box overlaps
    class_ids = np.asarray(class_ids)
    later = np.arange(len(boxes))
    suppressed = np.zeros(len(boxes), dtype=bool)
    keep = []
    for i in range(len(boxes)):
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= (_iou_one_to_many(boxes[i], boxes) > thresh) & (class_ids == class_ids[i]) & (later > i)
    return np.asarray(keep, dtype=np.int64)


def _tri(x, left, peak, right):
    out = np.zeros_like(x)
    rising = (x > left) & (x < peak)
    falling = (x > peak) & (x < right)
    out[rising] = (x[rising] - left) / (peak - left)
    out[falling] = (right - x[falling]) / (right - peak)
    out[x == peak] = 1.0
    return out


def clipped_centroid(universe, sets, strengths):
    mu = np.zeros_like(universe)
    for (left, peak, right), s in zip(sets, strengths):
        if s <= 0:
            continue
        mu = np.maximum(mu, np.minimum(_tri(universe, left, peak, right), s))
    return float(universe @ mu), float(mu.sum())
