# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Semantics mirror attireguard._pykernels exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


cdef inline double _sigmoid(double x) nogil:
    cdef double z
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    z = exp(x)
    return z / (1.0 + z)


def decode_candidates(const double[:, :, :, ::1] data, const double[:, ::1] anchors, double conf_floor):
    """Scan every (cell_y, cell_x, anchor) slot in row-major order.

    Returns (slots, class_ids, scores, objectness, boxes, probs) for slots whose
    objectness * max class probability is >= conf_floor. Boxes are in grid units.
    """
    cdef Py_ssize_t s = data.shape[0]
    cdef Py_ssize_t nb = data.shape[2]
    cdef Py_ssize_t nc = data.shape[3] - 5
    cdef Py_ssize_t total = s * s * nb
    cdef Py_ssize_t cy, cx, a, k, best, n = 0
    cdef double obj, m, tot, score

    slots_np = np.empty((total, 3), dtype=np.int64)
    cls_np = np.empty(total, dtype=np.int64)
    score_np = np.empty(total, dtype=np.float64)
    obj_np = np.empty(total, dtype=np.float64)
    box_np = np.empty((total, 4), dtype=np.float64)
    prob_np = np.empty((total, nc), dtype=np.float64)
    cdef cnp.int64_t[:, ::1] slots = slots_np
    cdef cnp.int64_t[::1] cls = cls_np
    cdef double[::1] scores = score_np
    cdef double[::1] objs = obj_np
    cdef double[:, ::1] boxes = box_np
    cdef double[:, ::1] probs = prob_np

    with nogil:
        for cy in range(s):
            for cx in range(s):
                for a in range(nb):
                    obj = _sigmoid(data[cy, cx, a, 4])
                    best = 0
                    m = data[cy, cx, a, 5]
                    for k in range(1, nc):
                        if data[cy, cx, a, 5 + k] > m:
                            m = data[cy, cx, a, 5 + k]
                            best = k
                    tot = 0.0
                    for k in range(nc):
                        probs[n, k] = exp(data[cy, cx, a, 5 + k] - m)
                        tot = tot + probs[n, k]
                    for k in range(nc):
                        probs[n, k] = probs[n, k] / tot
                    score = obj * probs[n, best]
                    if score < conf_floor:
                        continue
                    slots[n, 0] = cy
                    slots[n, 1] = cx
                    slots[n, 2] = a
                    cls[n] = best
                    scores[n] = score
                    objs[n] = obj
                    boxes[n, 0] = _sigmoid(data[cy, cx, a, 0]) + cx
                    boxes[n, 1] = _sigmoid(data[cy, cx, a, 1]) + cy
                    boxes[n, 2] = anchors[a, 0] * exp(data[cy, cx, a, 2])
                    boxes[n, 3] = anchors[a, 1] * exp(data[cy, cx, a, 3])
                    n += 1

    return (slots_np[:n], cls_np[:n], score_np[:n], obj_np[:n], box_np[:n], prob_np[:n])


cdef inline double _iou(double ax, double ay, double aw, double ah,
                        double bx, double by, double bw, double bh) nogil:
    cdef double ax1 = ax - aw / 2.0, ay1 = ay - ah / 2.0, ax2 = ax + aw / 2.0, ay2 = ay + ah / 2.0
    cdef double bx1 = bx - bw / 2.0, by1 = by - bh / 2.0, bx2 = bx + bw / 2.0, by2 = by + bh / 2.0
    cdef double iw = (ax2 if ax2 < bx2 else bx2) - (ax1 if ax1 > bx1 else bx1)
    cdef double ih = (ay2 if ay2 < by2 else by2) - (ay1 if ay1 > by1 else by1)
    cdef double inter, r
    if iw <= 0 or ih <= 0:
        return 0.0
    if ax == bx and ay == by and aw == bw and ah == bh:
        return 1.0
    inter = iw * ih
    r = inter / (aw * ah + bw * bh - inter)
    return 1.0 if r > 1.0 else r


def greedy_nms(const double[:, ::1] boxes, const cnp.int64_t[::1] class_ids, double thresh):
    """Indices kept by greedy same-class suppression; input is in priority order."""
    cdef Py_ssize_t n = boxes.shape[0]
    cdef Py_ssize_t i, j, nk = 0
    cdef bint ok
    keep_np = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] keep = keep_np
    with nogil:
        for i in range(n):
            ok = True
            for j in range(nk):
                if class_ids[keep[j]] != class_ids[i]:
                    continue
                if _iou(boxes[i, 0], boxes[i, 1], boxes[i, 2], boxes[i, 3],
                        boxes[keep[j], 0], boxes[keep[j], 1], boxes[keep[j], 2], boxes[keep[j], 3]) > thresh:
                    ok = False
                    break
            if ok:
                keep[nk] = i
                nk += 1
    return keep_np[:nk]


cdef inline double _tri(double x, double l, double p, double r) nogil:
    if x == p:
        return 1.0
    if l < x < p:
        return (x - l) / (p - l)
    if p < x < r:
        return (r - x) / (r - p)
    return 0.0


def clipped_centroid(const double[::1] universe, const double[:, ::1] sets, const double[::1] strengths):
    """(sum x*mu, sum mu) of the max-aggregated, min-clipped output sets."""
    cdef Py_ssize_t n = universe.shape[0]
    cdef Py_ssize_t ns = sets.shape[0]
    cdef Py_ssize_t i, k
    cdef double mu, v, num = 0.0, den = 0.0
    with nogil:
        for i in range(n):
            mu = 0.0
            for k in range(ns):
                if strengths[k] <= 0:
                    continue
                v = _tri(universe[i], sets[k, 0], sets[k, 1], sets[k, 2])
                if v > strengths[k]:
                    v = strengths[k]
                if v > mu:
                    mu = v
            num += universe[i] * mu
            den += mu
    return num, den
