"""Detection and alerting metrics.

Predictions and ground truth are grouped per frame: either a mapping
``frame_key -> [Detection, ...]`` or a flat list (treated as one frame).
Matching is greedy in descending score order at a fixed IOU threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import Detection, iou
from .errors import KTooLarge, NoGroundTruth

DEFAULT_IOU = 0.5


def _frames(x) -> Mapping:
    return x if isinstance(x, Mapping) else {0: list(x)}


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0


@dataclass
class MatchResult:
    counts: dict = field(default_factory=dict)  # class name -> ClassCounts
    matches: list = field(default_factory=list)  # per prediction (input order): gt index or None

    def totals(self) -> ClassCounts:
        c = ClassCounts()
        for v in self.counts.values():
            c.tp += v.tp
            c.fp += v.fp
            c.fn += v.fn
        return c


def _score_order(preds: Sequence[Detection]) -> list[int]:
    return sorted(range(len(preds)), key=lambda i: -preds[i].score)


def match_detections(preds: Sequence[Detection], gts: Sequence[Detection], iou_thresh: float = DEFAULT_IOU) -> MatchResult:
    """Greedy matching within one frame.

    In descending score order each prediction takes the unmatched same-class
    ground truth with the highest IOU, provided IOU >= ``iou_thresh``.
    """
    res = MatchResult(matches=[None] * len(preds))
    taken = [False] * len(gts)
    for name in {d.label.name for d in list(preds) + list(gts)}:
        res.counts[name] = ClassCounts()
    for i in _score_order(preds):
        p = preds[i]
        best, best_iou = None, -1.0
        for j, g in enumerate(gts):
            if taken[j] or g.label.name != p.label.name:
                continue
            ov = iou(p.bbox, g.bbox)
            if ov >= iou_thresh and ov > best_iou:
                best, best_iou = j, ov
        if best is None:
            res.counts[p.label.name].fp += 1
        else:
            taken[best] = True
            res.matches[i] = best
            res.counts[p.label.name].tp += 1
    for j, g in enumerate(gts):
        if not taken[j]:
            res.counts[g.label.name].fn += 1
    return res


def match_dataset(preds, gts, iou_thresh: float = DEFAULT_IOU) -> dict:
    """Per-frame matches for grouped predictions; returns ``frame -> MatchResult``."""
    P, G = _frames(preds), _frames(gts)
    return {k: match_detections(P.get(k, []), G.get(k, []), iou_thresh) for k in sorted(set(P) | set(G), key=str)}


def precision_recall_f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """0/0 is taken as 0 for every ratio."""
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def average_precision(preds, gts, class_name: str, iou_thresh: float = DEFAULT_IOU) -> float:
    """All-points interpolated AP for one class across all frames."""
    P, G = _frames(preds), _frames(gts)
    n_gt = sum(1 for k in G for g in G[k] if g.label.name == class_name)
    scored = []  # (score, is_tp)
    for k in sorted(set(P) | set(G), key=str):
        p_k = [d for d in P.get(k, []) if d.label.name == class_name]
        g_k = [d for d in G.get(k, []) if d.label.name == class_name]
        m = match_detections(p_k, g_k, iou_thresh)
        scored.extend((p.score, m.matches[i] is not None) for i, p in enumerate(p_k))
    if n_gt == 0:
        if not scored:
            raise NoGroundTruth(f"class {class_name!r} has neither predictions nor ground truth")
        return 0.0
    if not scored:
        return 0.0
    scored.sort(key=lambda x: -x[0])
    hits = np.array([t for _, t in scored], dtype=np.float64)
    tp = np.cumsum(hits)
    fp = np.cumsum(1.0 - hits)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * envelope))


def mean_average_precision(preds, gts, iou_thresh: float = DEFAULT_IOU, classes: Optional[Iterable[str]] = None) -> tuple[float, dict]:
    """Unweighted mean AP over classes with at least one ground truth."""
    G = _frames(gts)
    with_gt = {g.label.name for k in G for g in G[k]}
    names = sorted(with_gt if classes is None else set(classes) & with_gt)
    aps = {c: average_precision(preds, gts, c, iou_thresh) for c in names}
    return (math.fsum(aps.values()) / len(aps) if aps else 0.0), aps


def false_alarm_rate(alerts, gt_anomaly_frames: Iterable[int]) -> float:
    """Fraction of alerting frames that contain no ground-truth anomaly."""
    alert_frames = {a.frame_id if hasattr(a, "frame_id") else int(a) for a in alerts}
    if not alert_frames:
        return 0.0
    spurious = alert_frames - set(gt_anomaly_frames)
    return len(spurious) / len(alert_frames)


def train_test_split(n: int, test_fraction: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(math.floor(n * test_fraction + 0.5))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def kfold_split(n: int, k: int, seed: int = 0) -> list[np.ndarray]:
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > n:
        raise KTooLarge(f"cannot split {n} items into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


# -- report --------------------------------------------------------------------


@dataclass
class EvalReport:
    per_class: dict  # name -> dict(precision, recall, f1, ap, tp, fp, fn)
    precision: float
    recall: float
    f1: float
    mAP: float
    false_alarm_rate: Optional[float] = None

    def table(self, label: str = "Detector") -> str:
        headers = ["Methodology", "Precision", "Recall", "F1 Score", "False Alarm Rate", "mAP"]
        far = "-" if self.false_alarm_rate is None else f"{self.false_alarm_rate:.2f}"
        rows = [[label, f"{self.precision:.2f}", f"{self.recall:.2f}", f"{self.f1:.2f}", far, f"{self.mAP:.2f}"]]
        for name in sorted(self.per_class):
            c = self.per_class[name]
            ap = "-" if c["ap"] is None else f"{c['ap']:.2f}"
            rows.append([f"  {name}", f"{c['precision']:.2f}", f"{c['recall']:.2f}", f"{c['f1']:.2f}", "-", ap])
        widths = [max(len(r[i]) for r in [headers] + rows) for i in range(len(headers))]
        fmt = lambda r: " | ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(r, widths)))
        sep = "-+-".join("-" * w for w in widths)
        return "\n".join([fmt(headers), sep] + [fmt(r) for r in rows]) + "\n"

    def json_lines(self) -> str:
        lines = [
            json.dumps(
                {
                    "scope": "aggregate",
                    "precision": self.precision,
                    "recall": self.recall,
                    "f1": self.f1,
                    "mAP": self.mAP,
                    "false_alarm_rate": self.false_alarm_rate,
                },
                separators=(",", ":"),
            )
        ]
        for name in sorted(self.per_class):
            lines.append(json.dumps({"scope": "class", "class_name": name, **self.per_class[name]}, separators=(",", ":")))
        return "\n".join(lines) + "\n"


def evaluate(preds, gts, iou_thresh: float = DEFAULT_IOU, alerts=None, gt_anomaly_frames=None) -> EvalReport:
    per_frame = match_dataset(preds, gts, iou_thresh)
    counts: dict = {}
    for m in per_frame.values():
        for name, c in m.counts.items():
            acc = counts.setdefault(name, ClassCounts())
            acc.tp += c.tp
            acc.fp += c.fp
            acc.fn += c.fn
    mAP, aps = mean_average_precision(preds, gts, iou_thresh)
    per_class = {}
    tot = ClassCounts()
    for name, c in counts.items():
        p, r, f = precision_recall_f1(c.tp, c.fp, c.fn)
        per_class[name] = {"precision": p, "recall": r, "f1": f, "ap": aps.get(name), "tp": c.tp, "fp": c.fp, "fn": c.fn}
        tot.tp += c.tp
        tot.fp += c.fp
        tot.fn += c.fn
    p, r, f = precision_recall_f1(tot.tp, tot.fp, tot.fn)
    far = None
    if alerts is not None and gt_anomaly_frames is not None:
        far = false_alarm_rate(alerts, gt_anomaly_frames)
    return EvalReport(per_class, p, r, f, mAP, far)
