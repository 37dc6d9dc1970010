"""Composite YOLO loss, its analytic gradient, SGD with momentum, and a toy head.

Loss terms (per slot, grid units):

* coordinates (responsible slots): squared error on ``(bx, by, sqrt(bw), sqrt(bh))``
* objectness (all slots): binary cross-entropy of ``sigmoid(t_obj)`` against 1/0
* class (responsible slots): categorical cross-entropy of ``softmax(logits)``
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import BoundingBox
from .decode import Anchor, GridSpec, RawGridTensor, encode_cell, sigmoid
from .errors import DivergenceDetected, InvariantViolation, LengthMismatch, ShapeMismatch


@dataclass(frozen=True)
class LossWeights:
    lambda_coord: float = 1.0
    lambda_obj: float = 1.0
    lambda_class: float = 1.0

    def __post_init__(self):
        for name in ("lambda_coord", "lambda_obj", "lambda_class"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise InvariantViolation(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005

    def __post_init__(self):
        # lr == 0 is allowed: it is the no-op optimizer used as a control.
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise InvariantViolation(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise InvariantViolation(f"momentum must be in [0, 1), got {self.momentum}")
        if not self.weight_decay >= 0:
            raise InvariantViolation(f"weight_decay must be >= 0, got {self.weight_decay}")


class TargetAssignment:
    """Per-slot training targets.

    ``mask[cy, cx, a]`` marks responsible slots; for those, ``boxes`` holds the
    target ``(bx, by, bw, bh)`` in grid units and ``classes`` the class id.
    """

    def __init__(self, spec: GridSpec, mask, boxes, classes):
        self.spec = spec
        self.mask = np.asarray(mask, dtype=bool)
        self.boxes = np.asarray(boxes, dtype=np.float64)
        self.classes = np.asarray(classes, dtype=np.int64)
        s, b = spec.s, spec.num_anchors
        if self.mask.shape != (s, s, b) or self.boxes.shape != (s, s, b, 4) or self.classes.shape != (s, s, b):
            raise ShapeMismatch("target arrays do not match the grid spec")
        cy, cx, _ = np.nonzero(self.mask)
        tb = self.boxes[self.mask]
        if np.any(tb[:, 0] < cx) or np.any(tb[:, 0] >= cx + 1) or np.any(tb[:, 1] < cy) or np.any(tb[:, 1] >= cy + 1):
            raise InvariantViolation("target box center outside its responsible cell")
        if np.any(tb[:, 2:] <= 0):
            raise InvariantViolation("target boxes must have positive size")
        if np.any(self.classes[self.mask] < 0) or np.any(self.classes[self.mask] >= spec.num_classes):
            raise InvariantViolation("target class id out of range")

    @classmethod
    def empty(cls, spec: GridSpec) -> "TargetAssignment":
        s, b = spec.s, spec.num_anchors
        return cls(spec, np.zeros((s, s, b), bool), np.ones((s, s, b, 4)), np.zeros((s, s, b), np.int64))

    @property
    def count(self) -> int:
        return int(self.mask.sum())


def _shape_iou(w1, h1, w2, h2):
    inter = min(w1, w2) * min(h1, h2)
    return inter / (w1 * h1 + w2 * h2 - inter)


def assign_targets(spec: GridSpec, anchors: Sequence[Anchor], objects) -> TargetAssignment:
    """Build targets from ``(BoundingBox in grid units, class_id)`` pairs.

    The responsible cell is the one containing the center; among its anchors
    the best shape match (centered IOU) takes the object.
    """
    s, b = spec.s, spec.num_anchors
    mask = np.zeros((s, s, b), bool)
    boxes = np.ones((s, s, b, 4))
    classes = np.zeros((s, s, b), np.int64)
    for box, class_id in objects:
        cx, cy = int(math.floor(box.cx)), int(math.floor(box.cy))
        if not (0 <= cx < s and 0 <= cy < s):
            raise InvariantViolation(f"object center ({box.cx}, {box.cy}) outside the grid")
        a = max(range(b), key=lambda k: _shape_iou(box.w, box.h, anchors[k].pw, anchors[k].ph))
        if mask[cy, cx, a]:
            raise InvariantViolation(f"slot ({cx}, {cy}, {a}) already assigned")
        mask[cy, cx, a] = True
        boxes[cy, cx, a] = (box.cx, box.cy, box.w, box.h)
        classes[cy, cx, a] = class_id
    return TargetAssignment(spec, mask, boxes, classes)


def _check(tensor: RawGridTensor, targets: TargetAssignment):
    if targets.spec.shape != tensor.spec.shape or tensor.data.shape != tensor.spec.shape:
        raise ShapeMismatch(f"targets for {targets.spec.shape} vs tensor {tensor.data.shape}")


def _forward(data, anchors, targets: TargetAssignment):
    """Shared forward pass; returns per-term per-slot arrays and intermediates."""
    s = data.shape[-4]
    cy, cx = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
    sx = sigmoid(data[..., 0])
    sy = sigmoid(data[..., 1])
    root_w = np.sqrt(anchors[:, 0]) * np.exp(data[..., 2] / 2.0)
    root_h = np.sqrt(anchors[:, 1]) * np.exp(data[..., 3] / 2.0)

    tb = targets.boxes
    m = targets.mask
    dx = sx + cx[..., None] - tb[..., 0]
    dy = sy + cy[..., None] - tb[..., 1]
    dw = root_w - np.sqrt(tb[..., 2])
    dh = root_h - np.sqrt(tb[..., 3])
    coord = np.where(m, dx * dx + dy * dy + dw * dw + dh * dh, 0.0)

    t = data[..., 4]
    obj = np.logaddexp(0.0, t) - np.where(m, t, 0.0)

    logits = data[..., 5:]
    mx = logits.max(axis=-1, keepdims=True)
    lse = mx[..., 0] + np.log(np.exp(logits - mx).sum(axis=-1))
    idx = np.broadcast_to(targets.classes[..., None], logits.shape[:-1] + (1,))
    picked = np.take_along_axis(logits, idx, axis=-1)[..., 0]
    cls = np.where(m, lse - picked, 0.0)
    return coord, obj, cls, (sx, sy, root_w, root_h, dx, dy, dw, dh, lse)


def loss_terms(tensor: RawGridTensor, targets: TargetAssignment) -> tuple[float, float, float]:
    """Unweighted ``(coord, obj, class)`` sums."""
    _check(tensor, targets)
    coord, obj, cls, _ = _forward(tensor.data, tensor.anchor_array(), targets)
    return float(coord.sum()), float(obj.sum()), float(cls.sum())


def yolo_loss(tensor: RawGridTensor, targets: TargetAssignment, w: LossWeights = LossWeights()) -> float:
    c, o, k = loss_terms(tensor, targets)
    return w.lambda_coord * c + w.lambda_obj * o + w.lambda_class * k


def yolo_loss_grad(tensor: RawGridTensor, targets: TargetAssignment, w: LossWeights = LossWeights()) -> np.ndarray:
    """d loss / d raw, same shape as ``tensor.data``."""
    _check(tensor, targets)
    data = tensor.data
    _, _, _, (sx, sy, root_w, root_h, dx, dy, dw, dh, lse) = _forward(data, tensor.anchor_array(), targets)
    m = targets.mask
    g = np.zeros_like(data)

    lc = w.lambda_coord
    g[..., 0] = np.where(m, lc * 2.0 * dx * sx * (1.0 - sx), 0.0)
    g[..., 1] = np.where(m, lc * 2.0 * dy * sy * (1.0 - sy), 0.0)
    # d sqrt(bw) / d tw = sqrt(bw) / 2
    g[..., 2] = np.where(m, lc * dw * root_w, 0.0)
    g[..., 3] = np.where(m, lc * dh * root_h, 0.0)

    g[..., 4] = w.lambda_obj * (sigmoid(data[..., 4]) - m)

    probs = np.exp(data[..., 5:] - lse[..., None])
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, targets.classes[..., None], 1.0, axis=-1)
    g[..., 5:] = np.where(m[..., None], w.lambda_class * (probs - onehot), 0.0)
    return g


def finite_diff_check(
    tensor: RawGridTensor,
    targets: TargetAssignment,
    w: LossWeights = LossWeights(),
    step: float = 1e-5,
    grad_fn: Optional[Callable] = None,
) -> float:
    """Max over channels of ``|analytic - central difference| / max(1, |numeric|)``."""
    grad_fn = grad_fn or yolo_loss_grad
    _check(tensor, targets)
    analytic = grad_fn(tensor, targets, w).reshape(-1)
    anchors = tensor.anchor_array()
    n = tensor.data.size
    numeric = np.empty(n)
    # perturb a chunk of channels at once; each batch entry moves one channel
    chunk = 256
    for start in range(0, n, chunk):
        idx = np.arange(start, min(n, start + chunk))
        batch = np.repeat(tensor.data.reshape(1, -1), 2 * len(idx), axis=0)
        batch[np.arange(len(idx)), idx] += step
        batch[len(idx) + np.arange(len(idx)), idx] -= step
        coord, obj, cls, _ = _forward(batch.reshape((-1,) + tensor.data.shape), anchors, targets)
        axes = (1, 2, 3)
        vals = w.lambda_coord * coord.sum(axis=axes) + w.lambda_obj * obj.sum(axis=axes) + w.lambda_class * cls.sum(axis=axes)
        numeric[idx] = (vals[: len(idx)] - vals[len(idx) :]) / (2.0 * step)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))


def sgd_step(params, grads, velocity, cfg: SgdConfig):
    """One momentum step with L2 weight decay coupled into the gradient.

    ``v' = momentum * v - lr * (g + weight_decay * p)``, ``p' = p + v'``.
    """
    p = np.asarray(params, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    v = np.asarray(velocity, dtype=np.float64)
    if not (p.shape == g.shape == v.shape):
        raise LengthMismatch(f"params {p.shape}, grads {g.shape}, velocity {v.shape}")
    v_new = cfg.momentum * v - cfg.learning_rate * (g + cfg.weight_decay * p)
    return p + v_new, v_new


# -- toy trainable head ------------------------------------------------------


@dataclass
class ToyFixture:
    spec: GridSpec
    anchors: tuple[Anchor, ...]
    features: np.ndarray  # (S, S, F)
    targets: TargetAssignment


def make_separable_fixture(seed: int = 0, s: int = 3, num_anchors: int = 2, num_classes: int = 5, n_objects: int = 4) -> ToyFixture:
    """Synthetic head-training problem with an exact linear solution.

    Per-cell features are orthonormal, so any per-cell raw output (in
    particular the exact encoding of every target box) is reachable by a
    linear map.
    """
    rng = np.random.default_rng(seed)
    spec = GridSpec(s, num_anchors, num_classes, 32 * s, 32 * s)
    anchors = tuple(Anchor(1.0 + k, 1.0 + k) for k in range(num_anchors))
    n_feat = s * s + 3
    q, _ = np.linalg.qr(rng.normal(size=(n_feat, s * s)))
    features = q.T.reshape(s, s, n_feat)

    cells = rng.choice(s * s, size=min(n_objects, s * s), replace=False)
    objects = []
    for c in cells:
        cy, cx = divmod(int(c), s)
        box = BoundingBox(
            cx + rng.uniform(0.2, 0.8),
            cy + rng.uniform(0.2, 0.8),
            rng.uniform(0.6, 2.8),
            rng.uniform(0.6, 2.8),
        )
        objects.append((box, int(rng.integers(num_classes))))
    return ToyFixture(spec, anchors, features, assign_targets(spec, anchors, objects))


def head_forward(features: np.ndarray, weights: np.ndarray, spec: GridSpec) -> np.ndarray:
    return (features.reshape(-1, features.shape[-1]) @ weights).reshape(spec.shape)


def train_toy_head(
    fixture: ToyFixture,
    cfg: SgdConfig = SgdConfig(),
    epochs: int = 500,
    seed: int = 0,
    w: LossWeights = LossWeights(),
):
    """Train a linear features->raw-channels head with :func:`sgd_step`.

    Returns ``(weights, curve)`` where ``curve[e]`` is the loss after ``e``
    updates (``curve[0]`` is the initial loss, ``len(curve) == epochs + 1``).
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    spec = fixture.spec
    feats = fixture.features
    flat_feats = feats.reshape(-1, feats.shape[-1])
    rng = np.random.default_rng(seed)
    weights = rng.normal(0.0, 0.01, size=(feats.shape[-1], spec.num_anchors * spec.channels))
    velocity = np.zeros_like(weights)

    curve = []
    for _ in range(epochs + 1):
        raw = head_forward(feats, weights, spec)
        if not np.all(np.isfinite(raw)):
            raise DivergenceDetected(f"head output became non-finite after {len(curve)} updates")
        with np.errstate(over="ignore"):
            loss = yolo_loss(RawGridTensor(spec, fixture.anchors, raw), fixture.targets, w)
        if not math.isfinite(loss):
            raise DivergenceDetected(f"loss became {loss} after {len(curve)} updates")
        curve.append(loss)
        if len(curve) > epochs:
            break
        g_raw = yolo_loss_grad(RawGridTensor(spec, fixture.anchors, raw), fixture.targets, w).reshape(flat_feats.shape[0], -1)
        weights, velocity = sgd_step(weights, flat_feats.T @ g_raw, velocity, cfg)
    return weights, curve


def write_loss_curve(path, curve: Sequence[float]):
    """One ``epoch,loss`` line per entry (epoch 0 = before any update)."""
    with open(path, "w") as fh:
        for epoch, loss in enumerate(curve):
            fh.write(f"{epoch},{loss!r}\n")


def read_loss_curve(path) -> list[float]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(float(line.split(",")[1]))
    return out


def perfect_fit_tensor(spec: GridSpec, anchors: Sequence[Anchor], targets: TargetAssignment, objectness: float = 0.999, class_peak: float = 0.99999) -> RawGridTensor:
    """Raw outputs that encode every target exactly (objectness capped below 1)."""
    tensor = RawGridTensor.zeros(spec, anchors)
    tensor.data[..., 4] = -math.log(objectness / (1 - objectness))
    rest = (1.0 - class_peak) / max(1, spec.num_classes - 1)
    for cy, cx, a in zip(*np.nonzero(targets.mask)):
        bx, by, bw, bh = targets.boxes[cy, cx, a]
        probs = np.full(spec.num_classes, rest)
        probs[targets.classes[cy, cx, a]] = class_peak
        probs /= probs.sum()
        raw = encode_cell(BoundingBox(bx, by, bw, bh), objectness, probs, spec, anchors[a], int(cx), int(cy))
        tensor.set_cell(int(cx), int(cy), int(a), raw)
    return tensor
