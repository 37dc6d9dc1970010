"""Anomaly engine: zone policy check, fuzzy adjustment, adaptive threshold,
m-of-n temporal persistence, environmental adaptation and alert emission.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .core import ATTIRE_VOCAB, BoundingBox, Detection, ZonePolicy
from .errors import InvariantViolation, NonMonotoneFrameId, ParseError, UnknownZone, VocabularyViolation
from .fuzzy import FuzzyRuleBase, adapt_parameters, adjust_confidence
from .pipeline import FrameResult

NEUTRAL_CONDITION = 0.5


def _unit(name, v):
    if not (isinstance(v, (int, float)) and 0.0 <= v <= 1.0):
        raise InvariantViolation(f"{name}={v!r} must lie in [0, 1]")


@dataclass(frozen=True)
class FrameContext:
    zone_id: str
    illumination: float = 0.5
    conditions: tuple = ()  # (name, value) pairs
    familiarity: float = 1.0

    def __post_init__(self):
        items = self.conditions.items() if isinstance(self.conditions, Mapping) else self.conditions
        object.__setattr__(self, "conditions", tuple(sorted((str(k), float(v)) for k, v in items)))
        _unit("illumination", self.illumination)
        _unit("familiarity", self.familiarity)
        for k, v in self.conditions:
            _unit(f"condition {k}", v)

    @property
    def env_factors(self) -> dict:
        return {"illumination": self.illumination, **dict(self.conditions)}


@dataclass(frozen=True)
class ContextFeatures:
    illumination: float
    condition_mean: float
    familiarity: float

    def as_tuple(self):
        return (self.illumination, self.condition_mean, self.familiarity)


def context_features(ctx: FrameContext) -> ContextFeatures:
    vals = [v for _, v in ctx.conditions]
    mean = math.fsum(vals) / len(vals) if vals else NEUTRAL_CONDITION
    return ContextFeatures(ctx.illumination, mean, ctx.familiarity)


@dataclass(frozen=True)
class Anomaly:
    detection: Detection
    zone_id: str
    original_conf: float
    adjusted_conf: float
    person_index: Optional[int] = None
    track_id: Optional[int] = None
    persistence: int = 0

    def __post_init__(self):
        _unit("original_conf", self.original_conf)
        _unit("adjusted_conf", self.adjusted_conf)


def policy_for(policies: Mapping[str, ZonePolicy], zone_id: str) -> ZonePolicy:
    try:
        return policies[zone_id]
    except KeyError:
        raise UnknownZone(f"no policy for zone {zone_id!r}") from None


def identify_anomalies(dets, policy, zone_id: Optional[str] = None) -> list[Anomaly]:
    """Detections whose class is not authorized in the zone.

    ``dets`` holds Detections or ``(person_index, Detection)`` pairs;
    ``policy`` is a ZonePolicy or a zone_id -> ZonePolicy mapping (then
    ``zone_id`` selects the entry).
    """
    if isinstance(policy, Mapping):
        policy = policy_for(policy, zone_id)
    out = []
    for item in dets:
        person, det = item if isinstance(item, tuple) else (None, item)
        if det.label not in ATTIRE_VOCAB:
            raise VocabularyViolation(f"{det.label} is not an attire class")
        if not policy.allows(det.label):
            out.append(Anomaly(det, policy.zone_id, det.score, det.score, person))
    return out


def fuzzy_adjust(a: Anomaly, f: ContextFeatures, rb: FuzzyRuleBase) -> float:
    return adjust_confidence(a.original_conf, f.illumination, rb)


@dataclass(frozen=True)
class ThresholdParams:
    base: float = 0.5
    alpha: float = 0.5
    beta: float = 0.2
    floor: float = 0.05
    ceiling: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.base < 1.0:
            raise InvariantViolation(f"threshold base {self.base} outside (0, 1)")
        if self.alpha < 0 or self.beta < 0:
            raise InvariantViolation("alpha and beta must be >= 0")
        if not 0.0 < self.floor < self.ceiling < 1.0:
            raise InvariantViolation(f"need 0 < floor < ceiling < 1, got {self.floor}, {self.ceiling}")


def adaptive_threshold(anoms: Sequence[Anomaly], f: ContextFeatures, tp: ThresholdParams) -> float:
    """``clamp(base + alpha*(mean_adjusted - base) + beta*(0.5 - illumination))``.

    With no anomalies the threshold is the (clamped) base.
    """
    if not anoms:
        t = tp.base
    else:
        mean = math.fsum(a.adjusted_conf for a in anoms) / len(anoms)
        t = tp.base + tp.alpha * (mean - tp.base) + tp.beta * (0.5 - f.illumination)
    return min(tp.ceiling, max(tp.floor, t))


# -- temporal persistence ------------------------------------------------------


@dataclass(frozen=True)
class TemporalParams:
    window: int = 5  # n
    required: int = 3  # m
    match_iou: float = 0.3

    def __post_init__(self):
        if not 1 <= self.required <= self.window:
            raise InvariantViolation(f"need 1 <= required <= window, got m={self.required} n={self.window}")
        _unit("match_iou", self.match_iou)


@dataclass(frozen=True)
class Track:
    track_id: int
    class_id: int
    bbox: BoundingBox
    hits: tuple  # frame ids where matched, within the window

    @property
    def last_hit(self) -> int:
        return self.hits[-1]


@dataclass(frozen=True)
class TrackState:
    tracks: tuple = ()
    next_id: int = 1
    last_frame: Optional[int] = None


def _iou_matrix(a: Sequence[BoundingBox], b: Sequence[BoundingBox]) -> np.ndarray:
    """Pairwise ``core.iou``, same arithmetic and edge cases, one array pass."""
    A = np.array([(x.cx, x.cy, x.w, x.h) for x in a], dtype=np.float64)
    B = np.array([(x.cx, x.cy, x.w, x.h) for x in b], dtype=np.float64)

    def corners(M):
        return M[:, 0] - M[:, 2] / 2, M[:, 1] - M[:, 3] / 2, M[:, 0] + M[:, 2] / 2, M[:, 1] + M[:, 3] / 2

    ax1, ay1, ax2, ay2 = (c[:, None] for c in corners(A))
    bx1, by1, bx2, by2 = (c[None, :] for c in corners(B))
    iw = np.minimum(ax2, bx2) - np.maximum(ax1, bx1)
    ih = np.minimum(ay2, by2) - np.maximum(ay1, by1)
    inter = iw * ih
    union = (A[:, 2] * A[:, 3])[:, None] + (B[:, 2] * B[:, 3])[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.minimum(1.0, inter / union)
    out[(iw <= 0) | (ih <= 0)] = 0.0
    out[np.all(A[:, None, :] == B[None, :, :], axis=2) & (iw > 0) & (ih > 0)] = 1.0
    return out


def temporal_integrate(anoms: Sequence[Anomaly], state: TrackState, params: TemporalParams, frame_id: int):
    """Match anomalies to tracks and keep the persistent ones.

    Pairs (anomaly, live track) of the same class with IOU >= match_iou are
    assigned greedily by descending IOU. Unmatched anomalies open new tracks.
    An anomaly is persistent when its track was matched in at least
    ``required`` of the frames ``(frame_id - window, frame_id]``. Tracks not
    matched for ``window`` frames are dropped.
    """
    if state.last_frame is not None and frame_id <= state.last_frame:
        raise NonMonotoneFrameId(f"frame {frame_id} after frame {state.last_frame}")
    n = params.window
    live = [t for t in state.tracks if frame_id - t.last_hit <= n]

    pairs = []
    if anoms and live:
        ov = _iou_matrix([a.detection.bbox for a in anoms], [t.bbox for t in live])
        same = np.array([a.detection.label.id for a in anoms])[:, None] == np.array([t.class_id for t in live])[None, :]
        for i, j in zip(*np.nonzero(same & (ov >= params.match_iou) & (ov > 0.0))):
            pairs.append((-float(ov[i, j]), int(i), live[j].track_id, int(j)))
    pairs.sort()
    assigned = {}
    used = set()
    for _, i, _, j in pairs:
        if i in assigned or j in used:
            continue
        assigned[i] = j
        used.add(j)

    tracks = list(live)
    next_id = state.next_id
    persistent = []
    horizon = frame_id - n
    for i, a in enumerate(anoms):
        if i in assigned:
            j = assigned[i]
            old = tracks[j]
            hits = tuple(h for h in old.hits if h > horizon) + (frame_id,)
            tracks[j] = Track(old.track_id, old.class_id, a.detection.bbox, hits)
        else:
            tracks.append(Track(next_id, a.detection.label.id, a.detection.bbox, (frame_id,)))
            j = len(tracks) - 1
            next_id += 1
        t = tracks[j]
        if len(t.hits) >= params.required:
            persistent.append(replace(a, track_id=t.track_id, persistence=len(t.hits)))
    return persistent, TrackState(tuple(tracks), next_id, frame_id)


# -- alerts --------------------------------------------------------------------


@dataclass(frozen=True)
class AlertRecord:
    frame_id: int
    zone_id: str
    class_name: str
    original_conf: float
    adjusted_conf: float
    threshold: float
    persistence: int

    def __post_init__(self):
        if not self.adjusted_conf > self.threshold:
            raise InvariantViolation("alert requires adjusted_conf > threshold")

    def to_json(self, timestamp: str) -> str:
        rec = {
            "timestamp": timestamp,
            "frame_id": self.frame_id,
            "zone_id": self.zone_id,
            "class_name": self.class_name,
            "original_conf": self.original_conf,
            "adjusted_conf": self.adjusted_conf,
            "threshold": self.threshold,
            "persistence": self.persistence,
        }
        return json.dumps(rec, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "AlertRecord":
        rec = json.loads(line)
        rec.pop("timestamp", None)
        return cls(**rec)


def raise_alerts(persistent: Sequence[Anomaly], threshold: float, frame_id: int) -> list[AlertRecord]:
    hits = [a for a in persistent if a.adjusted_conf > threshold]
    hits.sort(key=lambda a: (-a.adjusted_conf, a.detection.label.id))
    return [
        AlertRecord(frame_id, a.zone_id, a.detection.label.name, a.original_conf, a.adjusted_conf, threshold, a.persistence)
        for a in hits
    ]


class AlertLog:
    """Line-delimited JSON alert sink, flushed after every frame.

    Timestamps are derived from the frame id (``start + frame_id / fps``) so
    identical inputs give byte-identical logs.
    """

    def __init__(self, path: Union[str, Path], start: str = "1970-01-01T00:00:00+00:00", fps: float = 25.0):
        self.path = Path(path)
        self.start = datetime.fromisoformat(start)
        self.fps = fps
        self._fh = open(self.path, "w")

    def timestamp(self, frame_id: int) -> str:
        return (self.start + timedelta(seconds=frame_id / self.fps)).isoformat(timespec="milliseconds")

    def write(self, alerts: Sequence[AlertRecord]):
        for a in alerts:
            self._fh.write(a.to_json(self.timestamp(a.frame_id)) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_alert_log(path) -> list[AlertRecord]:
    return [AlertRecord.from_json(line) for line in Path(path).read_text().splitlines() if line.strip()]


# -- zone policy files -----------------------------------------------------------


def parse_policies(lines, source="<policies>") -> dict[str, ZonePolicy]:
    """``zone_id: class,class,...`` per line; an empty list authorizes nothing."""
    out = {}
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if ":" not in text:
            raise ParseError("expected 'zone_id: class,class,...'", source=source, line=lineno)
        zone, _, rest = text.partition(":")
        zone = zone.strip()
        if not zone:
            raise ParseError("empty zone id", source=source, line=lineno)
        if zone in out:
            raise ParseError(f"zone {zone!r} defined twice", source=source, line=lineno)
        names = [n.strip() for n in rest.split(",") if n.strip()]
        try:
            out[zone] = ZonePolicy.from_names(zone, names)
        except VocabularyViolation as exc:
            raise ParseError(str(exc), source=source, line=lineno) from None
    return out


def read_policies(path) -> dict[str, ZonePolicy]:
    with open(path) as fh:
        return parse_policies(fh, source=path)


def format_policies(policies: Mapping[str, ZonePolicy]) -> str:
    lines = []
    for zone in sorted(policies):
        names = ",".join(l.name for l in sorted(policies[zone].authorized))
        lines.append(f"{zone}: {names}")
    return "\n".join(lines) + "\n"


# -- engine ----------------------------------------------------------------------


@dataclass
class FrameOutcome:
    frame_id: int
    anomalies: list
    threshold: float
    persistent: list
    alerts: list
    features: ContextFeatures
    adaptation_rejected: bool = False


@dataclass
class AnomalyEngine:
    """Stateful per-stream driver of the anomaly stages.

    Single writer: frames must be fed in increasing frame_id order.
    """

    policies: Mapping[str, ZonePolicy]
    rule_base: FuzzyRuleBase = field(default_factory=FuzzyRuleBase)
    threshold: ThresholdParams = field(default_factory=ThresholdParams)
    temporal: TemporalParams = field(default_factory=TemporalParams)
    adaptation_rate: float = 0.05
    ema_smoothing: float = 0.1
    state: TrackState = field(default_factory=TrackState)
    illumination_ema: Optional[float] = None

    def process(self, result: FrameResult, ctx: FrameContext) -> FrameOutcome:
        fid = result.frame.frame_id
        zone = ctx.zone_id or result.frame.zone_id
        anomalies = identify_anomalies(result.attire, self.policies, zone)
        feats = context_features(ctx)
        adjusted = [replace(a, adjusted_conf=fuzzy_adjust(a, feats, self.rule_base)) for a in anomalies]
        t = adaptive_threshold(adjusted, feats, self.threshold)
        persistent, self.state = temporal_integrate(adjusted, self.state, self.temporal, fid)
        alerts = raise_alerts(persistent, t, fid)
        rejected = self._adapt(ctx.illumination)
        return FrameOutcome(fid, adjusted, t, persistent, alerts, feats, rejected)

    def _adapt(self, illumination: float) -> bool:
        if self.illumination_ema is None:
            self.illumination_ema = illumination
        else:
            self.illumination_ema += self.ema_smoothing * (illumination - self.illumination_ema)
        try:
            self.rule_base = adapt_parameters(self.illumination_ema, self.rule_base, self.adaptation_rate)
        except InvariantViolation:
            return True
        return False
