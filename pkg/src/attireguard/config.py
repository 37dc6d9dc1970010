"""Engine configuration: a JSON document of named sections.

Every key is optional; missing keys take the defaults below, unknown keys
are rejected. ``emit_defaults()`` writes the full default document.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union, get_type_hints

from .core import ZonePolicy
from .engine import TemporalParams, ThresholdParams
from .errors import InvariantViolation, ParseError, VocabularyViolation
from .fuzzy import FuzzyRuleBase
from .pipeline import DecodeParams


@dataclass(frozen=True)
class AdaptationConfig:
    rate: float = 0.05
    ema_smoothing: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise InvariantViolation(f"rate {self.rate} outside [0, 1]")
        if not 0.0 < self.ema_smoothing <= 1.0:
            raise InvariantViolation(f"ema_smoothing {self.ema_smoothing} outside (0, 1]")


@dataclass(frozen=True)
class PathsConfig:
    tensors: Optional[str] = None
    frames: Optional[str] = None
    annotations: Optional[str] = None
    policy: Optional[str] = None
    out: str = "out"


@dataclass(frozen=True)
class StreamConfig:
    start: str = "1970-01-01T00:00:00+00:00"
    fps: float = 25.0
    annotate: bool = True

    def __post_init__(self):
        from datetime import datetime

        try:
            datetime.fromisoformat(self.start)
        except ValueError:
            raise InvariantViolation(f"start {self.start!r} is not an ISO-8601 timestamp") from None
        if not self.fps > 0:
            raise InvariantViolation("fps must be positive")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 500
    grid: int = 3
    anchors: int = 2
    classes: int = 5
    objects: int = 4
    lambda_coord: float = 1.0
    lambda_obj: float = 1.0
    lambda_class: float = 1.0

    def __post_init__(self):
        if self.epochs < 1:
            raise InvariantViolation("epochs must be >= 1")
        if min(self.grid, self.anchors, self.classes) < 1 or self.objects < 0:
            raise InvariantViolation("grid, anchors, classes must be >= 1 and objects >= 0")


@dataclass(frozen=True)
class EvalConfig:
    iou_thresh: float = 0.5


@dataclass(frozen=True)
class EngineConfig:
    seed: int = 0
    decode: DecodeParams = field(default_factory=DecodeParams)
    policies: tuple = ()  # (zone_id, (class names...)) pairs, sorted by zone
    fuzzy: FuzzyRuleBase = field(default_factory=FuzzyRuleBase)
    threshold: ThresholdParams = field(default_factory=ThresholdParams)
    temporal: TemporalParams = field(default_factory=TemporalParams)
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def zone_policies(self) -> dict:
        return {zone: ZonePolicy.from_names(zone, names) for zone, names in self.policies}


_SECTIONS = {
    "decode": DecodeParams,
    "threshold": ThresholdParams,
    "temporal": TemporalParams,
    "adaptation": AdaptationConfig,
    "paths": PathsConfig,
    "stream": StreamConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


def _coerce(value, typ, where):
    origin = getattr(typ, "__origin__", None)
    if origin is Union:  # Optional[X]
        if value is None:
            return None
        typ = next(t for t in typ.__args__ if t is not type(None))
    if typ is bool:
        if not isinstance(value, bool):
            raise ParseError(f"expected true/false, got {value!r}", field=where)
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ParseError(f"expected an integer, got {value!r}", field=where)
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(f"expected a number, got {value!r}", field=where)
        return float(value)
    if typ is str:
        if not isinstance(value, str):
            raise ParseError(f"expected a string, got {value!r}", field=where)
        return value
    raise TypeError(f"unsupported config type {typ}")


def _section(cls, data, where):
    if not isinstance(data, dict):
        raise ParseError("expected an object", field=where)
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ParseError(f"unknown key (allowed: {', '.join(sorted(names))})", field=f"{where}.{key}")
    kwargs = {k: _coerce(v, hints[k], f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except InvariantViolation as exc:
        raise InvariantViolation(f"{where}: {exc}") from None


def _fuzzy(data, where="fuzzy") -> FuzzyRuleBase:
    if not isinstance(data, dict):
        raise ParseError("expected an object", field=where)
    allowed = {"illumination", "confidence", "outputs", "rules", "universe"}
    for key in data:
        if key not in allowed:
            raise ParseError(f"unknown key (allowed: {', '.join(sorted(allowed))})", field=f"{where}.{key}")
    kwargs = {}
    for key in ("illumination", "confidence", "outputs"):
        if key in data:
            sets = data[key]
            if not isinstance(sets, dict) or not all(isinstance(v, list) and len(v) == 3 for v in sets.values()):
                raise ParseError("expected {name: [left, peak, right], ...}", field=f"{where}.{key}")
            kwargs[key] = tuple((n, tuple(_coerce(x, float, f"{where}.{key}.{n}") for x in v)) for n, v in sets.items())
    if "rules" in data:
        rules = data["rules"]
        if not isinstance(rules, list) or not all(isinstance(r, list) and len(r) == 3 and all(isinstance(x, str) for x in r) for r in rules):
            raise ParseError("expected [[illumination_set, confidence_set, output_set], ...]", field=f"{where}.rules")
        kwargs["rules"] = tuple(tuple(r) for r in rules)
    if "universe" in data:
        u = data["universe"]
        if not isinstance(u, list) or len(u) != 3:
            raise ParseError("expected [low, high, points]", field=f"{where}.universe")
        kwargs["universe"] = (_coerce(u[0], float, where), _coerce(u[1], float, where), _coerce(u[2], int, where))
    try:
        return FuzzyRuleBase(**kwargs)
    except InvariantViolation as exc:
        raise InvariantViolation(f"{where}: {exc}") from None


def _policies(data, where="policies") -> tuple:
    if not isinstance(data, dict):
        raise ParseError("expected {zone_id: [class, ...]}", field=where)
    out = []
    for zone, names in sorted(data.items()):
        if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
            raise ParseError("expected a list of class names", field=f"{where}.{zone}")
        try:
            ZonePolicy.from_names(zone, names)
        except VocabularyViolation as exc:
            raise ParseError(str(exc), field=f"{where}.{zone}") from None
        out.append((zone, tuple(sorted(set(names)))))
    return tuple(out)


def config_from_dict(data: dict) -> EngineConfig:
    if not isinstance(data, dict):
        raise ParseError("top level must be an object")
    allowed = {f.name for f in dataclasses.fields(EngineConfig)}
    for key in data:
        if key not in allowed:
            raise ParseError(f"unknown key (allowed: {', '.join(sorted(allowed))})", field=key)
    kwargs = {}
    if "seed" in data:
        kwargs["seed"] = _coerce(data["seed"], int, "seed")
    if "policies" in data:
        kwargs["policies"] = _policies(data["policies"])
    if "fuzzy" in data:
        kwargs["fuzzy"] = _fuzzy(data["fuzzy"])
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _section(cls, data[name], name)
    return EngineConfig(**kwargs)


def config_to_dict(cfg: EngineConfig) -> dict:
    out = {"seed": cfg.seed, "decode": dataclasses.asdict(cfg.decode)}
    out["policies"] = {zone: list(names) for zone, names in cfg.policies}
    fz = cfg.fuzzy
    out["fuzzy"] = {
        "illumination": {n: list(t) for n, t in fz.illumination},
        "confidence": {n: list(t) for n, t in fz.confidence},
        "outputs": {n: list(t) for n, t in fz.outputs},
        "rules": [list(r) for r in fz.rules],
        "universe": list(fz.universe),
    }
    for name in ("threshold", "temporal", "adaptation", "paths", "stream", "train", "eval"):
        out[name] = dataclasses.asdict(getattr(cfg, name))
    return out


def parse_config(path: Union[str, Path]) -> EngineConfig:
    """Load and validate a config file; never returns a partial config."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{exc.msg} (column {exc.colno})", source=path, line=exc.lineno) from None
    try:
        return config_from_dict(data)
    except ParseError as exc:
        raise ParseError(str(exc), source=path) from None
    except InvariantViolation as exc:
        raise InvariantViolation(f"{path}: {exc}") from None


def emit_defaults() -> str:
    return json.dumps(config_to_dict(EngineConfig()), indent=2) + "\n"


def defaults_help() -> str:
    """``section.key = value`` listing of every default (for --help)."""
    lines = []
    for section, value in config_to_dict(EngineConfig()).items():
        if isinstance(value, dict) and value:
            lines += [f"  {section}.{k} = {json.dumps(v)}" for k, v in value.items()]
        else:
            lines.append(f"  {section} = {json.dumps(value)}")
    return "\n".join(lines)
