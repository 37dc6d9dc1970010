"""Mamdani confidence adjustment.

Inputs are scene illumination and the detector's original confidence, both
in ``[0, 1]``. Rules fire with min, outputs aggregate with max, and the crisp
confidence multiplier is the centroid of the aggregated output over a
discretized universe.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from . import kernels
from .errors import EmptyRuleActivation, InvariantViolation

Triangle = tuple[float, float, float]

DEFAULT_ILLUMINATION = (("dark", (0.0, 0.0, 0.4)), ("normal", (0.2, 0.5, 0.8)), ("bright", (0.6, 1.0, 1.0)))
DEFAULT_CONFIDENCE = (("low", (0.0, 0.0, 0.4)), ("medium", (0.2, 0.5, 0.8)), ("high", (0.6, 1.0, 1.0)))
DEFAULT_OUTPUTS = (("attenuate", (0.5, 0.6, 0.7)), ("keep", (0.9, 1.0, 1.1)), ("boost", (1.15, 1.2, 1.25)))
# 1201 points put every output vertex above on the grid (step 0.000625), so a
# lone symmetric set defuzzifies exactly to its peak.
DEFAULT_UNIVERSE = (0.5, 1.25, 1201)


def _default_rules():
    rules = []
    for illum, _ in DEFAULT_ILLUMINATION:
        for conf, _ in DEFAULT_CONFIDENCE:
            if illum == "dark":
                out = "attenuate"
            elif (illum, conf) == ("bright", "high"):
                out = "boost"
            else:
                out = "keep"
            rules.append((illum, conf, out))
    return tuple(rules)


def triangular(x: float, left: float, peak: float, right: float) -> float:
    """Triangle membership; ``left == peak`` or ``peak == right`` give shoulders."""
    if x == peak:
        return 1.0
    if left < x < peak:
        return (x - left) / (peak - left)
    if peak < x < right:
        return (right - x) / (right - peak)
    return 0.0


@dataclass(frozen=True)
class FuzzyRuleBase:
    illumination: tuple = DEFAULT_ILLUMINATION
    confidence: tuple = DEFAULT_CONFIDENCE
    outputs: tuple = DEFAULT_OUTPUTS
    rules: tuple = _default_rules()
    universe: tuple = DEFAULT_UNIVERSE

    def __post_init__(self):
        # normalise containers so equal bases compare and hash equal
        def sets(v):
            items = v.items() if isinstance(v, Mapping) else v
            return tuple((str(n), tuple(float(x) for x in t)) for n, t in items)

        object.__setattr__(self, "illumination", sets(self.illumination))
        object.__setattr__(self, "confidence", sets(self.confidence))
        object.__setattr__(self, "outputs", sets(self.outputs))
        object.__setattr__(self, "rules", tuple(tuple(r) for r in self.rules))
        lo, hi, n = self.universe
        object.__setattr__(self, "universe", (float(lo), float(hi), int(n)))
        self.validate()

    def validate(self):
        for var, sets in (("illumination", self.illumination), ("confidence", self.confidence), ("output", self.outputs)):
            if not sets:
                raise InvariantViolation(f"{var}: no fuzzy sets")
            for name, tri in sets:
                if len(tri) != 3 or not (tri[0] <= tri[1] <= tri[2]):
                    raise InvariantViolation(f"{var} set {name!r}: triple {tri} is not ordered left <= peak <= right")
        lo, hi, n = self.universe
        if not (lo < hi and n >= 2):
            raise InvariantViolation(f"bad output universe {self.universe}")
        for name, (l, p, r) in self.outputs:
            if not lo <= p <= hi:
                raise InvariantViolation(f"output set {name!r} peak {p} outside universe [{lo}, {hi}]")
        for var, sets in (("illumination", self.illumination), ("confidence", self.confidence)):
            gap = _coverage_gap(sets)
            if gap is not None:
                raise InvariantViolation(f"{var} sets leave x={gap:g} uncovered (membership sum 0)")
        names_i, names_c, names_o = (dict(self.illumination), dict(self.confidence), dict(self.outputs))
        if not self.rules:
            raise InvariantViolation("rule base has no rules")
        for rule in self.rules:
            if len(rule) != 3 or rule[0] not in names_i or rule[1] not in names_c or rule[2] not in names_o:
                raise InvariantViolation(f"rule {rule} references an unknown set")

    def illumination_set(self, name: str) -> Triangle:
        return dict(self.illumination)[name]

    def with_illumination_set(self, name: str, tri: Triangle) -> "FuzzyRuleBase":
        sets = tuple((n, tri if n == name else t) for n, t in self.illumination)
        return replace(self, illumination=sets)


def _coverage_gap(sets):
    """First point of [0, 1] where every membership is zero, or None."""
    verts = [x for _, tri in sets for x in tri if 0.0 <= x <= 1.0]
    pts = np.unique(np.concatenate([_COVERAGE_GRID, verts]))
    total = np.zeros_like(pts)
    for _, tri in sets:
        total += kernels.pure._tri(pts, *tri)
    bad = np.flatnonzero(total <= 0)
    return float(pts[bad[0]]) if bad.size else None


_COVERAGE_GRID = np.linspace(0.0, 1.0, 1001)


@functools.lru_cache(maxsize=64)
def _compiled(rb: FuzzyRuleBase):
    lo, hi, n = rb.universe
    universe = np.linspace(lo, hi, n)
    out_names = [name for name, _ in rb.outputs]
    sets = np.array([tri for _, tri in rb.outputs], dtype=np.float64)
    rule_idx = [(name_i, name_c, out_names.index(name_o)) for name_i, name_c, name_o in rb.rules]
    return universe, sets, rule_idx


def rule_strengths(illumination: float, confidence: float, rb: FuzzyRuleBase) -> np.ndarray:
    """Max-aggregated min-activation per output set."""
    _, sets, rule_idx = _compiled(rb)
    mu_i = {name: triangular(illumination, *tri) for name, tri in rb.illumination}
    mu_c = {name: triangular(confidence, *tri) for name, tri in rb.confidence}
    strengths = np.zeros(len(sets))
    for name_i, name_c, k in rule_idx:
        s = min(mu_i[name_i], mu_c[name_c])
        if s > strengths[k]:
            strengths[k] = s
    return strengths


def infer_multiplier(illumination: float, confidence: float, rb: FuzzyRuleBase) -> float:
    universe, sets, _ = _compiled(rb)
    strengths = rule_strengths(illumination, confidence, rb)
    num, den = kernels.clipped_centroid(universe, sets, strengths)
    if den <= 0.0:
        raise EmptyRuleActivation(f"no rule fired for illumination={illumination}, confidence={confidence}")
    return num / den


def adjust_confidence(original: float, illumination: float, rb: FuzzyRuleBase) -> float:
    return min(1.0, max(0.0, original * infer_multiplier(illumination, original, rb)))


def adapt_parameters(ema: float, rb: FuzzyRuleBase, rate: float, set_name: str = "normal") -> FuzzyRuleBase:
    """Shift one illumination set toward the observed illumination average.

    The triangle moves rigidly by ``rate * (ema - peak)``. If the moved sets no
    longer cover [0, 1] the update is rejected with InvariantViolation and the
    input rule base (immutable) stays in effect.
    """
    if not 0.0 <= rate <= 1.0:
        raise InvariantViolation(f"adaptation rate {rate} outside [0, 1]")
    if rate == 0.0:
        return rb
    left, peak, right = rb.illumination_set(set_name)
    new_peak = (1.0 - rate) * peak + rate * ema
    delta = new_peak - peak
    return rb.with_illumination_set(set_name, (left + delta, new_peak, right + delta))
