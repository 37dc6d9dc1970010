import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attireguard.core import ATTIRE_VOCAB, BoundingBox, FrameRef, ZonePolicy, iou
from attireguard.engine import (
    AlertLog,
    AlertRecord,
    Anomaly,
    AnomalyEngine,
    ContextFeatures,
    FrameContext,
    TemporalParams,
    ThresholdParams,
    TrackState,
    adaptive_threshold,
    context_features,
    format_policies,
    fuzzy_adjust,
    identify_anomalies,
    parse_policies,
    raise_alerts,
    read_alert_log,
    _iou_matrix,
    temporal_integrate,
)
from attireguard.errors import InvariantViolation, NonMonotoneFrameId, ParseError, UnknownZone, VocabularyViolation
from attireguard.fuzzy import FuzzyRuleBase
from attireguard.pipeline import FrameResult

from conftest import attire, person

ZONE = ZonePolicy.from_names("lab", ["Jacket"])
NEUTRAL = ContextFeatures(0.5, 0.5, 1.0)


def anomaly(name="T-Shirt", cx=50, cy=50, w=20, h=20, conf=0.8, adjusted=None):
    d = attire(name, cx, cy, w, h, conf)
    return Anomaly(d, "lab", conf, conf if adjusted is None else adjusted)


# -- identification -----------------------------------------------------------------


def test_identify_examples():
    assert identify_anomalies([attire("Jacket", 1, 1, 1, 1)], ZONE) == []
    (a,) = identify_anomalies([attire("T-Shirt", 1, 1, 1, 1, 0.7)], ZONE)
    assert a.detection.label.name == "T-Shirt" and a.original_conf == 0.7 and a.zone_id == "lab"
    assert identify_anomalies([], ZONE) == []


def test_identify_by_zone_mapping():
    pols = {"lab": ZONE}
    assert len(identify_anomalies([(2, attire("Top", 1, 1, 1, 1))], pols, "lab")) == 1
    assert identify_anomalies([(2, attire("Top", 1, 1, 1, 1))], pols, "lab")[0].person_index == 2
    with pytest.raises(UnknownZone, match="yard"):
        identify_anomalies([], pols, "yard")
    with pytest.raises(VocabularyViolation):
        identify_anomalies([person(1, 1, 1, 1)], ZONE)


@given(
    st.sets(st.sampled_from(ATTIRE_VOCAB.names)),
    st.lists(st.tuples(st.sampled_from(ATTIRE_VOCAB.names), st.floats(0, 1)), max_size=12),
)
def test_identify_equals_set_difference(allowed, items):
    pol = ZonePolicy.from_names("z", sorted(allowed))
    dets = [attire(n, 5, 5, 2, 2, s) for n, s in items]
    got = [a.detection for a in identify_anomalies(dets, pol)]
    assert got == [d for d in dets if d.label.name not in allowed]


# -- context -------------------------------------------------------------------------


def test_context_features():
    assert context_features(FrameContext("lab")).as_tuple() == (0.5, 0.5, 1.0)
    f = context_features(FrameContext("lab", 0.5, {"fog": 0.2, "glare": 0.4}))
    assert f.condition_mean == pytest.approx(0.3)
    with pytest.raises(InvariantViolation):
        FrameContext("lab", 1.5)


@given(st.floats(0, 1), st.dictionaries(st.text(max_size=3), st.floats(0, 1), max_size=5), st.floats(0, 1))
def test_context_features_in_unit_cube(illum, conds, fam):
    assert all(0 <= v <= 1 for v in context_features(FrameContext("z", illum, conds, fam)).as_tuple())


def test_fuzzy_adjust_neutral_and_dark():
    rb = FuzzyRuleBase()
    assert fuzzy_adjust(anomaly(conf=0.5), NEUTRAL, rb) == pytest.approx(0.5, abs=1e-9)
    assert fuzzy_adjust(anomaly(conf=0.9), ContextFeatures(0.0, 0.5, 1.0), rb) == pytest.approx(0.54, abs=1e-9)


# -- threshold ----------------------------------------------------------------------


def test_threshold_examples():
    tp = ThresholdParams()
    assert adaptive_threshold([anomaly(adjusted=0.5)] * 3, NEUTRAL, tp) == pytest.approx(0.5)
    assert adaptive_threshold([anomaly(adjusted=0.9)], NEUTRAL, ThresholdParams(0.5, 0.5, 0.0)) == pytest.approx(0.7)
    assert adaptive_threshold([], NEUTRAL, tp) == 0.5
    assert adaptive_threshold([anomaly(adjusted=1.0)], ContextFeatures(0.0, 0.5, 1), ThresholdParams(0.5, 5, 5)) == 0.95
    with pytest.raises(InvariantViolation):
        ThresholdParams(floor=0.9, ceiling=0.8)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=6), st.floats(0, 0.5), st.floats(0, 1), st.floats(0, 2), st.floats(0, 2))
def test_threshold_monotone_in_mean_and_clamped(adj, bump, illum, alpha, beta):
    tp = ThresholdParams(0.5, alpha, beta)
    f = ContextFeatures(illum, 0.5, 1.0)
    lo = adaptive_threshold([anomaly(adjusted=a) for a in adj], f, tp)
    hi = adaptive_threshold([anomaly(adjusted=min(1.0, a + bump)) for a in adj], f, tp)
    assert hi >= lo - 1e-15
    assert tp.floor <= lo <= tp.ceiling


# -- temporal ------------------------------------------------------------------------


def run_stream(frames, params=TemporalParams()):
    state, out = TrackState(), []
    for fid, anoms in frames:
        persistent, state = temporal_integrate(anoms, state, params, fid)
        out.append((fid, persistent))
    return out


def test_single_appearance_not_persistent():
    res = run_stream([(1, [anomaly()])] + [(f, []) for f in range(2, 6)])
    assert all(p == [] for _, p in res)


def test_three_consecutive_become_persistent_at_third():
    res = run_stream([(f, [anomaly(cx=50 + f)]) for f in (1, 2, 3)] + [(4, []), (5, [])])
    assert [len(p) for _, p in res] == [0, 0, 1, 0, 0]
    assert res[2][1][0].persistence == 3 and res[2][1][0].track_id == 1


def test_disjoint_anomalies_get_distinct_tracks():
    res = run_stream([(f, [anomaly(cx=20), anomaly(cx=200)]) for f in (1, 2, 3)])
    ids = {a.track_id for a in res[2][1]}
    assert ids == {1, 2}


def test_frame_ids_must_increase():
    _, state = temporal_integrate([], TrackState(), TemporalParams(), 5)
    with pytest.raises(NonMonotoneFrameId):
        temporal_integrate([], state, TemporalParams(), 5)


def test_stale_tracks_dropped():
    params = TemporalParams()
    _, state = temporal_integrate([anomaly()], TrackState(), params, 1)
    _, state = temporal_integrate([], state, params, 6)
    assert len(state.tracks) == 1
    _, state = temporal_integrate([], state, params, 7)
    assert state.tracks == ()


def history_oracle(frames, params):
    """Replay the whole stored history at every frame with unpruned hit lists."""
    out = []
    for upto in range(1, len(frames) + 1):
        tracks = []  # dicts: id, cls, box, hits (full)
        next_id = 1
        persistent = []
        for fid, anoms in frames[:upto]:
            live = [t for t in tracks if fid - max(t["hits"]) <= params.window]
            cand = sorted(
                (
                    (-iou(a.detection.bbox, t["box"]), i, t["id"])
                    for i, a in enumerate(anoms)
                    for t in live
                    if t["cls"] == a.detection.label.id and iou(a.detection.bbox, t["box"]) >= params.match_iou and iou(a.detection.bbox, t["box"]) > 0
                ),
            )
            owner, used = {}, set()
            for _, i, tid in cand:
                if i not in owner and tid not in used:
                    owner[i] = tid
                    used.add(tid)
            tracks = live
            persistent = []
            for i, a in enumerate(anoms):
                if i in owner:
                    t = next(t for t in tracks if t["id"] == owner[i])
                    t["hits"].append(fid)
                    t["box"] = a.detection.bbox
                else:
                    t = {"id": next_id, "cls": a.detection.label.id, "box": a.detection.bbox, "hits": [fid]}
                    tracks.append(t)
                    next_id += 1
                recent = [h for h in t["hits"] if h > fid - params.window]
                if len(recent) >= params.required:
                    persistent.append((i, t["id"], len(recent)))
        out.append(persistent)
    return out


def random_stream(rng):
    fid = 0
    frames = []
    objects = [(rng.uniform(20, 80), rng.uniform(20, 80), str(rng.choice(["T-Shirt", "Shorts"]))) for _ in range(3)]
    for _ in range(int(rng.integers(1, 11))):
        fid += int(rng.integers(1, 4))
        anoms = []
        for cx, cy, name in objects:
            if rng.uniform() < 0.6:
                anoms.append(anomaly(name, cx + rng.normal(0, 3), cy + rng.normal(0, 3), 20, 20))
        frames.append((fid, anoms))
    return frames


@pytest.mark.parametrize("seed", range(100))
def test_temporal_matches_history_oracle(seed):
    rng = np.random.default_rng(seed)
    params = TemporalParams(int(rng.integers(2, 6)), 1, 0.3)
    params = TemporalParams(params.window, int(rng.integers(1, params.window + 1)), 0.3)
    frames = random_stream(rng)
    got = run_stream(frames, params)
    want = history_oracle(frames, params)
    for (fid, anoms), (_, pers), exp in zip(frames, got, want):
        idx = [next(i for i, a in enumerate(anoms) if a.detection is p.detection) for p in pers]
        assert [(i, p.track_id, p.persistence) for i, p in zip(idx, pers)] == exp


# -- alerts --------------------------------------------------------------------------


def test_raise_alerts_examples():
    (a,) = raise_alerts([anomaly(adjusted=0.8)], 0.6, 3)
    assert (a.frame_id, a.class_name, a.adjusted_conf, a.threshold) == (3, "T-Shirt", 0.8, 0.6)
    assert raise_alerts([anomaly(adjusted=0.6)], 0.6, 3) == []
    assert raise_alerts([], 0.1, 3) == []


def test_alert_order():
    al = raise_alerts([anomaly("Top", adjusted=0.7), anomaly("Shorts", adjusted=0.9), anomaly("T-Shirt", adjusted=0.7)], 0.5, 1)
    assert [a.class_name for a in al] == ["Shorts", "T-Shirt", "Top"]


@given(st.lists(st.floats(0, 1), max_size=8), st.floats(0, 1))
def test_alerts_subset_and_strict(adj, t):
    al = raise_alerts([anomaly(adjusted=a) for a in adj], t, 1)
    assert len(al) <= len(adj) and all(a.adjusted_conf > t for a in al)


def test_alert_record_invariant():
    with pytest.raises(InvariantViolation):
        AlertRecord(1, "lab", "Top", 0.5, 0.5, 0.5, 3)


def test_alert_log_roundtrip(tmp_path):
    recs = raise_alerts([anomaly(adjusted=0.8)], 0.6, 50)
    with AlertLog(tmp_path / "a.jsonl", fps=25) as log:
        log.write(recs)
    line = (tmp_path / "a.jsonl").read_text().splitlines()[0]
    assert json.loads(line)["timestamp"] == "1970-01-01T00:00:02.000+00:00"
    assert list(json.loads(line)) == ["timestamp", "frame_id", "zone_id", "class_name", "original_conf", "adjusted_conf", "threshold", "persistence"]
    assert read_alert_log(tmp_path / "a.jsonl") == recs


# -- policies ------------------------------------------------------------------------


def test_policy_file_roundtrip():
    pols = parse_policies(["# zones", "lab: Jacket", "gym: Shorts, T-Shirt", "vault:"])
    assert pols["gym"].allows(ATTIRE_VOCAB.label("Shorts")) and pols["vault"].authorized == frozenset()
    assert parse_policies(format_policies(pols).splitlines()) == pols


@pytest.mark.parametrize("lines, msg", [(["lab Jacket"], "line 1"), (["lab: Hat"], "Hat"), (["a: Top", "a: Top"], "twice")])
def test_policy_file_errors(lines, msg):
    with pytest.raises(ParseError, match=msg):
        parse_policies(lines, source="p.txt")


# -- engine --------------------------------------------------------------------------


def frame_result(fid, dets):
    return FrameResult(FrameRef(fid, 640, 480, "lab"), [person(50, 50, 60, 100)], [(0, d) for d in dets])


def test_engine_persistent_tshirt_alerts_from_third_frame():
    eng = AnomalyEngine({"lab": ZONE})
    counts = []
    for fid in range(1, 6):
        out = eng.process(frame_result(fid, [attire("T-Shirt", 50, 50, 20, 30, 0.8), attire("Jacket", 50, 90, 20, 20, 0.9)]), FrameContext("lab"))
        counts.append(len(out.alerts))
    assert counts == [0, 0, 1, 1, 1]


def test_engine_adaptation_moves_normal_peak():
    eng = AnomalyEngine({"lab": ZONE}, adaptation_rate=0.5, ema_smoothing=1.0)
    eng.process(frame_result(1, []), FrameContext("lab", 0.6))
    assert eng.rule_base.illumination_set("normal")[1] == pytest.approx(0.55)


def test_engine_rejects_bad_adaptation_atomically():
    eng = AnomalyEngine({"lab": ZONE}, adaptation_rate=1.0, ema_smoothing=1.0)
    before = eng.rule_base
    out = eng.process(frame_result(1, []), FrameContext("lab", 0.0))
    assert out.adaptation_rejected and eng.rule_base is before


small = st.integers(0, 8).map(float)


@given(st.lists(st.tuples(small, small, st.integers(1, 6).map(float), st.integers(1, 6).map(float)), min_size=1, max_size=8), st.data())
def test_iou_matrix_is_bitwise_scalar_iou(raw, data):
    # integer grid makes shared edges, containment and identical boxes common
    a = [BoundingBox(*r) for r in raw]
    b = a[: data.draw(st.integers(0, len(a)))] + [BoundingBox(*r) for r in data.draw(st.lists(st.tuples(small, small, st.just(2.0), st.just(3.0)), min_size=1, max_size=4))]
    m = _iou_matrix(a, b)
    assert m.tolist() == [[iou(x, y) for y in b] for x in a]
