import pytest
from hypothesis import given, strategies as st

from fuzzmon.engine import (UNLEARNED, Assessment, Confidence, EngineError, FuzzifiedValue, assess_window,
                            baseline_class, centroid, classify_center, defuzzify, evaluate_rules, fuzzify,
                            shapes_from_boundaries)
from fuzzmon.knowledge_base import (BoundarySet, DayClass, KnowledgeBase, LinguisticVariable, TimeBucketKey,
                                    all_buckets)
from fuzzmon.rules import RuleBase, parse

from oracles import ruspini_degrees, triangle_centroid

NIGHT = TimeBucketKey(3, DayClass.WEEKDAY)
NOON = TimeBucketKey(12, DayClass.WEEKDAY)
RULE = parse("IF util IS extreme AND util IS USUALLY low THEN condition IS abnormal")


def degrees(var, bounds, x):
    return fuzzify(x, shapes_from_boundaries(var, bounds)).memberships


def test_crossovers_and_edges(util_var):
    assert degrees(util_var, [3, 8], 3.0) == {"low": 0.5, "normal": 0.5, "extreme": 0.0}
    assert degrees(util_var, [3, 8], 8.0) == {"low": 0.0, "normal": 0.5, "extreme": 0.5}
    assert degrees(util_var, [3, 8], 0.0) == {"low": 1.0, "normal": 0.0, "extreme": 0.0}
    assert degrees(util_var, [3, 8], 100.0)["extreme"] == 1.0


def test_midpoint_peak_and_interpolation(util_var):
    assert degrees(util_var, [3, 8], 5.5)["normal"] == 1.0
    d = degrees(util_var, [3, 8], 4.25)
    assert d["low"] == pytest.approx(0.25) and d["normal"] == pytest.approx(0.75) and d["extreme"] == 0.0


def test_out_of_domain_clamped(util_var):
    assert degrees(util_var, [3, 8], -50.0) == degrees(util_var, [3, 8], 0.0)
    assert degrees(util_var, [3, 8], 1e9) == degrees(util_var, [3, 8], 100.0)


def test_arity_mismatch(util_var):
    with pytest.raises(EngineError):
        shapes_from_boundaries(util_var, [3.0])


def test_baseline_argmax_and_ties(util_var):
    mfs = shapes_from_boundaries(util_var, [3, 8])
    assert classify_center(1.0, mfs) == "low"
    assert classify_center(3.0, mfs) == "low"
    assert classify_center(8.0, mfs) == "normal"
    assert classify_center(5.5, mfs) == "normal"


def test_baseline_class_uses_given_reference(util_var):
    kb = KnowledgeBase([util_var])
    kb.commit_boundaries("util", NIGHT, BoundarySet((0.5, 1.5), 100, 1.0))
    ref = shapes_from_boundaries(util_var, [3, 8])
    snap = kb.snapshot()
    assert baseline_class("util", NIGHT, snap, ref) == "low"
    assert baseline_class("util", NOON, snap, ref) == UNLEARNED
    with pytest.raises(Exception):
        baseline_class("jitter", NIGHT, snap)


def test_baseline_class_places_bucket_among_buckets(util_var):
    kb = KnowledgeBase([util_var])
    for b in all_buckets():
        mean = 60.0 if 9 <= b.hour_of_day <= 17 else 10.0
        kb.commit_boundaries("util", b, BoundarySet((mean - 5, mean + 5), 100, mean))
    snap = kb.snapshot()
    assert baseline_class("util", NIGHT, snap) == "low"
    assert baseline_class("util", NOON, snap) != "low"


@given(st.floats(0.01, 10.0), st.floats(-50.0, 50.0), st.floats(0.0, 1.0))
def test_baseline_argmax_affine_invariant(scale, shift, u):
    a = LinguisticVariable("x", 0.0, 100.0, ("low", "normal", "extreme"))
    lo, hi = 0.0 * scale + shift, 100.0 * scale + shift
    b = LinguisticVariable("x", round(lo, 6) - 1, round(hi, 6) + 1, a.terms)
    center = 100.0 * u
    before = classify_center(center, shapes_from_boundaries(a, [30.0, 70.0]))
    # shapes transform with the boundaries as long as the edge caps do not bind
    after = classify_center(center * scale + shift, shapes_from_boundaries(b, [30.0 * scale + shift,
                                                                            70.0 * scale + shift]))
    assert before == after


def test_evaluate_rules_examples():
    util = FuzzifiedValue("util", {"low": 0.1, "normal": 0.0, "extreme": 0.9})
    assert evaluate_rules([util], {"util": "low"}, RULE) == {0: 0.9}
    assert evaluate_rules([util], {"util": "high"}, RULE) == {0: 0.0}
    two = parse("IF util IS extreme AND bandwidth IS high THEN condition IS abnormal")
    bw = FuzzifiedValue("bandwidth", {"low": 0.7, "normal": 0.0, "high": 0.3})
    util6 = FuzzifiedValue("util", {"low": 0.4, "normal": 0.0, "extreme": 0.6})
    assert evaluate_rules([util6, bw], {"util": "low", "bandwidth": "low"}, two) == {0: 0.3}


def test_evaluate_rules_unlearned_flags():
    flagged = set()
    util = FuzzifiedValue("util", {"low": 0.0, "normal": 0.0, "extreme": 1.0})
    assert evaluate_rules([util], {"util": UNLEARNED}, RULE, flagged) == {0: 0.0}
    assert flagged == {0}
    with pytest.raises(EngineError):
        evaluate_rules([], {}, RULE)


def test_defuzzify_anchors():
    rules = parse("IF a IS x THEN condition IS normal\nIF a IS y THEN condition IS abnormal\n")
    normal = defuzzify({0: 1.0, 1: 0.0}, rules)
    abnormal = defuzzify({0: 0.0, 1: 1.0}, rules)
    both = defuzzify({0: 1.0, 1: 1.0}, rules)
    none = defuzzify({0: 0.0, 1: 0.0}, rules)
    assert normal.score == pytest.approx(triangle_centroid(0, 0, 0.5), abs=1e-3)
    assert abnormal.score == pytest.approx(triangle_centroid(0.5, 1, 1), abs=1e-3)
    assert both.score == pytest.approx(0.5, abs=1e-9)
    assert (none.score, none.label) == (0.0, "normal")
    assert normal.label == "normal" and abnormal.label == "abnormal" and both.label == "abnormal"
    assert set(normal.rule_strengths) == {0, 1}
    with pytest.raises(EngineError):
        defuzzify({}, RuleBase())


def test_assessment_label_consistency():
    with pytest.raises(EngineError):
        Assessment(0.7, "normal", {})


@given(st.floats(0, 1), st.floats(0, 1))
def test_score_bounds(n, a):
    assert 0.0 <= centroid(n, a) <= 1.0


@given(st.floats(0, 1), st.lists(st.floats(0, 1), min_size=2, max_size=6), st.integers(0, 5),
       st.floats(0, 1))
def test_monotone_in_abnormal_firing(normal, abn, idx, bump):
    rules = parse("IF a IS x THEN condition IS normal\n" + "IF a IS y THEN condition IS abnormal\n" * len(abn))
    firings = {0: normal, **{i + 1: f for i, f in enumerate(abn)}}
    before = defuzzify(firings, rules).score
    j = idx % len(abn) + 1
    firings[j] = min(1.0, firings[j] + bump)
    assert defuzzify(firings, rules).score >= before - 1e-12


bounds_strategy = st.lists(st.integers(0, 10**9), min_size=2, max_size=4, unique=True).map(
    lambda xs: sorted(x / 1e6 for x in xs))


@given(bounds_strategy, st.floats(-100.0, 1100.0))
def test_partition_of_unity_matches_oracle(bounds, x):
    terms = tuple(f"t{i}" for i in range(len(bounds) + 1))
    var = LinguisticVariable("v", 0.0, 1000.0, terms)
    bs = BoundarySet(tuple(bounds))
    got = list(fuzzify(x, shapes_from_boundaries(var, bs)).memberships.values())
    assert abs(sum(got) - 1.0) <= 1e-9
    assert all(0.0 <= d <= 1.0 for d in got)
    xc = min(max(x, 0.0), 1000.0)
    assert got == pytest.approx(ruspini_degrees(xc, bs.boundaries, 0.0, 1000.0), abs=1e-9)


# --- end to end ---------------------------------------------------------------

def learned_kb(rules):
    var = LinguisticVariable("util", 0.0, 1.0, ("low", "normal", "extreme"))
    kb = KnowledgeBase([var], rules)
    for b in all_buckets():
        busy = 9 <= b.hour_of_day <= 17
        mean = 0.5 if busy else 0.05
        kb.commit_boundaries("util", b, BoundarySet((mean * 0.8, mean * 1.2), 3600, mean))
    return kb.snapshot()


def test_end_to_end_labels():
    rules = parse("IF util IS extreme AND util IS USUALLY low THEN condition IS abnormal\n"
                  "IF util IS normal THEN condition IS normal\n")
    snap = learned_kb(rules)
    typical = assess_window({"util": 0.05}, NIGHT, snap)
    assert typical.label == "normal" and typical.confidence is Confidence.LEARNED
    spike = assess_window({"util": 0.5}, NIGHT, snap, timestamp=123)
    assert spike.label == "abnormal" and spike.timestamp == 123 and spike.bucket == NIGHT
    busy = assess_window({"util": 0.5}, NOON, snap)
    assert busy.label == "normal"


def test_cold_start_low_confidence():
    var = LinguisticVariable("util", 0.0, 1.0, ("low", "normal", "extreme"))
    snap = KnowledgeBase([var], RULE).snapshot()
    a = assess_window({"util": 0.99}, NIGHT, snap)
    assert a.confidence is Confidence.UNLEARNED_BUCKET and a.score == 0.0


def test_grid_centroid_matches_closed_form():
    # normal triangle (0,0,0.5) clipped at height h: flat to x1, then 1 - 2x
    for h in (0.25, 0.5, 0.75, 1.0):
        x1 = (1 - h) / 2
        area = h * x1 + (0.25 - x1 + x1 ** 2)
        moment = h * x1 ** 2 / 2 + (0.125 - 1 / 12) - (x1 ** 2 / 2 - 2 * x1 ** 3 / 3)
        assert centroid(h, 0.0) == pytest.approx(moment / area, abs=1e-3)
        assert centroid(0.0, h) == pytest.approx(1 - moment / area, abs=1e-3)
