"""Mamdani inference over learned, time-bucketed membership functions."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

from .knowledge_base import BoundarySet, KBSnapshot, LinguisticVariable, TimeBucketKey
from .learning import LearnerConfig, LearningError, recursive_average_partition
from .rules import ClauseKind, RuleBase

log = logging.getLogger(__name__)

UNLEARNED = "unlearned"
OUTPUT_STEP = 0.001
_GRID = np.linspace(0.0, 1.0, int(round(1 / OUTPUT_STEP)) + 1)
# output terms: normal = triangle(0, 0, 0.5), abnormal = triangle(0.5, 1, 1)
_NORMAL_MF = np.clip(1.0 - _GRID / 0.5, 0.0, 1.0)
_ABNORMAL_MF = np.clip((_GRID - 0.5) / 0.5, 0.0, 1.0)

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


class EngineError(ValueError):
    pass


class Confidence(str, Enum):
    LEARNED = "learned"
    UNLEARNED_BUCKET = "unlearned_bucket"


@dataclass(frozen=True)
class MembershipFunctionSet:
    """Piecewise-linear Ruspini partition pinned at learned boundaries.

    Around boundary ``b_i`` the two adjacent terms trade off linearly over
    ``[b_i - h_i, b_i + h_i]`` and cross at 0.5 on ``b_i``. ``h_i`` is half the
    smaller neighbouring gap between boundaries; for the outermost
    boundaries it is also capped by the distance to the domain edge so the
    shoulders reach 1 inside the domain.
    """

    variable: str
    domain_min: float
    domain_max: float
    terms: tuple[str, ...]
    boundaries: tuple[float, ...]
    half_widths: tuple[float, ...]

    def _crossed(self, x: float) -> list[float]:
        # t_i = how far x has crossed boundary i, 0..1
        out = []
        for b, h in zip(self.boundaries, self.half_widths):
            if h <= 0:
                out.append(0.5 if x == b else (1.0 if x > b else 0.0))
            elif x <= b - h:
                out.append(0.0)
            elif x >= b + h:
                out.append(1.0)
            else:
                out.append((x - b + h) / (2 * h))
        return out

    def degrees(self, x: float) -> tuple[float, ...]:
        t = self._crossed(x)
        k = len(self.terms)
        return tuple((1.0 - t[0]) if i == 0 else (t[i - 1] if i == k - 1 else t[i - 1] - t[i])
                     for i in range(k))

    def clamp(self, x: float) -> float:
        return min(max(x, self.domain_min), self.domain_max)


@dataclass(frozen=True)
class FuzzifiedValue:
    variable: str
    memberships: Mapping[str, float]


@dataclass(frozen=True)
class Assessment:
    score: float
    label: str
    rule_strengths: Mapping[int, float]
    confidence: Confidence = Confidence.LEARNED
    bucket: TimeBucketKey | None = None
    timestamp: float | None = None

    def __post_init__(self):
        expected = "abnormal" if self.score >= 0.5 else "normal"
        if self.label != expected:
            raise EngineError(f"label {self.label!r} inconsistent with score {self.score}")


def shapes_from_boundaries(var: LinguisticVariable, bs: BoundarySet | Iterable[float]) -> MembershipFunctionSet:
    b = tuple(bs.boundaries if isinstance(bs, BoundarySet) else bs)
    if len(b) != len(var.terms) - 1:
        raise EngineError(f"{var.name}: {len(var.terms)} terms need {len(var.terms) - 1} boundaries, got {len(b)}")
    n = len(b)
    halves = []
    for i, bi in enumerate(b):
        limits = []
        if i > 0:
            limits.append((bi - b[i - 1]) / 2)
        if i < n - 1:
            limits.append((b[i + 1] - bi) / 2)
        if i == 0:
            limits.append(bi - var.domain_min)
        if i == n - 1:
            limits.append(var.domain_max - bi)
        halves.append(max(0.0, min(limits)))
    return MembershipFunctionSet(var.name, var.domain_min, var.domain_max, tuple(var.terms), b, tuple(halves))


def fuzzify(x: float, mfs: MembershipFunctionSet) -> FuzzifiedValue:
    xc = mfs.clamp(x)
    if xc != x:
        log.debug("%s: clamped %r into [%r, %r]", mfs.variable, x, mfs.domain_min, mfs.domain_max)
    return FuzzifiedValue(mfs.variable, dict(zip(mfs.terms, mfs.degrees(xc))))


def classify_center(center: float, mfs: MembershipFunctionSet) -> str:
    """Term with maximal membership at ``center``; ties go to the lower term."""
    degrees = mfs.degrees(mfs.clamp(center))
    best = 0
    for i, d in enumerate(degrees):
        if d > degrees[best]:
            best = i
    return mfs.terms[best]


def reference_shapes(var: LinguisticVariable, snap: KBSnapshot) -> MembershipFunctionSet | None:
    """Shapes over the variable's learned bucket means, across all buckets.

    These place one bucket's typical level relative to the others, which is
    what a "usually low" clause asks about.
    """
    means = [bs.mean for (name, _), bs in sorted(snap.membership.items(), key=lambda kv: (kv[0][0], kv[0][1]))
             if name == var.name and bs.mean is not None]
    if not means:
        return None
    try:
        bounds = recursive_average_partition(means, len(var.terms), LearnerConfig(min_samples=1))
    except LearningError:
        return None
    bounds = [min(max(x, var.domain_min), var.domain_max) for x in bounds]
    if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
        return None
    return shapes_from_boundaries(var, bounds)


def baseline_class(var: str, bucket: TimeBucketKey, snap: KBSnapshot,
                   reference: MembershipFunctionSet | None = None) -> str:
    variable = snap.variable(var)
    bs = snap.get(var, bucket)
    if bs is None or bs.mean is None:
        return UNLEARNED
    if reference is None:
        reference = reference_shapes(variable, snap)
    if reference is None:
        return UNLEARNED
    return classify_center(bs.mean, reference)


def evaluate_rules(inputs: Iterable[FuzzifiedValue], baselines: Mapping[str, str], rules: RuleBase,
                   flagged: set[int] | None = None) -> dict[int, float]:
    """Firing degree per rule: min over clauses.

    A baseline clause is crisp (1 on match, 0 otherwise). Operands whose
    variable is unlearned contribute 0 and the rule id is added to
    ``flagged`` when a set is supplied.
    """
    fuzzy = {fv.variable: fv for fv in inputs}
    out: dict[int, float] = {}
    for rule in rules.rules:
        degree = 1.0
        for clause in rule.antecedents:
            base = baselines.get(clause.variable)
            if clause.kind is ClauseKind.BASELINE:
                if base is None:
                    raise EngineError(f"rule {rule.id}: no baseline for {clause.variable!r}")
                if base == UNLEARNED:
                    d = 0.0
                    if flagged is not None:
                        flagged.add(rule.id)
                else:
                    d = 1.0 if base == clause.term else 0.0
            else:
                fv = fuzzy.get(clause.variable)
                if fv is None:
                    if base != UNLEARNED:
                        raise EngineError(f"rule {rule.id}: no input for {clause.variable!r}")
                    d = 0.0
                    if flagged is not None:
                        flagged.add(rule.id)
                else:
                    try:
                        d = fv.memberships[clause.term]
                    except KeyError:
                        raise EngineError(f"rule {rule.id}: {clause.variable!r} has no term {clause.term!r}") from None
            degree = min(degree, d)
        out[rule.id] = degree
    return out


def centroid(normal_degree: float, abnormal_degree: float) -> float:
    mu = np.maximum(np.minimum(normal_degree, _NORMAL_MF), np.minimum(abnormal_degree, _ABNORMAL_MF))
    area = _trapezoid(mu, _GRID)
    if area <= 0:
        return 0.0
    c = float(_trapezoid(mu * _GRID, _GRID) / area)
    return min(max(c, 0.0), 1.0)


def defuzzify(firings: Mapping[int, float], rules: RuleBase,
              confidence: Confidence = Confidence.LEARNED) -> Assessment:
    if not rules.rules:
        raise EngineError("empty rule base")
    # clipping each consequent then taking the max equals clipping at the max firing
    normal = abnormal = 0.0
    for rule in rules.rules:
        f = firings.get(rule.id, 0.0)
        if rule.consequent == "normal":
            normal = max(normal, f)
        else:
            abnormal = max(abnormal, f)
    score = centroid(normal, abnormal)
    strengths = {rule.id: float(firings.get(rule.id, 0.0)) for rule in rules.rules}
    return Assessment(score, "abnormal" if score >= 0.5 else "normal", strengths, confidence)


class Evaluator:
    """Caches shapes per snapshot version; cheap to call once per window."""

    def __init__(self):
        self._membership = None
        self._shapes: dict[tuple[str, TimeBucketKey], MembershipFunctionSet] = {}
        self._refs: dict[str, MembershipFunctionSet | None] = {}

    def _sync(self, snap: KBSnapshot):
        # membership mappings are never mutated, so identity marks a version
        if self._membership is not snap.membership:
            self._membership = snap.membership
            self._shapes.clear()
            self._refs.clear()

    def shapes(self, snap: KBSnapshot, var: str, bucket: TimeBucketKey) -> MembershipFunctionSet | None:
        self._sync(snap)
        key = (var, bucket)
        if key not in self._shapes:
            bs = snap.get(var, bucket)
            self._shapes[key] = None if bs is None else shapes_from_boundaries(snap.variable(var), bs)
        return self._shapes[key]

    def reference(self, snap: KBSnapshot, var: str) -> MembershipFunctionSet | None:
        self._sync(snap)
        if var not in self._refs:
            self._refs[var] = reference_shapes(snap.variable(var), snap)
        return self._refs[var]

    def assess(self, metrics: Mapping[str, float], bucket: TimeBucketKey, snap: KBSnapshot,
               timestamp: float | None = None) -> Assessment:
        rules = snap.rules
        referenced = sorted(rules.variables())
        inputs = []
        baselines = {}
        unlearned = False
        for var in referenced:
            mfs = self.shapes(snap, var, bucket)
            if mfs is None:
                unlearned = True
                baselines[var] = UNLEARNED
                continue
            if var not in metrics:
                raise EngineError(f"no metric value for variable {var!r}")
            inputs.append(fuzzify(metrics[var], mfs))
            baselines[var] = baseline_class(var, bucket, snap, self.reference(snap, var))
        confidence = Confidence.UNLEARNED_BUCKET if unlearned else Confidence.LEARNED
        firings = evaluate_rules(inputs, baselines, rules)
        result = defuzzify(firings, rules, confidence)
        return replace(result, bucket=bucket, timestamp=timestamp)


def assess_window(metrics: Mapping[str, float], bucket: TimeBucketKey, snap: KBSnapshot,
                  timestamp: float | None = None) -> Assessment:
    return Evaluator().assess(metrics, bucket, snap, timestamp)


__all__ = [
    "Assessment", "Confidence", "EngineError", "Evaluator", "FuzzifiedValue", "MembershipFunctionSet",
    "UNLEARNED", "assess_window", "baseline_class", "centroid", "classify_center", "defuzzify",
    "evaluate_rules", "fuzzify", "reference_shapes", "shapes_from_boundaries",
]
