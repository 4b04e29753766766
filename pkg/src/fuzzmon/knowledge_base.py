"""Dual knowledge base: expert rules plus learned, time-bucketed boundaries.

The live ``KnowledgeBase`` has a single writer (the learner) and any number
of readers. Readers call ``snapshot()`` and get an immutable view; commits
swap in a fresh membership mapping, so a snapshot never sees a later write
and never sees a half-written entry.
"""

from __future__ import annotations

import math
import os
import tempfile
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

from . import rules as rule_dsl
from .rules import RuleBase

FORMAT_HEADER = "fuzzmon-kb v1"
DECIMALS = 6


class KnowledgeBaseError(ValueError):
    pass


def quantize(x: float) -> float:
    """Round to the persistence precision so save/load is exact."""
    return float(f"{x:.{DECIMALS}f}")


def _fmt(x: float) -> str:
    s = f"{x:.{DECIMALS}f}"
    return "0.000000" if s == "-0.000000" else s


class DayClass(str, Enum):
    WEEKDAY = "weekday"
    WEEKEND = "weekend"


@dataclass(frozen=True, order=True)
class TimeBucketKey:
    hour_of_day: int
    day_class: DayClass

    def __post_init__(self):
        if not (isinstance(self.hour_of_day, int) and 0 <= self.hour_of_day <= 23):
            raise KnowledgeBaseError(f"hour_of_day must be an integer 0-23, got {self.hour_of_day!r}")
        object.__setattr__(self, "day_class", DayClass(self.day_class))

    @classmethod
    def from_timestamp(cls, ts: float) -> "TimeBucketKey":
        dt = datetime.fromtimestamp(ts, tz=timezone.utc)
        day = DayClass.WEEKEND if dt.weekday() >= 5 else DayClass.WEEKDAY
        return cls(dt.hour, day)

    def __str__(self) -> str:
        return f"{self.hour_of_day:02d} {self.day_class.value}"


def all_buckets() -> list[TimeBucketKey]:
    return [TimeBucketKey(h, d) for d in DayClass for h in range(24)]


class BucketScheme(str, Enum):
    """How timestamps map to buckets.

    ``hour-daytype`` is hour of day times weekday/weekend (48 buckets);
    ``hour`` pools all days into the weekday slot (24 buckets).
    """

    HOUR_DAYTYPE = "hour-daytype"
    HOUR = "hour"

    def key_for(self, ts: float) -> TimeBucketKey:
        key = TimeBucketKey.from_timestamp(ts)
        if self is BucketScheme.HOUR:
            return TimeBucketKey(key.hour_of_day, DayClass.WEEKDAY)
        return key


@dataclass(frozen=True)
class LinguisticVariable:
    name: str
    domain_min: float
    domain_max: float
    terms: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "domain_min", quantize(self.domain_min))
        object.__setattr__(self, "domain_max", quantize(self.domain_max))
        if not rule_dsl._TOKEN_RE.fullmatch(self.name) or self.name.upper() in rule_dsl.KEYWORDS:
            raise KnowledgeBaseError(f"invalid variable name {self.name!r}")
        if not self.domain_min < self.domain_max:
            raise KnowledgeBaseError(f"{self.name}: domain_min must be < domain_max")
        if len(self.terms) < 2:
            raise KnowledgeBaseError(f"{self.name}: need at least two terms")
        if len(set(self.terms)) != len(self.terms):
            raise KnowledgeBaseError(f"{self.name}: duplicate term names")
        for t in self.terms:
            if not rule_dsl._TOKEN_RE.fullmatch(t) or t.upper() in rule_dsl.KEYWORDS:
                raise KnowledgeBaseError(f"{self.name}: invalid term name {t!r}")


@dataclass(frozen=True)
class BoundarySet:
    """Learned crossover points between adjacent terms of one variable.

    ``mean`` is the running mean of every sample that contributed, used to
    classify the bucket's typical level.
    """

    boundaries: tuple[float, ...]
    sample_count: int = 0
    mean: float | None = None

    def __post_init__(self):
        b = tuple(quantize(float(x)) for x in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        if self.mean is not None:
            object.__setattr__(self, "mean", quantize(float(self.mean)))
        if not b:
            raise KnowledgeBaseError("boundary set is empty")
        if not all(math.isfinite(x) for x in b):
            raise KnowledgeBaseError("boundaries must be finite")
        if any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise KnowledgeBaseError(f"boundaries not increasing: {list(b)}")
        if not (isinstance(self.sample_count, int) and self.sample_count >= 0):
            raise KnowledgeBaseError("sample_count must be a nonnegative integer")

    def check_domain(self, var: LinguisticVariable) -> None:
        if len(self.boundaries) != len(var.terms) - 1:
            raise KnowledgeBaseError(
                f"{var.name}: expected {len(var.terms) - 1} boundaries, got {len(self.boundaries)}")
        for x in self.boundaries:
            if not var.domain_min <= x <= var.domain_max:
                raise KnowledgeBaseError(
                    f"{var.name}: boundary {x} outside domain [{var.domain_min}, {var.domain_max}]")


@dataclass(frozen=True)
class KBSnapshot:
    """Immutable view of the knowledge base at one version."""

    variables: tuple[LinguisticVariable, ...]
    rules: RuleBase
    membership: Mapping[tuple[str, TimeBucketKey], BoundarySet]
    version: int

    def variable(self, name: str) -> LinguisticVariable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KnowledgeBaseError(f"unknown variable {name!r}")

    def get(self, var: str, bucket: TimeBucketKey) -> BoundarySet | None:
        return self.membership.get((var, bucket))

    def __eq__(self, other):
        if not isinstance(other, KBSnapshot):
            return NotImplemented
        return (self.variables == other.variables and self.rules == other.rules
                and dict(self.membership) == dict(other.membership) and self.version == other.version)

    __hash__ = None


class KnowledgeBase:
    """Live, versioned knowledge base. One writer, many snapshot readers."""

    def __init__(self, variables: Iterable[LinguisticVariable], rules: RuleBase | None = None,
                 membership: Mapping[tuple[str, TimeBucketKey], BoundarySet] | None = None,
                 version: int = 0):
        self.variables = tuple(sorted(variables, key=lambda v: v.name))
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise KnowledgeBaseError("duplicate variable names")
        self.rules = rules if rules is not None else RuleBase()
        diags = rule_dsl.validate(self.rules, self.variables) if self.rules.rules else []
        if diags:
            raise KnowledgeBaseError("rule/variable mismatch: " + "; ".join(map(str, diags)))
        by_name = {v.name: v for v in self.variables}
        entries = dict(membership or {})
        for (var, bucket), bs in entries.items():
            if var not in by_name:
                raise KnowledgeBaseError(f"membership entry for unknown variable {var!r}")
            bs.check_domain(by_name[var])
        if version < 0:
            raise KnowledgeBaseError("version must be nonnegative")
        self._by_name = by_name
        self._lock = threading.Lock()
        self._snap = KBSnapshot(self.variables, self.rules, MappingProxyType(entries), version)

    @property
    def version(self) -> int:
        return self._snap.version

    @property
    def membership(self) -> Mapping[tuple[str, TimeBucketKey], BoundarySet]:
        return self._snap.membership

    def variable(self, name: str) -> LinguisticVariable:
        try:
            return self._by_name[name]
        except KeyError:
            raise KnowledgeBaseError(f"unknown variable {name!r}") from None

    def snapshot(self) -> KBSnapshot:
        # the snapshot object is never mutated; commits replace it
        return self._snap

    def commit_boundaries(self, var: str, bucket: TimeBucketKey, bs: BoundarySet) -> int:
        """Create or replace one entry; returns the new version."""
        variable = self.variable(var)
        bs.check_domain(variable)
        with self._lock:
            old = self._snap
            entries = dict(old.membership)
            entries[(var, bucket)] = bs
            self._snap = KBSnapshot(old.variables, old.rules, MappingProxyType(entries), old.version + 1)
            return self._snap.version

    def __eq__(self, other):
        if not isinstance(other, KnowledgeBase):
            return NotImplemented
        return self._snap == other._snap

    __hash__ = None

    @classmethod
    def from_snapshot(cls, snap: KBSnapshot) -> "KnowledgeBase":
        return cls(snap.variables, snap.rules, snap.membership, snap.version)


def snapshot(kb: KnowledgeBase) -> KBSnapshot:
    return kb.snapshot()


def commit_boundaries(kb: KnowledgeBase, var: str, bucket: TimeBucketKey, bs: BoundarySet) -> int:
    return kb.commit_boundaries(var, bucket, bs)


# --- persistence -----------------------------------------------------------

def dumps(kb: KnowledgeBase | KBSnapshot) -> str:
    snap = kb.snapshot() if isinstance(kb, KnowledgeBase) else kb
    lines = [FORMAT_HEADER, f"version={snap.version}", "[variables]"]
    for v in sorted(snap.variables, key=lambda v: v.name):
        lines.append(f"{v.name} {_fmt(v.domain_min)} {_fmt(v.domain_max)} {','.join(v.terms)}")
    lines.append("[rules]")
    lines.extend(rule_dsl.pretty_print(snap.rules).splitlines())
    lines.append("[membership]")
    records = []
    for (var, bucket), bs in snap.membership.items():
        rec = f"{var} {bucket} {';'.join(_fmt(b) for b in bs.boundaries)} n={bs.sample_count}"
        if bs.mean is not None:
            rec += f" mean={_fmt(bs.mean)}"
        records.append(rec)
    lines.extend(sorted(records))
    return "\n".join(lines) + "\n"


def save(kb: KnowledgeBase | KBSnapshot, path) -> None:
    """Write the canonical text form atomically (temp file + rename)."""
    path = Path(path)
    text = dumps(kb)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    except OSError as exc:
        raise KnowledgeBaseError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise KnowledgeBaseError(f"cannot write {path}: {exc}") from exc


def _parse_real(tok: str, lineno: int) -> float:
    try:
        x = float(tok)
    except ValueError:
        raise KnowledgeBaseError(f"line {lineno}: malformed number {tok!r}") from None
    if not math.isfinite(x):
        raise KnowledgeBaseError(f"line {lineno}: non-finite number {tok!r}")
    return x


def loads(text: str) -> KnowledgeBase:
    lines = text.splitlines()
    if not lines or lines[0].strip() != FORMAT_HEADER:
        first = lines[0].strip() if lines else ""
        if first.startswith("fuzzmon-kb"):
            raise KnowledgeBaseError(f"unsupported format version: {first!r}")
        raise KnowledgeBaseError(f"missing header {FORMAT_HEADER!r}")
    version = 0
    section = None
    variables: list[LinguisticVariable] = []
    rule_lines: list[tuple[int, str]] = []
    membership: dict[tuple[str, TimeBucketKey], BoundarySet] = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line in ("[variables]", "[rules]", "[membership]"):
            section = line[1:-1]
            continue
        if section is None:
            if line.startswith("version="):
                try:
                    version = int(line[len("version="):])
                except ValueError:
                    raise KnowledgeBaseError(f"line {lineno}: malformed version") from None
                continue
            raise KnowledgeBaseError(f"line {lineno}: record outside any section")
        if section == "variables":
            parts = line.split()
            if len(parts) != 4:
                raise KnowledgeBaseError(f"line {lineno}: expected 'name min max terms'")
            try:
                variables.append(LinguisticVariable(parts[0], _parse_real(parts[1], lineno),
                                                    _parse_real(parts[2], lineno),
                                                    tuple(parts[3].split(","))))
            except KnowledgeBaseError as exc:
                raise KnowledgeBaseError(f"line {lineno}: {exc}") from None
        elif section == "rules":
            rule_lines.append((lineno, raw))
        else:
            parts = line.split()
            if len(parts) not in (5, 6):
                raise KnowledgeBaseError(f"line {lineno}: expected 'var hour day_class b1;b2;... n=<count>'")
            var, hour, day, bounds, count = parts[:5]
            try:
                key = TimeBucketKey(int(hour), DayClass(day))
            except (ValueError, KnowledgeBaseError):
                raise KnowledgeBaseError(f"line {lineno}: malformed bucket {hour} {day}") from None
            if not count.startswith("n="):
                raise KnowledgeBaseError(f"line {lineno}: expected n=<sample_count>")
            try:
                n = int(count[2:])
            except ValueError:
                raise KnowledgeBaseError(f"line {lineno}: malformed sample count") from None
            mean = None
            if len(parts) == 6:
                if not parts[5].startswith("mean="):
                    raise KnowledgeBaseError(f"line {lineno}: expected mean=<value>")
                mean = _parse_real(parts[5][5:], lineno)
            if (var, key) in membership:
                raise KnowledgeBaseError(f"line {lineno}: duplicate entry for {var} {key}")
            try:
                membership[(var, key)] = BoundarySet(
                    tuple(_parse_real(b, lineno) for b in bounds.split(";")), n, mean)
            except KnowledgeBaseError as exc:
                raise KnowledgeBaseError(f"line {lineno}: {exc}") from None

    rule_text = "\n".join(raw for _, raw in rule_lines)
    try:
        rb = rule_dsl.parse(rule_text)
    except rule_dsl.RuleSyntaxError as exc:
        src_line = rule_lines[exc.line - 1][0]
        raise KnowledgeBaseError(f"line {src_line}: {exc.message}") from None
    _check_rule_refs(rb, variables)
    try:
        return KnowledgeBase(variables, rb, membership, version)
    except KnowledgeBaseError as exc:
        raise KnowledgeBaseError(str(exc)) from None


def _check_rule_refs(rb: RuleBase, variables: list[LinguisticVariable]) -> None:
    declared = {v.name: v.terms for v in variables}
    for rule in rb.rules:
        for clause in rule.antecedents:
            terms = declared.get(clause.variable)
            if terms is None:
                raise KnowledgeBaseError(f"rule {rule.id}: unknown variable {clause.variable!r}")
            if clause.term not in terms:
                raise KnowledgeBaseError(f"rule {rule.id}: unknown term {clause.term!r} for {clause.variable!r}")


def load(path) -> KnowledgeBase:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise KnowledgeBaseError(f"knowledge base file not found: {path}") from None
    return loads(text)
