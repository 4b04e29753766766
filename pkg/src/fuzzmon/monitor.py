"""Learning and monitoring modes over one metric stream, plus alarm dispatch.

The learner is the only writer of the knowledge base; the evaluator reads
snapshots. When both modes run they live on separate threads fed from the
same record stream, so which KB version a window is judged against depends
on scheduling. Every window's version goes to the run log, and ``replay``
reproduces the alarm stream from that sequence.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import queue
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

from . import knowledge_base as kbmod
from . import rules as rule_dsl
from .engine import Assessment, Confidence, Evaluator
from .ingestion import (AnomalyScenario, MetricRecord, MetricWindow, metric_for, read_csv,
                        read_scenarios, windowize)
from .knowledge_base import BucketScheme, KBSnapshot, KnowledgeBase, LinguisticVariable
from .learning import LearnerConfig, LearnerStats, LearningError, SampleWindow, learn_tick

log = logging.getLogger(__name__)

# small batches and a short queue keep the two modes close in trace time
_BATCH = 60
_QUEUE_DEPTH = 2
_DONE = object()


class ConfigError(ValueError):
    pass


class Severity(str, Enum):
    INFO = "info"
    WARNING = "warning"
    CRITICAL = "critical"

    @property
    def rank(self) -> int:
        return _RANK[self]


_RANK = {Severity.INFO: 0, Severity.WARNING: 1, Severity.CRITICAL: 2}


def default_variables() -> list[LinguisticVariable]:
    return [
        LinguisticVariable("bandwidth", 0.0, 12_500_000.0, ("low", "normal", "high")),
        LinguisticVariable("packets", 0.0, 100_000.0, ("low", "normal", "extreme")),
        LinguisticVariable("util", 0.0, 1.0, ("low", "normal", "extreme")),
    ]


def shipped_rules(name: str = "expert.rules") -> str:
    return resources.files("fuzzmon").joinpath("data", name).read_text(encoding="utf-8")


@dataclass
class MonitorConfig:
    window_len: float = 60.0
    bucket_scheme: BucketScheme = BucketScheme.HOUR_DAYTYPE
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    # samples of one learning period feed one learn tick per variable
    learn_period: float = 3600.0
    # "records" learns from raw samples, "windows" from window means
    learn_source: str = "records"
    learning: bool = True
    monitoring: bool = True
    warn_threshold: float = 0.5
    crit_threshold: float = 0.75
    notifier_command: str | None = None
    kb_path: Path | None = None
    kb_out: Path | None = None
    rules_path: Path | None = None
    input_path: Path | None = None
    scenarios_path: Path | None = None
    alarm_log: Path | None = None
    run_log: Path | None = None
    # 0 replays as fast as possible; otherwise trace seconds per wall second
    pace: float = 0.0

    def validate(self) -> None:
        if not 0 < self.warn_threshold < self.crit_threshold <= 1:
            raise ConfigError("thresholds must satisfy 0 < warn_threshold < crit_threshold <= 1")
        if not self.window_len > 0:
            raise ConfigError("window_len must be positive")
        if not self.learn_period > 0 or 3600 % self.learn_period:
            raise ConfigError("learn_period must be a positive divisor of 3600 seconds")
        if self.learn_source not in ("records", "windows"):
            raise ConfigError("learn_source must be 'records' or 'windows'")
        if self.pace < 0:
            raise ConfigError("pace must be nonnegative")


_LEARNER_KEYS = {f.name for f in dataclasses.fields(LearnerConfig)}
_PATH_KEYS = {"kb_path", "kb_out", "rules_path", "input_path", "scenarios_path", "alarm_log", "run_log"}


def _coerce(key: str, raw: str):
    raw = raw.strip()
    if key in _PATH_KEYS:
        return Path(raw) if raw else None
    if key in ("learning", "monitoring"):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if key == "bucket_scheme":
        try:
            return BucketScheme(raw)
        except ValueError:
            raise ConfigError(f"bucket_scheme must be one of {[s.value for s in BucketScheme]}") from None
    if key in ("learn_source",):
        return raw
    if key == "notifier_command":
        return raw or None
    if key == "min_samples":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if key == "stability_tol" and raw.lower() in ("", "none"):
        return None
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None


def config_from_mapping(values: dict[str, str], base: MonitorConfig | None = None) -> MonitorConfig:
    cfg = dataclasses.replace(base) if base is not None else MonitorConfig()
    own = {f.name for f in dataclasses.fields(MonitorConfig)} - {"learner"}
    learner_kw = {}
    for key, raw in values.items():
        if key in _LEARNER_KEYS:
            learner_kw[key] = _coerce(key, raw)
        elif key in own:
            setattr(cfg, key, _coerce(key, raw))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if learner_kw:
        try:
            cfg.learner = dataclasses.replace(cfg.learner, **learner_kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def parse_config(text: str, base: MonitorConfig | None = None) -> MonitorConfig:
    """``key = value`` lines; lines starting with ``#`` are comments."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value")
        key, raw = line.split("=", 1)
        values[key.strip()] = raw
    return config_from_mapping(values, base)


def load_config(path) -> MonitorConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# --- alarms ------------------------------------------------------------------

def severity_for(score: float, cfg: MonitorConfig) -> Severity:
    if score >= cfg.crit_threshold:
        return Severity.CRITICAL
    if score >= cfg.warn_threshold:
        return Severity.WARNING
    return Severity.INFO


@dataclass(frozen=True)
class Alarm:
    timestamp: float
    score: float
    severity: Severity
    assessment: Assessment
    message: str
    kb_version: int = 0

    def to_line(self) -> str:
        strengths = ", ".join(f'"{k}": {v:.6f}' for k, v in sorted(self.assessment.rule_strengths.items()))
        bucket = str(self.assessment.bucket) if self.assessment.bucket is not None else ""
        ts = int(self.timestamp) if float(self.timestamp).is_integer() else self.timestamp
        return ("{" + f'"timestamp": {json.dumps(ts)}, "score": {self.score:.6f}, '
                f'"severity": "{self.severity.value}", "kb_version": {self.kb_version}, '
                f'"confidence": "{self.assessment.confidence.value}", "bucket": {json.dumps(bucket)}, '
                f'"rule_strengths": {{{strengths}}}, "message": {json.dumps(self.message)}' + "}")


def parse_alarm_line(line: str) -> dict:
    rec = json.loads(line)
    for key in ("timestamp", "score", "severity", "rule_strengths", "kb_version"):
        if key not in rec:
            raise ValueError(f"alarm record missing {key!r}")
    Severity(rec["severity"])
    return rec


def run_notifier(template: str, alarm: Alarm, timeout: float = 10.0) -> bool:
    """Run the operator's notifier command once; failures are logged, not raised."""
    try:
        cmd = template.format(score=f"{alarm.score:.6f}", timestamp=int(alarm.timestamp),
                              severity=alarm.severity.value)
        subprocess.run(shlex.split(cmd), check=True, timeout=timeout,
                       stdout=subprocess.DEVNULL, stderr=subprocess.PIPE)
        return True
    except (OSError, ValueError, KeyError, IndexError, subprocess.SubprocessError) as exc:
        log.error("notifier command failed: %s", exc)
        return False


def dispatch(assessment: Assessment, cfg: MonitorConfig, *, kb_version: int = 0, warmup: bool = False,
             sink=None, notifier: Callable[[str, Alarm], object] | None = run_notifier) -> Alarm | None:
    """Turn an assessment into an alarm per the configured tiers.

    Below ``warn_threshold`` nothing is emitted. Unlearned buckets and the
    warm-up period cap severity at warning. Critical alarms call the
    notifier once.
    """
    sev = severity_for(assessment.score, cfg)
    if sev is Severity.INFO:
        return None
    if sev is Severity.CRITICAL and (warmup or assessment.confidence is Confidence.UNLEARNED_BUCKET):
        sev = Severity.WARNING
    fired = [str(k) for k, v in sorted(assessment.rule_strengths.items()) if v > 0]
    ts = assessment.timestamp if assessment.timestamp is not None else 0
    where = f" in bucket {assessment.bucket}" if assessment.bucket is not None else ""
    msg = f"{sev.value}: score {assessment.score:.6f}{where}; rules fired: {','.join(fired) or 'none'}"
    alarm = Alarm(ts, assessment.score, sev, assessment, msg, kb_version)
    if sink is not None:
        sink.write(alarm.to_line() + "\n")
    if sev is Severity.CRITICAL and cfg.notifier_command and notifier is not None:
        notifier(cfg.notifier_command, alarm)
    return alarm


# --- learner -----------------------------------------------------------------

class PeriodLearner:
    """Collects samples per learning period and commits one tick per variable."""

    def __init__(self, kb: KnowledgeBase, cfg: MonitorConfig,
                 on_commit: Callable[[KBSnapshot], None] | None = None):
        self.kb = kb
        self.cfg = cfg
        self.stats = LearnerStats()
        self.on_commit = on_commit
        self._vars = [(v.name, metric_for(v.name)) for v in kb.variables]
        self._period = None
        self._values: dict[str, list[float]] = {name: [] for name, _ in self._vars}

    def _roll(self, ts: float) -> None:
        idx = math.floor(ts / self.cfg.learn_period)
        if idx != self._period:
            if self._period is not None:
                self.flush()
            self._period = idx

    def feed_record(self, r: MetricRecord) -> None:
        self._roll(r.timestamp)
        for name, metric in self._vars:
            self._values[name].append(getattr(r, metric))

    def feed_window(self, w: MetricWindow) -> None:
        if w.is_gap:
            return
        self._roll(w.start)
        for name, metric in self._vars:
            self._values[name].append(w.values[metric])

    def flush(self) -> None:
        if self._period is None:
            return
        bucket = self.cfg.bucket_scheme.key_for(self._period * self.cfg.learn_period)
        for name, _ in self._vars:
            values = self._values[name]
            self._values[name] = []
            if not values:
                continue
            window = SampleWindow(name, bucket, values, self.cfg.learn_period)
            try:
                bs = learn_tick(self.kb.snapshot(), window, self.cfg.learner)
            except LearningError as exc:
                self.stats.drop(type(exc).__name__)
                log.debug("dropped learn tick for %s %s: %s", name, bucket, exc)
                continue
            self.kb.commit_boundaries(name, bucket, bs)
            self.stats.commits += 1
            if self.on_commit is not None:
                self.on_commit(self.kb.snapshot())


# --- evaluation -------------------------------------------------------------

@dataclass
class WindowResult:
    start: float
    score: float
    severity: Severity
    kb_version: int
    confidence: Confidence
    gap: bool
    alarm: Alarm | None = None

    def to_line(self) -> str:
        return json.dumps({"window_start": int(self.start) if float(self.start).is_integer() else self.start,
                           "kb_version": self.kb_version, "score": round(self.score, 6),
                           "severity": self.severity.value, "confidence": self.confidence.value,
                           "gap": self.gap}, sort_keys=True)


@dataclass
class RunReport:
    windows: int = 0
    gaps: int = 0
    alarms: dict[str, int] = field(default_factory=lambda: {"warning": 0, "critical": 0})
    learner_commits: int = 0
    dropped_ticks: int = 0
    kb_version: int = 0
    detection: dict | None = None
    results: list[WindowResult] = field(default_factory=list, repr=False)
    alarm_lines: list[str] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        out = {"windows": self.windows, "gaps": self.gaps, "alarms": dict(self.alarms),
               "learner_commits": self.learner_commits, "dropped_ticks": self.dropped_ticks,
               "kb_version": self.kb_version}
        if self.detection is not None:
            out["detection"] = self.detection
        return out


class WindowJudge:
    """Evaluates windows against the current snapshot and logs the outcome."""

    def __init__(self, kb: KnowledgeBase | None, cfg: MonitorConfig, *, alarm_sink=None, run_sink=None,
                 notifier=run_notifier, snapshot_for: Callable[[int], KBSnapshot] | None = None):
        self.kb = kb
        self.cfg = cfg
        self.evaluator = Evaluator()
        self.alarm_sink = alarm_sink
        self.run_sink = run_sink
        self.notifier = notifier
        self.snapshot_for = snapshot_for
        self.lock = threading.Lock()
        self.report = RunReport()

    def _warm(self, snap: KBSnapshot, bucket) -> bool:
        need = self.cfg.learner.min_samples
        for var in snap.rules.variables():
            bs = snap.get(var, bucket)
            if bs is None or bs.sample_count < need:
                return False
        return True

    def judge(self, w: MetricWindow, snap: KBSnapshot | None = None, index: int | None = None) -> WindowResult:
        if snap is None:
            snap = self.snapshot_for(index) if self.snapshot_for is not None else self.kb.snapshot()
        metrics = {var: w.metric(metric_for(var)) for var in snap.rules.variables()}
        a = self.evaluator.assess(metrics, w.bucket, snap, w.start)
        warmup = self.cfg.learning and not self._warm(snap, w.bucket)
        with self.lock:
            alarm = dispatch(a, self.cfg, kb_version=snap.version, warmup=warmup,
                             sink=_ListSink(self.report.alarm_lines, self.alarm_sink), notifier=self.notifier)
            sev = alarm.severity if alarm is not None else Severity.INFO
            res = WindowResult(w.start, a.score, sev, snap.version, a.confidence, w.is_gap, alarm)
            self.report.windows += 1
            self.report.gaps += w.is_gap
            if alarm is not None:
                self.report.alarms[sev.value] += 1
            self.report.results.append(res)
            if self.run_sink is not None:
                self.run_sink.write(res.to_line() + "\n")
        return res


class _ListSink:
    def __init__(self, lines: list[str], also=None):
        self.lines = lines
        self.also = also

    def write(self, text: str) -> None:
        self.lines.append(text.rstrip("\n"))
        if self.also is not None:
            self.also.write(text)


def build_kb(cfg: MonitorConfig) -> KnowledgeBase:
    """Load the configured KB, or start an empty one from the default variables."""
    rules_text = None
    if cfg.rules_path is not None:
        rules_text = Path(cfg.rules_path).read_text(encoding="utf-8")
    if cfg.kb_path is not None and Path(cfg.kb_path).exists():
        kb = kbmod.load(cfg.kb_path)
        if rules_text is None:
            return kb
        variables, membership, version = kb.variables, kb.membership, kb.version
    else:
        variables, membership, version = default_variables(), {}, 0
        if rules_text is None:
            rules_text = shipped_rules()
    rb = rule_dsl.parse(rules_text)
    _check_rules(rb, variables)
    return KnowledgeBase(variables, rb, membership, version)


def _check_rules(rb, variables) -> None:
    diags = rule_dsl.validate(rb, variables)
    if diags:
        raise kbmod.KnowledgeBaseError("rules do not match the knowledge base: " + "; ".join(map(str, diags)))


def _scenario_detection(results: Sequence[WindowResult], scenarios: Sequence[AnomalyScenario],
                        cfg: MonitorConfig) -> dict:
    per = []
    clean = [r for r in results if not any(s.overlaps(r.start, r.start + cfg.window_len) for s in scenarios)]
    for s in scenarios:
        inside = [r for r in results if s.covers(r.start, r.start + cfg.window_len)]
        hits = sum(r.score >= cfg.crit_threshold for r in inside)
        per.append({"kind": s.kind.value, "start": s.start, "duration": s.duration,
                    "windows": len(inside), "true_positives": sum(r.severity is Severity.CRITICAL for r in inside),
                    "score_at_crit": hits, "detection_rate": hits / len(inside) if inside else 0.0})
    crit = sum(r.severity is Severity.CRITICAL for r in clean)
    warn = sum(r.severity is Severity.WARNING for r in clean)
    return {"scenarios": per, "clean_windows": len(clean), "false_positives_critical": crit,
            "false_positives_warning": warn,
            "false_critical_rate": crit / len(clean) if clean else 0.0}


def run_monitor(cfg: MonitorConfig, records: Iterable[MetricRecord] | None = None,
                kb: KnowledgeBase | None = None, scenarios: Sequence[AnomalyScenario] | None = None,
                notifier=run_notifier) -> RunReport:
    """Run learning and/or monitoring over one stream and report."""
    cfg.validate()
    if kb is None:
        kb = build_kb(cfg)
    if cfg.monitoring:
        _check_rules(kb.rules, kb.variables)
    if records is None:
        if cfg.input_path is None:
            raise ConfigError("no input trace configured")
        records = read_csv(cfg.input_path)
    if scenarios is None and cfg.scenarios_path is not None:
        scenarios = read_scenarios(cfg.scenarios_path)

    alarm_fh = open(cfg.alarm_log, "a", encoding="utf-8") if cfg.alarm_log else None
    run_fh = open(cfg.run_log, "w", encoding="utf-8") if cfg.run_log else None
    try:
        learner = PeriodLearner(kb, cfg) if cfg.learning else None
        judge = WindowJudge(kb, cfg, alarm_sink=alarm_fh, run_sink=run_fh, notifier=notifier)
        stream = _paced(records, cfg.pace)
        if learner is not None and cfg.monitoring:
            _run_concurrent(stream, learner, judge, cfg)
        elif learner is not None:
            _run_learner(stream, learner, cfg)
        elif cfg.monitoring:
            for w in windowize(stream, cfg.window_len, cfg.bucket_scheme):
                judge.judge(w)
    finally:
        if alarm_fh:
            alarm_fh.close()
        if run_fh:
            run_fh.close()

    report = judge.report
    if learner is not None:
        report.learner_commits = learner.stats.commits
        report.dropped_ticks = learner.stats.dropped
    report.kb_version = kb.version
    if scenarios:
        report.detection = _scenario_detection(report.results, scenarios, cfg)
    out = cfg.kb_out or (cfg.kb_path if cfg.learning else None)
    if out is not None:
        kbmod.save(kb, out)
    return report


def _paced(records: Iterable[MetricRecord], pace: float) -> Iterator[MetricRecord]:
    if pace <= 0:
        yield from records
        return
    t0 = None
    wall0 = time.monotonic()
    for r in records:
        if t0 is None:
            t0 = r.timestamp
        wait = (r.timestamp - t0) / pace - (time.monotonic() - wall0)
        if wait > 0:
            time.sleep(wait)
        yield r


def _run_learner(stream: Iterable[MetricRecord], learner: PeriodLearner, cfg: MonitorConfig) -> None:
    if cfg.learn_source == "windows":
        for w in windowize(stream, cfg.window_len, cfg.bucket_scheme):
            learner.feed_window(w)
    else:
        for r in stream:
            learner.feed_record(r)
    learner.flush()


def _drain(q: queue.Queue) -> Iterator[MetricRecord]:
    while True:
        batch = q.get()
        if batch is _DONE:
            return
        yield from batch


def _run_concurrent(stream: Iterable[MetricRecord], learner: PeriodLearner, judge: WindowJudge,
                    cfg: MonitorConfig) -> None:
    learn_q: queue.Queue = queue.Queue(maxsize=_QUEUE_DEPTH)
    eval_q: queue.Queue = queue.Queue(maxsize=_QUEUE_DEPTH)
    errors: list[BaseException] = []

    def learn_worker():
        try:
            _run_learner(_drain(learn_q), learner, cfg)
        except BaseException as exc:  # surfaced on the main thread
            errors.append(exc)
            while learn_q.get() is not _DONE:
                pass

    def eval_worker():
        try:
            for w in windowize(_drain(eval_q), cfg.window_len, cfg.bucket_scheme):
                judge.judge(w)
        except BaseException as exc:
            errors.append(exc)
            while eval_q.get() is not _DONE:
                pass

    threads = [threading.Thread(target=learn_worker, name="fuzzmon-learner", daemon=True),
               threading.Thread(target=eval_worker, name="fuzzmon-evaluator", daemon=True)]
    for t in threads:
        t.start()
    try:
        batch: list[MetricRecord] = []
        for r in stream:
            batch.append(r)
            if len(batch) >= _BATCH:
                learn_q.put(batch)
                eval_q.put(batch)
                batch = []
        if batch:
            learn_q.put(batch)
            eval_q.put(batch)
    finally:
        learn_q.put(_DONE)
        eval_q.put(_DONE)
        for t in threads:
            t.join()
    if errors:
        raise errors[0]


def replay(records: Sequence[MetricRecord], kb: KnowledgeBase | KBSnapshot, cfg: MonitorConfig,
           versions: Sequence[int]) -> list[str]:
    """Re-derive the alarm lines of a learning run from its recorded versions.

    The learner runs first, synchronously, on a copy of the starting KB and
    keeps every snapshot it produces; window ``i`` is then judged against
    the snapshot of ``versions[i]``.
    """
    start = kb.snapshot() if isinstance(kb, KnowledgeBase) else kb
    work = KnowledgeBase.from_snapshot(start)
    history = {start.version: start}
    if cfg.learning:
        learner = PeriodLearner(work, cfg, on_commit=lambda s: history.__setitem__(s.version, s))
        _run_learner(records, learner, cfg)
    judge = WindowJudge(None, cfg, notifier=None)
    for i, w in enumerate(windowize(records, cfg.window_len, cfg.bucket_scheme)):
        try:
            snap = history[versions[i]]
        except (IndexError, KeyError):
            raise ValueError(f"window {i}: no knowledge base at recorded version") from None
        judge.judge(w, snap)
    return judge.report.alarm_lines


def read_run_log(path) -> list[int]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(int(json.loads(line)["kb_version"]))
    return out
