"""Metric records: CSV replay, tumbling-window aggregation, synthetic traces."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .knowledge_base import BucketScheme, TimeBucketKey

METRICS = ("packets_per_sec", "bytes_per_sec", "utilization")
CSV_HEADER = "timestamp," + ",".join(METRICS)

# rule variable name -> record field
VARIABLE_METRICS = {
    "packets": "packets_per_sec",
    "traffic": "packets_per_sec",
    "packets_per_sec": "packets_per_sec",
    "bandwidth": "bytes_per_sec",
    "bytes": "bytes_per_sec",
    "bytes_per_sec": "bytes_per_sec",
    "util": "utilization",
    "utilization": "utilization",
}

# 2024-01-01 00:00:00 UTC, a Monday
DEFAULT_START = 1704067200


class IngestError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def metric_for(variable: str) -> str:
    try:
        return VARIABLE_METRICS[variable]
    except KeyError:
        raise IngestError(f"variable {variable!r} does not map to a metric "
                          f"(known: {', '.join(sorted(VARIABLE_METRICS))})") from None


@dataclass(frozen=True, slots=True)
class MetricRecord:
    timestamp: float
    packets_per_sec: float
    bytes_per_sec: float
    utilization: float

    def check(self) -> None:
        if not all(math.isfinite(x) for x in (self.timestamp, self.packets_per_sec,
                                               self.bytes_per_sec, self.utilization)):
            raise IngestError("non-finite value")
        if self.packets_per_sec < 0 or self.bytes_per_sec < 0:
            raise IngestError("negative rate")
        if not 0.0 <= self.utilization <= 1.0:
            raise IngestError(f"utilization {self.utilization} outside [0, 1]")


def _fmt_ts(ts: float) -> str:
    return str(int(ts)) if float(ts).is_integer() else f"{ts:.6f}"


def format_record(r: MetricRecord) -> str:
    return f"{_fmt_ts(r.timestamp)},{r.packets_per_sec:.6f},{r.bytes_per_sec:.6f},{r.utilization:.6f}"


def read_csv(path) -> Iterator[MetricRecord]:
    """Yield records in file order, rejecting bad lines with their line number."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return
        if [h.strip() for h in header] != ["timestamp", *METRICS]:
            raise IngestError(f"expected header {CSV_HEADER!r}", 1)
        last = -math.inf
        for row in reader:
            lineno = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise IngestError(f"expected 4 fields, got {len(row)}", lineno)
            try:
                rec = MetricRecord(*(float(x) for x in row))
            except ValueError:
                raise IngestError("malformed number", lineno) from None
            try:
                rec.check()
            except IngestError as exc:
                raise IngestError(str(exc), lineno) from None
            if rec.timestamp <= last:
                raise IngestError("timestamps must be strictly increasing", lineno)
            last = rec.timestamp
            yield rec


def write_csv(records: Iterable[MetricRecord], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in records:
            fh.write(format_record(r) + "\n")
            n += 1
    return n


@dataclass(frozen=True)
class MetricWindow:
    """Mean of each metric over ``[start, end)``; a gap marker has no records."""

    start: float
    end: float
    values: dict[str, float]
    record_count: int
    bucket: TimeBucketKey

    @property
    def is_gap(self) -> bool:
        return self.record_count == 0

    def metric(self, name: str) -> float:
        # a gap looks exactly like an outage: no traffic at all
        return self.values.get(name, 0.0)


def windowize(records: Iterable[MetricRecord], window_len: float = 60.0,
              scheme: BucketScheme = BucketScheme.HOUR_DAYTYPE) -> Iterator[MetricWindow]:
    """Tumbling windows aligned to multiples of ``window_len`` since the epoch."""
    if not window_len > 0:
        raise ValueError("window_len must be positive")

    def make(idx: int, sums: list[float], count: int) -> MetricWindow:
        start = idx * window_len
        values = {m: s / count for m, s in zip(METRICS, sums)} if count else {}
        return MetricWindow(start, start + window_len, values, count, scheme.key_for(start))

    current = None
    sums = [0.0, 0.0, 0.0]
    count = 0
    for r in records:
        idx = math.floor(r.timestamp / window_len)
        if current is None:
            current = idx
        elif idx != current:
            yield make(current, sums, count)
            for gap in range(current + 1, idx):
                yield make(gap, [], 0)
            current = idx
            sums = [0.0, 0.0, 0.0]
            count = 0
        sums[0] += r.packets_per_sec
        sums[1] += r.bytes_per_sec
        sums[2] += r.utilization
        count += 1
    if current is not None:
        yield make(current, sums, count)


# --- synthetic traces --------------------------------------------------------

class ScenarioKind(str, Enum):
    OUTAGE = "outage"
    FLASH_CROWD = "flash_crowd"
    ABUSE = "abuse"
    CONFIG_CHANGE = "config_change"


@dataclass(frozen=True)
class AnomalyScenario:
    kind: ScenarioKind
    start: int
    duration: int
    magnitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind(self.kind))
        if self.duration <= 0:
            raise ValueError("scenario duration must be positive")
        if not self.magnitude > 0:
            raise ValueError("scenario magnitude must be positive")

    @property
    def end(self) -> int:
        return self.start + self.duration

    def overlaps(self, start: float, end: float) -> bool:
        return self.start < end and start < self.end

    def covers(self, start: float, end: float) -> bool:
        return self.start <= start and end <= self.end


@dataclass(frozen=True)
class DiurnalProfile:
    """Shape of the clean trace.

    Packet rate is ``base + amp * max(0, sin(2*pi*(hour - peak_hour + 6)/24))``
    scaled by ``weekend_factor`` on Saturdays and Sundays, times bounded
    uniform noise. Byte rate is packets times a noisy mean packet size,
    capped at the link capacity.
    """

    base_pps: float = 2000.0
    amp_pps: float = 8000.0
    peak_hour: float = 14.0
    weekend_factor: float = 0.35
    noise: float = 0.3
    packet_size: float = 700.0
    size_noise: float = 0.2
    link_capacity_bps: float = 100e6
    # flash crowd decay constant as a fraction of its duration
    flash_decay: float = 0.5

    def __post_init__(self):
        if not 0 <= self.noise < 1 or not 0 <= self.size_noise < 1:
            raise ValueError("noise bounds must be in [0, 1)")
        if self.base_pps < 0 or self.amp_pps < 0 or self.link_capacity_bps <= 0:
            raise ValueError("invalid profile rates")


@dataclass
class Trace:
    timestamps: np.ndarray
    packets_per_sec: np.ndarray
    bytes_per_sec: np.ndarray
    utilization: np.ndarray
    scenarios: tuple[AnomalyScenario, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.timestamps)

    def records(self, start: float | None = None, end: float | None = None) -> Iterator[MetricRecord]:
        lo = 0 if start is None else int(np.searchsorted(self.timestamps, start, "left"))
        hi = len(self) if end is None else int(np.searchsorted(self.timestamps, end, "left"))
        for row in zip(self.timestamps[lo:hi].tolist(), self.packets_per_sec[lo:hi].tolist(),
                       self.bytes_per_sec[lo:hi].tolist(), self.utilization[lo:hi].tolist()):
            yield MetricRecord(*row)

    def write_csv(self, path) -> None:
        data = np.column_stack([self.timestamps, self.packets_per_sec, self.bytes_per_sec, self.utilization])
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(CSV_HEADER + "\n")
            np.savetxt(fh, data, fmt=["%d", "%.6f", "%.6f", "%.6f"], delimiter=",")


def check_scenarios(scenarios: Sequence[AnomalyScenario], start: int, end: int) -> None:
    for s in scenarios:
        if s.start < start or s.end > end:
            raise ValueError(f"scenario {s.kind.value} at {s.start} outside trace span [{start}, {end})")
    for i, a in enumerate(scenarios):
        for b in scenarios[i + 1:]:
            if a.kind != b.kind and a.overlaps(b.start, b.end):
                raise ValueError(f"conflicting overlapping scenarios: {a.kind.value} and {b.kind.value}")


def generate_trace(seed: int, days: int, scenarios: Sequence[AnomalyScenario] = (),
                   profile: DiurnalProfile = DiurnalProfile(), start: int = DEFAULT_START) -> Trace:
    """One record per second for ``days`` days; a pure function of its inputs."""
    if days < 1:
        raise ValueError("days must be >= 1")
    n = days * 86400
    end = start + n
    scenarios = tuple(scenarios)
    check_scenarios(scenarios, start, end)

    rng = np.random.default_rng(seed)
    rate_noise = rng.uniform(-profile.noise, profile.noise, n)
    size_noise = rng.uniform(-profile.size_noise, profile.size_noise, n)

    ts = np.arange(start, end, dtype=np.int64)
    hour = (ts % 86400) / 3600.0
    weekday = ((ts // 86400) + 3) % 7  # 1970-01-01 was a Thursday
    factor = np.where(weekday >= 5, profile.weekend_factor, 1.0)
    curve = np.maximum(0.0, np.sin(2 * np.pi * (hour - profile.peak_hour + 6) / 24))
    level = profile.base_pps + profile.amp_pps * curve * factor

    order = {ScenarioKind.CONFIG_CHANGE: 0, ScenarioKind.FLASH_CROWD: 1, ScenarioKind.ABUSE: 2,
             ScenarioKind.OUTAGE: 3}
    outage = np.zeros(n, dtype=bool)
    for s in sorted(scenarios, key=lambda s: (order[s.kind], s.start)):
        lo, hi = s.start - start, s.end - start
        if s.kind is ScenarioKind.CONFIG_CHANGE:
            level[lo:] *= s.magnitude
        elif s.kind is ScenarioKind.FLASH_CROWD:
            dt = np.arange(hi - lo, dtype=float)
            tau = max(1.0, profile.flash_decay * s.duration)
            level[lo:hi] *= 1.0 + (s.magnitude - 1.0) * np.exp(-dt / tau)
        elif s.kind is ScenarioKind.ABUSE:
            level[lo:hi] += s.magnitude * profile.base_pps
        else:
            outage[lo:hi] = True

    pps = level * (1.0 + rate_noise)
    capacity = profile.link_capacity_bps / 8.0
    bps = np.minimum(pps * profile.packet_size * (1.0 + size_noise), capacity)
    pps[outage] = 0.0
    bps[outage] = 0.0
    util = bps / capacity
    return Trace(ts, pps, bps, util, scenarios)


def generate(seed: int, days: int, scenarios: Sequence[AnomalyScenario] = (),
             profile: DiurnalProfile = DiurnalProfile(), start: int = DEFAULT_START) -> Iterator[MetricRecord]:
    return generate_trace(seed, days, scenarios, profile, start).records()


SCENARIO_HEADER = "kind,start,duration,magnitude"


def write_scenarios(scenarios: Iterable[AnomalyScenario], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SCENARIO_HEADER + "\n")
        for s in scenarios:
            fh.write(f"{s.kind.value},{s.start},{s.duration},{s.magnitude:.6f}\n")


def read_scenarios(path) -> list[AnomalyScenario]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#") or (lineno == 1 and line == SCENARIO_HEADER):
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise IngestError("expected kind,start,duration,magnitude", lineno)
        try:
            out.append(AnomalyScenario(ScenarioKind(parts[0].strip()), int(parts[1]), int(parts[2]),
                                       float(parts[3])))
        except ValueError as exc:
            raise IngestError(str(exc), lineno) from None
    return out


def parse_scenario(text: str, origin: int = DEFAULT_START) -> AnomalyScenario:
    """``kind:start:duration[:magnitude]``; ``start`` is seconds after ``origin``."""
    parts = text.split(":")
    if len(parts) not in (3, 4):
        raise ValueError(f"bad scenario {text!r}; expected kind:start:duration[:magnitude]")
    mag = float(parts[3]) if len(parts) == 4 else 1.0
    return AnomalyScenario(ScenarioKind(parts[0]), origin + int(parts[1]), int(parts[2]), mag)
