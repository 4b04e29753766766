"""How much learning the monitor needs before its output can be trusted.

For each learning length L in days, learns on days 1..L of a seeded
trace and monitors the following seven days with the standard
scenarios. Windows landing in a bucket that the learning days never
covered (weekend hours after a weekday-only learning run, for instance)
are scored with no learned baseline, so short runs miss whole scenarios;
the "unlearned" column counts those windows. Also prints how far the boundaries of one bucket still move
per day, which is the "has it stabilized yet" signal.

    python scripts/learning_curve.py --max-days 7 --seed 42
"""

import argparse

from fuzzmon.engine import Confidence
from fuzzmon.experiment import run_detection
from fuzzmon.ingestion import DEFAULT_START, generate_trace
from fuzzmon.knowledge_base import DayClass, KnowledgeBase, TimeBucketKey
from fuzzmon.learning import stability_metric
from fuzzmon.monitor import MonitorConfig, default_variables, run_monitor

DAY = 86400


def boundary_drift(seed: int, days: int, variable: str, bucket: TimeBucketKey) -> list[float]:
    trace = generate_trace(seed, days)
    kb = KnowledgeBase(default_variables())
    history = []
    cfg = MonitorConfig(monitoring=False)
    for d in range(days):
        run_monitor(cfg, records=trace.records(DEFAULT_START + d * DAY, DEFAULT_START + (d + 1) * DAY), kb=kb)
        bs = kb.snapshot().get(variable, bucket)
        if bs is not None:
            history.append(bs)
    return [stability_metric(history[: i + 1]) for i in range(1, len(history))]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--max-days", type=int, default=7)
    ap.add_argument("--variable", default="packets")
    ap.add_argument("--hour", type=int, default=14)
    args = ap.parse_args()

    print(f"{'learn days':>10} {'in-scenario':>12} {'min scenario':>13} {'clean crit':>11} {'clean warn':>11} {'unlearned':>10}")
    for learn_days in range(1, args.max_days + 1):
        res = run_detection(args.seed, learn_days + 7, learn_days)
        det = res.detection
        unlearned = sum(r.confidence is Confidence.UNLEARNED_BUCKET for r in res.monitor_report.results)
        print(f"{learn_days:>10} {res.in_scenario_rate():>12.1%} {res.min_scenario_rate():>13.1%} "
              f"{res.false_critical_rate():>11.2%} {det['false_positives_warning']:>11} {unlearned:>10}")

    bucket = TimeBucketKey(args.hour, DayClass.WEEKDAY)
    drift = boundary_drift(args.seed, 5, args.variable, bucket)
    print(f"\nper-day boundary change, {args.variable} {bucket} (weekdays 2..5): "
          + ", ".join(f"{x:.1f}" for x in drift))


if __name__ == "__main__":
    main()
