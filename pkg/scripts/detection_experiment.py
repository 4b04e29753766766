"""Labeled detection runs over several seeds.

Learns on days 1-7 of a 14-day synthetic trace, monitors days 8-14 with
the three standard scenarios injected, and prints one row per seed. Pass
--learn-during-monitor to keep the learner running over the monitored
days as well.

    python scripts/detection_experiment.py --seeds 42 43 44 --out results.json
"""

import argparse
import json
import statistics

from fuzzmon.experiment import run_detection


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[42, 43, 44, 45, 46])
    ap.add_argument("--days", type=int, default=14)
    ap.add_argument("--learn-days", type=int, default=7)
    ap.add_argument("--learn-during-monitor", action="store_true")
    ap.add_argument("--out", help="write per-seed results as JSON")
    args = ap.parse_args()

    rows = []
    print(f"{'seed':>5} {'flash':>7} {'outage':>7} {'abuse':>7} {'clean crit':>11} {'clean warn':>11} {'secs':>5}")
    for seed in args.seeds:
        res = run_detection(seed, args.days, args.learn_days, learn_during_monitor=args.learn_during_monitor)
        det = res.detection
        rates = {s["kind"]: s["detection_rate"] for s in det["scenarios"]}
        row = {"seed": seed, "rates": rates, "in_scenario_rate": res.in_scenario_rate(),
               "false_critical_rate": res.false_critical_rate(),
               "clean_warnings": det["false_positives_warning"], "clean_windows": det["clean_windows"],
               "elapsed": round(res.elapsed, 2)}
        rows.append(row)
        print(f"{seed:>5} {rates['flash_crowd']:>7.1%} {rates['outage']:>7.1%} {rates['abuse']:>7.1%} "
              f"{row['false_critical_rate']:>11.2%} {row['clean_warnings']:>11} {row['elapsed']:>5.1f}")
    print(f"mean in-scenario rate {statistics.mean(r['in_scenario_rate'] for r in rows):.1%}, "
          f"worst clean critical rate {max(r['false_critical_rate'] for r in rows):.2%}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
