"""fuzzmon command line: adaptive fuzzy rule-based traffic monitoring.

Exit status: 0 success, 1 operational error, 2 usage or invalid config.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import knowledge_base as kbmod
from . import rules as rule_dsl
from .experiment import default_scenarios, run_detection
from .ingestion import (DEFAULT_START, DiurnalProfile, IngestError, generate_trace, parse_scenario,
                        read_csv, read_scenarios, write_scenarios)
from .learning import LearningError
from .monitor import (ConfigError, MonitorConfig, build_kb, config_from_mapping, default_variables,
                      load_config, read_run_log, replay, run_monitor, shipped_rules)

log = logging.getLogger("fuzzmon")

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key=value config file")
    p.add_argument("--input", type=Path, help="trace CSV")
    p.add_argument("--kb", type=Path, help="knowledge base file (loaded if it exists)")
    p.add_argument("--kb-out", type=Path, help="where to save the knowledge base afterwards")
    p.add_argument("--rules", type=Path, help="rules file (defaults to the shipped expert rules)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key; repeatable")


def _config(args, **forced) -> MonitorConfig:
    cfg = load_config(args.config) if args.config else MonitorConfig()
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    for flag, key in (("input", "input_path"), ("kb", "kb_path"), ("kb_out", "kb_out"),
                      ("rules", "rules_path"), ("alarm_log", "alarm_log"), ("run_log", "run_log"),
                      ("scenarios", "scenarios_path")):
        val = getattr(args, flag, None)
        if val is not None:
            overrides[key] = str(val)
    for flag, key in (("warn", "warn_threshold"), ("crit", "crit_threshold"), ("pace", "pace"),
                      ("notifier", "notifier_command")):
        val = getattr(args, flag, None)
        if val is not None:
            overrides[key] = str(val)
    cfg = config_from_mapping(overrides, cfg)
    if forced:
        cfg = dataclasses.replace(cfg, **forced)
        cfg.validate()
    return cfg


def cmd_gen(args) -> int:
    scenarios = [parse_scenario(s, args.start) for s in args.scenario]
    if args.scenarios:
        scenarios += read_scenarios(args.scenarios)
    profile = DiurnalProfile(base_pps=args.base_pps, amp_pps=args.amp_pps, noise=args.noise)
    trace = generate_trace(args.seed, args.days, scenarios, profile, args.start)
    trace.write_csv(args.out)
    sidecar = args.scenarios_out or Path(str(args.out) + ".scenarios")
    write_scenarios(trace.scenarios, sidecar)
    print(f"wrote {len(trace)} records to {args.out} and {len(trace.scenarios)} scenarios to {sidecar}")
    return EXIT_OK


def _print_report(report, as_json: bool) -> None:
    summary = report.summary()
    if as_json:
        print(json.dumps(summary, indent=2, sort_keys=True))
        return
    print(f"windows: {summary['windows']} (gaps {summary['gaps']})")
    print(f"alarms: warning {summary['alarms']['warning']}, critical {summary['alarms']['critical']}")
    print(f"learner commits: {summary['learner_commits']}, dropped ticks: {summary['dropped_ticks']}")
    print(f"kb version: {summary['kb_version']}")
    det = summary.get("detection")
    if det:
        for s in det["scenarios"]:
            print(f"  {s['kind']:<13} windows {s['windows']:>4}  scored critical {s['score_at_crit']:>4}  "
                  f"rate {s['detection_rate']:.3f}")
        print(f"  clean windows {det['clean_windows']}, critical {det['false_positives_critical']} "
              f"({det['false_critical_rate']:.4%}), warning {det['false_positives_warning']}")


def cmd_learn(args) -> int:
    cfg = _config(args, learning=True, monitoring=False)
    if cfg.input_path is None:
        raise UsageError("learn needs --input (or input_path in the config)")
    if cfg.kb_out is None and cfg.kb_path is None:
        raise UsageError("learn needs --kb or --kb-out to write the knowledge base")
    report = run_monitor(cfg)
    _print_report(report, args.json)
    return EXIT_OK


def cmd_monitor(args) -> int:
    forced = {"monitoring": True}
    if args.no_learning:
        forced["learning"] = False
    cfg = _config(args, **forced)
    if cfg.input_path is None:
        raise UsageError("monitor needs --input (or input_path in the config)")
    report = run_monitor(cfg)
    _print_report(report, args.json)
    return EXIT_OK


def cmd_replay(args) -> int:
    cfg = _config(args, monitoring=True)
    if cfg.input_path is None or cfg.kb_path is None:
        raise UsageError("replay needs --input and --kb (the knowledge base the run started from)")
    kb = build_kb(cfg)
    records = list(read_csv(cfg.input_path))
    lines = replay(records, kb, cfg, read_run_log(args.versions))
    out = "".join(line + "\n" for line in lines)
    if args.expect:
        expected = Path(args.expect).read_text(encoding="utf-8")
        if expected != out:
            print("replayed alarm stream differs from the recorded one", file=sys.stderr)
            return EXIT_ERROR
        print(f"replay matches: {len(lines)} alarms")
    else:
        sys.stdout.write(out)
    return EXIT_OK


def cmd_rules_check(args) -> int:
    text = Path(args.file).read_text(encoding="utf-8") if args.file else shipped_rules()
    try:
        rb = rule_dsl.parse(text)
    except rule_dsl.RuleSyntaxError as exc:
        print(f"{args.file or 'expert.rules'}:{exc.line}:{exc.column}: {exc.message}", file=sys.stderr)
        return EXIT_ERROR
    variables = kbmod.load(args.kb).variables if args.kb else default_variables()
    for w in rb.warnings:
        print(f"warning: {w}", file=sys.stderr)
    diags = rule_dsl.validate(rb, variables)
    for d in diags:
        print(d, file=sys.stderr)
    if diags:
        return EXIT_ERROR
    print(f"{len(rb)} rules OK")
    return EXIT_OK


def cmd_kb_show(args) -> int:
    kb = kbmod.load(args.file)
    print(f"version {kb.version}; {len(kb.variables)} variables; {len(kb.rules)} rules; "
          f"{len(kb.membership)} learned entries")
    for v in kb.variables:
        if args.variable and v.name != args.variable:
            continue
        print(f"\n{v.name} [{v.domain_min:g}, {v.domain_max:g}] terms {','.join(v.terms)}")
        entries = sorted((b, bs) for (name, b), bs in kb.membership.items() if name == v.name)
        if not entries:
            print("  (nothing learned)")
        for bucket, bs in entries:
            mean = f"{bs.mean:.6f}" if bs.mean is not None else "-"
            print(f"  {bucket}  {' '.join(f'{x:.6f}' for x in bs.boundaries)}  n={bs.sample_count}  mean={mean}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    scenarios = read_scenarios(args.scenarios) if args.scenarios else default_scenarios(args.learn_days)
    rules_text = Path(args.rules).read_text(encoding="utf-8") if args.rules else None
    res = run_detection(args.seed, args.days, args.learn_days, scenarios, rules_text, cfg,
                        learn_during_monitor=args.learn_during_monitor)
    _print_report(res.monitor_report, args.json)
    if not args.json:
        print(f"in-scenario windows scoring >= {cfg.crit_threshold}: {res.in_scenario_rate():.3f}; "
              f"elapsed {res.elapsed:.1f}s")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fuzzmon", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic trace and its scenario sidecar")
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--days", type=int, default=14)
    g.add_argument("--out", type=Path, default=Path("trace.csv"))
    g.add_argument("--scenarios-out", type=Path)
    g.add_argument("--scenario", action="append", default=[], metavar="KIND:OFFSET:DURATION[:MAG]",
                   help="inject an anomaly; OFFSET is seconds after --start")
    g.add_argument("--scenarios", type=Path, help="sidecar file of scenarios to inject")
    g.add_argument("--start", type=int, default=DEFAULT_START, help="epoch seconds of the first record")
    g.add_argument("--base-pps", type=float, default=DiurnalProfile.base_pps)
    g.add_argument("--amp-pps", type=float, default=DiurnalProfile.amp_pps)
    g.add_argument("--noise", type=float, default=DiurnalProfile.noise)
    g.set_defaults(func=cmd_gen)

    l = sub.add_parser("learn", help="build or refine a knowledge base from a trace")
    _add_run_options(l)
    l.add_argument("--json", action="store_true")
    l.set_defaults(func=cmd_learn)

    m = sub.add_parser("monitor", help="learning and monitoring over a trace")
    _add_run_options(m)
    m.add_argument("--alarm-log", type=Path)
    m.add_argument("--run-log", type=Path, help="per-window record including the KB version used")
    m.add_argument("--scenarios", type=Path, help="ground-truth sidecar for detection metrics")
    m.add_argument("--no-learning", action="store_true")
    m.add_argument("--warn", type=float)
    m.add_argument("--crit", type=float)
    m.add_argument("--notifier", help="command template with {score} {timestamp} {severity}")
    m.add_argument("--pace", type=float, help="trace seconds per wall-clock second (0 = no pacing)")
    m.add_argument("--json", action="store_true")
    m.set_defaults(func=cmd_monitor)

    r = sub.add_parser("replay", help="re-derive an alarm stream from a run log's KB versions")
    _add_run_options(r)
    r.add_argument("--versions", type=Path, required=True, help="run log written by monitor --run-log")
    r.add_argument("--expect", type=Path, help="alarm log to compare against")
    r.set_defaults(func=cmd_replay)

    rules = sub.add_parser("rules", help="rule file tools")
    rsub = rules.add_subparsers(dest="rules_command", required=True)
    rc = rsub.add_parser("check", help="parse and validate a rules file")
    rc.add_argument("file", nargs="?", type=Path, help="rules file (default: shipped expert rules)")
    rc.add_argument("--kb", type=Path, help="validate against this KB's variables")
    rc.set_defaults(func=cmd_rules_check)

    kb = sub.add_parser("kb", help="knowledge base tools")
    ksub = kb.add_subparsers(dest="kb_command", required=True)
    ks = ksub.add_parser("show", help="dump learned boundaries per bucket")
    ks.add_argument("file", type=Path)
    ks.add_argument("--variable")
    ks.set_defaults(func=cmd_kb_show)

    e = sub.add_parser("eval", help="labeled detection run on a seeded synthetic trace")
    e.add_argument("--config", type=Path)
    e.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    e.add_argument("--seed", type=int, default=42)
    e.add_argument("--days", type=int, default=14)
    e.add_argument("--learn-days", type=int, default=7)
    e.add_argument("--rules", type=Path, help="rules file (default: shipped detect.rules)")
    e.add_argument("--scenarios", type=Path, help="scenario sidecar (default: the three standard ones)")
    e.add_argument("--learn-during-monitor", action="store_true",
                   help="keep learning while monitoring the evaluation days")
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"fuzzmon: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, kbmod.KnowledgeBaseError, rule_dsl.RuleSyntaxError, IngestError, LearningError,
            ValueError) as exc:
        print(f"fuzzmon: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
