import json

import pytest

from fuzzmon import knowledge_base as kbmod
from fuzzmon.cli import main


def run(capsys, *argv):
    code = main(list(map(str, argv)))
    out, err = capsys.readouterr()
    return code, out, err


def test_rules_check_shipped(capsys):
    code, out, _ = run(capsys, "rules", "check")
    assert code == 0 and out.strip() == "5 rules OK"


def test_rules_check_reports_position(tmp_path, capsys):
    f = tmp_path / "bad.rules"
    f.write_text("IF util IS low THEN condition IS normal\nIF util extreme THEN condition IS abnormal\n")
    code, _, err = run(capsys, "rules", "check", f)
    assert code == 1 and ":2:9:" in err


def test_rules_check_diagnostics(tmp_path, capsys):
    f = tmp_path / "r.rules"
    f.write_text("IF util IS high THEN condition IS abnormal\n")
    code, _, err = run(capsys, "rules", "check", f)
    assert code == 1 and "rule 0, clause 0" in err


def test_gen_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(capsys, "gen", "--seed", 42, "--days", 14, "--out", a)[0] == 0
    assert run(capsys, "gen", "--seed", 42, "--days", 14, "--out", b)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.csv.scenarios").read_text() == "kind,start,duration,magnitude\n"


def test_invalid_thresholds_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.conf"
    cfg.write_text("crit_threshold=0.3\nwarn_threshold=0.5\n")
    code, _, err = run(capsys, "monitor", "--config", cfg, "--input", tmp_path / "x.csv")
    assert code == 2 and "warn_threshold" in err
    assert run(capsys, "monitor", "--crit", 0.3, "--input", tmp_path / "x.csv")[0] == 2


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as ei:
        main(["frobnicate"])
    assert ei.value.code == 2
    assert run(capsys, "learn")[0] == 2


def test_operational_errors_exit_1(tmp_path, capsys):
    assert run(capsys, "kb", "show", tmp_path / "absent.kb")[0] == 1
    assert run(capsys, "monitor", "--input", tmp_path / "absent.csv")[0] == 1
    bad = tmp_path / "bad.csv"
    bad.write_text("timestamp,packets_per_sec,bytes_per_sec,utilization\n0,1,1,2.0\n")
    code, _, err = run(capsys, "monitor", "--input", bad)
    assert code == 1 and "line 2" in err


@pytest.fixture
def small_trace(tmp_path, capsys):
    trace = tmp_path / "t.csv"
    run(capsys, "gen", "--seed", 5, "--days", 2, "--out", trace, "--scenario", "flash_crowd:97200:3600:10")
    return trace


def test_learn_show_monitor_replay(tmp_path, capsys, small_trace):
    kb = tmp_path / "kb.txt"
    code, out, _ = run(capsys, "learn", "--input", small_trace, "--kb-out", kb)
    assert code == 0 and "kb version: 144" in out
    code, out, _ = run(capsys, "kb", "show", kb, "--variable", "util")
    assert code == 0 and out.count("weekday") == 24 and "bandwidth" not in out
    assert kbmod.load(kb).version == 144

    alarms, runlog, out_kb = tmp_path / "a.log", tmp_path / "r.log", tmp_path / "kb2.txt"
    code, out, _ = run(capsys, "monitor", "--input", small_trace, "--kb", kb, "--kb-out", out_kb,
                       "--alarm-log", alarms, "--run-log", runlog, "--json",
                       "--scenarios", str(small_trace) + ".scenarios")
    assert code == 0
    summary = json.loads(out)
    assert summary["learner_commits"] == 144 and summary["detection"]["scenarios"][0]["windows"] == 60
    code, out, _ = run(capsys, "replay", "--input", small_trace, "--kb", kb, "--versions", runlog,
                       "--expect", alarms)
    assert code == 0 and "replay matches" in out


def test_eval_small(tmp_path, capsys):
    sc = tmp_path / "s.csv"
    # 03:00 on the third day of a trace starting Monday 2024-01-01
    sc.write_text("kind,start,duration,magnitude\nabuse,1704250800,3600,5\n")
    code, out, _ = run(capsys, "eval", "--days", 3, "--learn-days", 2, "--scenarios", sc, "--json")
    assert code == 0
    det = json.loads(out)["detection"]
    assert det["scenarios"][0]["windows"] == 60 and det["clean_windows"] == 1380


def test_eval_default_scenarios_need_room(capsys):
    code, _, err = run(capsys, "eval", "--days", 3, "--learn-days", 2)
    assert code == 1 and "outside trace span" in err
