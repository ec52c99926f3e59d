from __future__ import annotations

import json
import math
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridstorm.harness import (
    ATTACK_CASES, AttackerMode, CaseMetrics, RunConfig, StageError, Trace, Verdict, compute_metrics, load_results,
    main, run_case, settling_time, summarize, write_summary,
)
from gridstorm.netio import Pacing
from conftest import attack_case


def brute_settle(t, f, t_final, dt, band=0.02, hold=0.2):
    n_hold = round(hold / dt)
    for k in range(len(t)):
        if t[k] < t_final - 0.5 * dt or k + n_hold >= len(t):
            continue
        if all(abs(f[j] - 60.0) <= band for j in range(k, k + n_hold + 1)):
            return max(0.0, t[k] - t_final)
    return None


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert (cfg.dt, cfg.t_end, cfg.pacing, cfg.publish_every) == (1e-3, 3.0, Pacing.LOCKSTEP, 10)
        assert cfg.tag == "systemI_scenario1"

    @pytest.mark.parametrize("kw", [{"system": "III"}, {"scenario": 3}, {"dt": 0.0}, {"t_end": -1.0},
                                    {"publish_every": 0}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            RunConfig(**kw)

    def test_from_mapping(self):
        cfg = RunConfig.from_mapping({"system": "II", "scenario": "2", "pacing": "RealTime",
                                      "attacker": "External", "telemetry": ["10.0.0.5", "7401"],
                                      "output_dir": "out", "monitored_buses": [24, 16]})
        assert cfg.system == "II" and cfg.scenario == 2
        assert cfg.pacing is Pacing.REALTIME and cfg.attacker is AttackerMode.EXTERNAL
        assert cfg.telemetry == ("10.0.0.5", 7401)
        assert cfg.monitored_buses == (24, 16)
        assert str(cfg.output_dir) == "out"

    def test_from_mapping_unknown_key(self):
        with pytest.raises(ValueError, match="bogus"):
            RunConfig.from_mapping({"bogus": 1})


class TestSettling:
    def test_already_settled(self):
        t = np.arange(0, 1, 1e-3)
        assert settling_time(t, np.full_like(t, 60.01), 0.2, 1e-3) == 0.0

    def test_never_settles(self):
        t = np.arange(0, 1, 1e-3)
        assert settling_time(t, np.full_like(t, 60.5), 0.2, 1e-3) is None

    def test_nan_is_outside_band(self):
        t = np.arange(0, 1, 1e-3)
        f = np.full_like(t, 60.0)
        f[500] = np.nan
        assert settling_time(t, f, 0.4, 1e-3) == pytest.approx(0.101)

    def test_exponential_decay(self):
        dt = 1e-3
        t = np.arange(0, 3, dt)
        f = 60 + 0.5 * np.exp(-(t - 1.0).clip(0) / 0.1) * (t >= 1.0)
        expected = 0.1 * math.log(0.5 / 0.02)
        assert settling_time(t, f, 1.0, dt) == pytest.approx(expected, abs=dt)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(59.9, 60.1), min_size=20, max_size=120), st.integers(0, 19))
    def test_matches_brute_force(self, values, k_final):
        dt = 0.01
        t = np.arange(len(values)) * dt
        f = np.array(values)
        got = settling_time(t, f, t[k_final], dt)
        want = brute_settle(t, f, t[k_final], dt)
        assert (got is None) == (want is None)
        if got is not None:
            assert got == pytest.approx(want, abs=1e-12)


def synthetic_trace(f, v, dt=1e-3):
    n = len(f)
    t = np.arange(n) * dt
    z = np.zeros(n)
    return Trace(t, np.asarray(f, float), np.asarray(v, float), z, z, z, np.ones(n, int), np.zeros(n, int))


class TestComputeMetrics:
    def test_window_starts_before_first_event(self):
        f = np.full(2000, 60.0)
        f[100] = 58.0  # well before the window
        f[950] = 59.5
        m = compute_metrics(synthetic_trace(f, np.ones(2000)), [1.0], 1e-3)
        assert m.f_nadir == 59.5 and m.f_peak == 60.0

    def test_uv_duration_and_verdict(self):
        v = np.ones(2000)
        v[1000:1030] = 0.9
        m = compute_metrics(synthetic_trace(np.full(2000, 60.0), v), [1.0], 1e-3)
        assert m.uv_duration == pytest.approx(0.030)
        assert m.verdict is Verdict.MARGINAL
        assert m.t_settle == 0.0
        assert [x.kind for x in m.violations] == ["UnderVolt"]

    def test_stable_and_unstable(self):
        assert compute_metrics(synthetic_trace(np.full(500, 60.0), np.ones(500)), [0.1], 1e-3).verdict \
            is Verdict.STABLE
        m = compute_metrics(synthetic_trace(np.full(500, 60.0), np.ones(500)), [0.1], 1e-3, blew_up=True)
        assert m.verdict is Verdict.UNSTABLE and m.t_settle is None

    def test_round_trip_dict(self):
        m = attack_case("I", 2).metrics
        assert CaseMetrics.from_dict(json.loads(json.dumps(m.to_dict()))) == m

    def test_empty_trace(self):
        with pytest.raises(ValueError):
            compute_metrics(synthetic_trace([], []), [], 1e-3)


def fake_metrics(nadir, uv, verdict=Verdict.MARGINAL, settle=0.1):
    return CaseMetrics(nadir, 60.5, settle, 0.9, 1.02, uv, [], verdict)


class TestSummary:
    def test_most_severe_marked_once(self):
        res = {("I", 1): fake_metrics(59.2, 0.1), ("I", 2): fake_metrics(59.2, 0.3),
               ("II", 1): fake_metrics(59.1, 0.1), ("II", 2): fake_metrics(59.1, 0.2)}
        s = summarize(res)
        assert s.text.count("most severe") == 1
        worst = [c for c in s.data["cases"] if c["most_severe"]]
        assert [(c["system"], c["scenario"]) for c in worst] == [("I", 2)]
        assert not s.data["partial"]
        assert all(c["holds"] for c in s.data["comparisons"] if "UV" in c["check"])

    def test_unstable_outranks(self):
        res = {("I", 1): fake_metrics(59.9, 0.0, Verdict.UNSTABLE, None), ("I", 2): fake_metrics(59.0, 0.5)}
        worst = [c for c in summarize(res).data["cases"] if c["most_severe"]]
        assert (worst[0]["system"], worst[0]["scenario"]) == ("I", 1)

    def test_partial(self):
        s = summarize({("II", 2): fake_metrics(59.0, 0.3)})
        assert s.data["partial"] and len(s.data["missing"]) == 3
        assert "PARTIAL" in s.text

    def test_directory_round_trip(self, tmp_path):
        res = {("I", 1): fake_metrics(59.2, 0.1), ("II", 2): fake_metrics(59.1, 0.2, settle=None)}
        for (s, sc), m in res.items():
            doc = {"case": {"system": s, "scenario": sc}, "metrics": m.to_dict()}
            (tmp_path / f"system{s}_scenario{sc}_metrics.json").write_text(json.dumps(doc))
        assert load_results(tmp_path) == res
        write_summary(summarize(res), tmp_path)
        assert (tmp_path / "summary.txt").read_text() == summarize(res).text


def test_trace_csv_round_trip(tmp_path):
    tr = attack_case("I", 1).trace
    tr.write_csv(tmp_path / "t.csv")
    back = Trace.read_csv(tmp_path / "t.csv")
    for name in ("t", "f", "v", "ang", "p", "q", "breaker", "fault"):
        np.testing.assert_array_equal(getattr(back, name), getattr(tr, name))


class TestRunCase:
    def test_no_attacker_no_transitions(self):
        res = run_case(RunConfig(attacker=AttackerMode.NONE, t_end=2.0))
        assert res.transitions == []
        assert res.event_times == pytest.approx([0.9, 1.5])
        assert res.attacker_report is None

    def test_no_fault_is_quiet(self):
        res = run_case(RunConfig(attacker=AttackerMode.NONE, fault=False, t_end=0.5))
        assert np.abs(res.trace.f - 60).max() < 1e-6
        assert res.metrics.verdict is Verdict.STABLE

    def test_t_end_must_cover_fault(self):
        with pytest.raises(StageError) as err:
            run_case(RunConfig(attacker=AttackerMode.NONE, t_end=1.0))
        assert err.value.stage == "config"

    def test_bad_case_file(self, tmp_path):
        path = tmp_path / "bad.case"
        path.write_text("[buses]\n1 x\n")
        with pytest.raises(StageError) as err:
            run_case(RunConfig(case_file=path))
        assert err.value.stage == "case"

    def test_embedded_attack_records_commands(self):
        res = attack_case("I", 1)
        assert res.attacker_report["trigger_time"] == pytest.approx(0.94)
        assert res.listener_stats["commands"] == 2 and res.listener_stats["malformed"] == 0
        assert [t.origin for t in res.transitions] == ["Remote", "Remote"]


def test_cli_run_and_summarize(tmp_path, capsys):
    assert main(["run", "--system", "II", "--scenario", "1", "--output-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "t=1.000s PCC-24 -> open" in out and "t=1.500s PCC-24 -> closed" in out
    assert (tmp_path / "systemII_scenario1.csv").exists()
    assert main(["summarize", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "PARTIAL" in out and (tmp_path / "summary.json").exists()


def test_cli_config_file(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"system": "I", "scenario": 1, "attacker": "None", "t_end": 1.6}))
    assert main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "systemI_scenario1_metrics.json").read_text())
    assert doc["case"]["attacker"] == "None" and doc["transitions"] == []


def test_cli_summarize_empty(tmp_path):
    assert main(["summarize", str(tmp_path)]) == 1


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "gridstorm", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "suite" in out.stdout


def test_attack_cases():
    assert ATTACK_CASES == (("I", 1), ("I", 2), ("II", 1), ("II", 2))


def test_replace_keeps_validation():
    with pytest.raises(ValueError):
        replace(RunConfig(), scenario=5)
