import json
from pathlib import Path

import pytest

from windctl.cli import main
from windctl.scenarios import ring6

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def ring6_path(tmp_path):
    p = tmp_path / "ring6.json"
    p.write_text(json.dumps(ring6()))
    return str(p)


def test_run_scenario_writes_metrics(ring6_path, tmp_path, capsys):
    out = tmp_path / "metrics.json"
    trace = tmp_path / "trace.ndjson"
    code = main([
        "run-scenario", ring6_path, "--seed", "5",
        "--out", str(out), "--trace", str(trace),
    ])
    assert code == 0
    metrics = json.loads(out.read_text())
    assert metrics["seed"] == 5
    assert "opergrid:scada-loop" in metrics["flows"]
    for fm in metrics["flows"].values():
        if fm["bound_s"] is not None and fm["max_delay_s"] is not None:
            assert fm["max_delay_s"] <= fm["bound_s"]
    assert trace.read_text().strip()
    assert "wall" in capsys.readouterr().out


def test_run_scenario_duration_suffix(ring6_path, tmp_path):
    out = tmp_path / "m.json"
    code = main([
        "run-scenario", ring6_path, "--duration", "2000ms", "--out", str(out),
    ])
    assert code == 0
    assert json.loads(out.read_text())["duration_s"] == 2.0


def test_committed_fixtures_load():
    for fixture in SCENARIOS.glob("*.json"):
        code = main(["inspect", str(fixture), "--what", "topology"])
        assert code == 0


def test_inspect_rules_counts_match(ring6_path, capsys):
    code = main(["inspect", ring6_path, "--what", "rules"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["count_mismatches"] == []
    assert payload["rule_sets"]


def test_inspect_offers(capsys):
    code = main(["inspect", str(SCENARIOS / "interdomain.json"),
                 "--what", "offers"])
    assert code == 0
    offers = json.loads(capsys.readouterr().out)
    assert offers["nsp1"]


def test_bootstrap_summary(ring6_path, capsys):
    code = main(["bootstrap", ring6_path])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["park"]["adoption_order"][0] == "S1"
    assert summary["park"]["control_flows"] == 6


def test_oracle_routing_small(capsys):
    code = main(["oracle", "routing", "--graphs", "3", "--seed", "11"])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["routing"]["failures"] == 0


def test_oracle_interdomain_small(capsys):
    code = main(["oracle", "interdomain", "--graphs", "3", "--seed", "3"])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["interdomain"]["failures"] == 0


def test_unknown_verb_usage_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_missing_scenario_machine_readable_error(tmp_path, capsys):
    code = main(["run-scenario", str(tmp_path / "nope.json")])
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert "error" in err


def test_report_renders_csv_and_figures(ring6_path, tmp_path):
    out = tmp_path / "metrics.json"
    trace = tmp_path / "trace.ndjson"
    assert main([
        "run-scenario", ring6_path, "--out", str(out), "--trace", str(trace),
    ]) == 0
    report_dir = tmp_path / "report"
    code = main([
        "report", str(out), "--trace", str(trace),
        "--out-dir", str(report_dir),
    ])
    assert code == 0
    names = {p.name for p in report_dir.iterdir()}
    assert "flows.csv" in names
    assert "delay_bounds.png" in names
    assert "availability.png" in names
    assert "delays_timeline.png" in names
    header = (report_dir / "flows.csv").read_text().splitlines()[0]
    assert header.startswith("flow_id,")
