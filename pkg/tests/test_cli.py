import json

import pytest

from wg_stokes import cli
from wg_stokes.verify import CheckResult

TINY = ["study", "--k", "0", "--n0", "2", "--levels", "2"]


def test_study_prints_markdown(capsys):
    assert cli.main(TINY) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("k = 0, case = paper")
    assert "| 1/4 |" in out


def test_study_writes_output_file(tmp_path, capsys):
    target = tmp_path / "reports" / "tiny.csv"
    assert cli.main(TINY + ["--format", "csv", "--output", str(target)]) == cli.EXIT_OK
    assert capsys.readouterr().out == ""
    assert target.read_text().splitlines()[0].startswith("h,energy error,rate")


def test_invalid_option_value_is_config_error():
    assert cli.main(["study", "--levels", "0"]) == cli.EXIT_CONFIG


def test_unknown_case_rejected_by_parser():
    with pytest.raises(SystemExit) as info:
        cli.main(["study", "--case", "cavity"])
    assert info.value.code == 2


def test_budget_overrun_is_failure():
    assert cli.main(TINY + ["--max-unknowns", "10"]) == cli.EXIT_FAILED


def test_config_file_and_flag_priority(tmp_path, capsys):
    config = tmp_path / "study.env"
    config.write_text("k=1\nn0=2\nlevels=1\nformat=json\n")
    assert cli.main(["study", "--config", str(config), "--k", "0"]) == cli.EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["k"] == 0
    assert len(report["rows"]) == 1


def test_missing_config_file(tmp_path):
    assert cli.main(["study", "--config", str(tmp_path / "absent.env")]) == cli.EXIT_CONFIG


def test_config_file_rejects_unknown_keys(tmp_path):
    config = tmp_path / "study.env"
    config.write_text("levels=1\nmesh=crisscross\n")
    assert cli.main(["study", "--config", str(config)]) == cli.EXIT_CONFIG


def test_preset(tmp_path, capsys):
    presets = tmp_path / "studies.yaml"
    presets.write_text("studies:\n  tiny:\n    k: 0\n    n0: 2\n    levels: 2\n    format: csv\n")
    assert cli.main(["study", "--presets", str(presets), "--preset", "tiny"]) == cli.EXIT_OK
    assert capsys.readouterr().out.count("\n") == 3


def test_unknown_preset(tmp_path):
    presets = tmp_path / "studies.yaml"
    presets.write_text("studies: {}\n")
    assert cli.main(["study", "--presets", str(presets), "--preset", "table9"]) == cli.EXIT_CONFIG


def test_malformed_presets_file(tmp_path):
    presets = tmp_path / "studies.yaml"
    presets.write_text("studies: [unclosed\n")
    assert cli.main(["study", "--presets", str(presets), "--preset", "tiny"]) == cli.EXIT_CONFIG


@pytest.mark.parametrize("passed,code", [(True, cli.EXIT_OK), (False, cli.EXIT_FAILED)])
def test_verify_exit_code(monkeypatch, capsys, passed, code):
    results = [CheckResult("first", True, "ok"), CheckResult("second", passed, "detail")]
    monkeypatch.setattr(cli, "run_verify", lambda: results)
    assert cli.main(["verify", "--json"]) == code
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] is passed
    assert [c["name"] for c in report["checks"]] == ["first", "second"]


def test_verify_text_output(monkeypatch, capsys):
    monkeypatch.setattr(cli, "run_verify", lambda: [CheckResult("kernel", False, "rank 4")])
    assert cli.main(["verify"]) == cli.EXIT_FAILED
    assert capsys.readouterr().out == "FAIL  kernel: rank 4\n"
