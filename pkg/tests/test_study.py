import csv
import io
from pathlib import Path

import pytest
from pydantic import ValidationError

from wg_stokes.analysis import ErrorReport, convergence_rates
from wg_stokes.cases import get_case
from wg_stokes.mesh import build_structured
from wg_stokes.schemas import StudyReportOut
from wg_stokes.study import (
    HEADERS,
    BudgetExceededError,
    StudyConfig,
    format_report,
    load_presets,
    predicted_unknowns,
    run_study,
)
from wg_stokes.system import build_dof_map


def _record():
    reports = [
        ErrorReport(h=1 / 10, n=10, energy=2.8934e-02, pressure=2.9406e-02, superclose=6.5665e-04),
        ErrorReport(h=1 / 20, n=20, energy=1.4467e-02, pressure=1.4703e-02, superclose=1.641625e-04),
    ]
    return convergence_rates(reports)


@pytest.mark.parametrize("n", [1, 2, 5, 10])
@pytest.mark.parametrize("k", [0, 1, 2])
def test_predicted_unknowns_match_dof_map(n, k):
    assert predicted_unknowns(n, k) == build_dof_map(build_structured(n), k).total


# ── StudyConfig ───────────────────────────────────────────────────────────────

def test_config_defaults():
    config = StudyConfig()
    assert (config.k, config.n0, config.levels, config.case, config.format) == (0, 10, 4, "paper", "md")
    assert config.grid_counts == [10, 20, 40, 80]


@pytest.mark.parametrize("field,value", [
    ("k", -1),
    ("n0", 0),
    ("levels", 0),
    ("tol", 0.0),
    ("case", "cavity"),
    ("format", "xlsx"),
    ("max_unknowns", 0),
])
def test_config_rejects_invalid(field, value):
    with pytest.raises(ValidationError):
        StudyConfig(**{field: value})


def test_config_rejects_unknown_keys():
    with pytest.raises(ValidationError):
        StudyConfig(mesh="crisscross")


def test_config_coerces_strings():
    config = StudyConfig(k="1", levels="2", deterministic="true", dump_mesh="out/mesh.txt")
    assert config.k == 1 and config.levels == 2 and config.deterministic
    assert config.dump_mesh.name == "mesh.txt"


def test_load_presets(tmp_path):
    path = tmp_path / "studies.yaml"
    path.write_text("studies:\n  tiny:\n    k: 1\n    n0: 2\n    levels: 2\n")
    presets = load_presets(path)
    assert StudyConfig(**presets["tiny"]).grid_counts == [2, 4]


def test_repository_presets_are_valid():
    presets = load_presets(Path(__file__).resolve().parent.parent / "studies.yaml")
    assert {"table1", "table2"} <= set(presets)
    for values in presets.values():
        StudyConfig(**values)


# ── Formatting ────────────────────────────────────────────────────────────────

def test_markdown_report():
    lines = format_report(_record(), StudyConfig()).splitlines()
    assert lines[0] == "k = 0, case = paper"
    assert lines[2] == "| " + " | ".join(HEADERS) + " |"
    assert lines[4] == "| 1/10 | 2.8934e-02 | - | 2.9406e-02 | - | 6.5665e-04 | - |"
    assert lines[5] == "| 1/20 | 1.4467e-02 | 1 | 1.4703e-02 | 1 | 1.6416e-04 | 2 |"


def test_csv_report_leaves_first_rates_empty():
    rows = list(csv.reader(io.StringIO(format_report(_record(), StudyConfig(format="csv")))))
    assert rows[0] == HEADERS
    assert rows[1] == ["1/10", "2.8934e-02", "", "2.9406e-02", "", "6.5665e-04", ""]
    assert rows[2][2] == "1"


def test_json_report():
    report = StudyReportOut.model_validate_json(format_report(_record(), StudyConfig(format="json")))
    assert [row.n for row in report.rows] == [10, 20]
    assert report.rows[0].energy_rate is None
    assert report.rows[1].superclose_rate == pytest.approx(2.0)
    assert report.final_rates["pressure"] == pytest.approx(1.0)


def test_infsup_column():
    record = _record()
    record.reports[1].infsup = 0.123456789
    rows = list(csv.reader(io.StringIO(format_report(record, StudyConfig(format="csv", infsup=True)))))
    assert rows[0][-1] == "beta_h"
    assert rows[1][-1] == ""
    assert rows[2][-1] == "0.123457"


# ── Running ───────────────────────────────────────────────────────────────────

def test_budget_checked_before_any_work():
    config = StudyConfig(k=1, n0=10, levels=4, max_unknowns=10_000)
    with pytest.raises(BudgetExceededError) as info:
        run_study(config)
    assert info.value.n == 80
    assert info.value.level == 3


def test_small_study(settings):
    result = run_study(StudyConfig(k=0, n0=2, levels=3, format="csv"), settings)
    reports = result.record.reports
    assert [r.n for r in reports] == [2, 4, 8]
    assert all(r.residual <= 1e-10 for r in reports)
    assert all(r.divergence_defect <= 1e-8 for r in reports)
    assert all(r.stability > 0 for r in reports)
    assert reports[-1].energy < reports[0].energy
    assert result.report.count("\n") == 4


def test_single_level_study(settings):
    result = run_study(StudyConfig(k=1, n0=2, levels=1), settings)
    assert result.record.final_rates() == {"energy": None, "pressure": None, "superclose": None}
    assert result.report.splitlines()[-1].endswith("| - |")


def test_study_logs_case_description(caplog, settings):
    with caplog.at_level("INFO", logger="wg_stokes.study"):
        run_study(StudyConfig(case="bubble", k=0, n0=2, levels=1), settings)
    assert f"case bubble: {get_case('bubble').notes}" in caplog.messages


def test_study_dumps_each_level(tmp_path, settings):
    config = StudyConfig(k=0, n0=1, levels=2, dump_mesh=tmp_path / "mesh.txt", dump_system=tmp_path / "sys.txt")
    run_study(config, settings)
    for n in (1, 2):
        assert (tmp_path / f"mesh_n{n}.txt").is_file()
        assert (tmp_path / f"sys_n{n}.txt").is_file()
        assert (tmp_path / f"sys_n{n}.txt.rhs").is_file()


def test_study_with_infsup(settings):
    result = run_study(StudyConfig(k=0, n0=2, levels=2, case="bubble", infsup=True), settings)
    assert all(r.infsup > 0 for r in result.record.reports)
