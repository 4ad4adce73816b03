"""
Convergence studies: solve one manufactured problem on a sequence of
uniformly refined meshes and report errors with observed rates.
"""

import csv
import io
import logging
import time
from pathlib import Path
from typing import Literal, NamedTuple, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

from wg_stokes.analysis import (
    ConvergenceRecord,
    ErrorReport,
    InfSupError,
    convergence_rates,
    divergence_defect,
    energy_error,
    estimate_infsup,
    pressure_error,
    stability_ratio,
    superclose_error,
)
from wg_stokes.cases import CASES, get_case
from wg_stokes.mesh import build_structured, refine, write_mesh
from wg_stokes.polyquad import QuadratureError, dim_pk
from wg_stokes.settings import Settings, get_settings
from wg_stokes.schemas import LevelOut, StudyReportOut
from wg_stokes.system import SolverError, assemble, solve, write_system
from wg_stokes.weakops import DegenerateElementError, build_element_operators

logger = logging.getLogger(__name__)


class StudyError(RuntimeError):
    def __init__(self, message: str, level: Optional[int] = None, n: Optional[int] = None):
        super().__init__(message)
        self.level = level
        self.n = n


class BudgetExceededError(StudyError):
    """Finest level would exceed the unknown budget."""


class StudyConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k: int = Field(default=0, ge=0)
    n0: int = Field(default=10, ge=1)
    levels: int = Field(default=4, ge=1)
    case: str = "paper"
    format: Literal["csv", "md", "json"] = "md"
    tol: float = Field(default=1e-10, gt=0)
    deterministic: bool = False
    dump_mesh: Optional[Path] = None
    dump_system: Optional[Path] = None
    max_unknowns: Optional[int] = Field(default=None, ge=1)
    infsup: bool = False
    output: Optional[Path] = None

    @field_validator("case")
    @classmethod
    def _known_case(cls, value: str) -> str:
        if value not in CASES:
            raise ValueError(f"unknown case {value!r}; choose from {', '.join(sorted(CASES))}")
        return value

    @property
    def grid_counts(self) -> list[int]:
        return [self.n0 * 2 ** j for j in range(self.levels)]


class StudyResult(NamedTuple):
    record: ConvergenceRecord
    report: str


def predicted_unknowns(n: int, k: int) -> int:
    """Unknown count on the structured n x n mesh, without building it."""
    triangles, interior_edges = 2 * n * n, 3 * n * n - 2 * n
    return 3 * triangles * dim_pk(k) + 2 * interior_edges * (k + 2) + 1


def load_presets(path) -> dict[str, dict]:
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    return data.get("studies", {})


def _level_path(path: Path, n: int) -> Path:
    return path.with_name(f"{path.stem}_n{n}{path.suffix}")


# ── Run ───────────────────────────────────────────────────────────────────────

def run_study(config: StudyConfig, settings: Optional[Settings] = None) -> StudyResult:
    settings = settings or get_settings()
    case = get_case(config.case)
    if not case.has_exact_solution:
        raise StudyError(f"case {case.name!r} has no exact solution to measure errors against")

    budget = config.max_unknowns or settings.max_unknowns
    finest = config.grid_counts[-1]
    needed = predicted_unknowns(finest, config.k)
    if needed > budget:
        raise BudgetExceededError(
            f"finest level n={finest} needs {needed} unknowns, budget is {budget}",
            level=config.levels - 1, n=finest,
        )

    logger.info("=== Study starting: case=%s k=%d n0=%d levels=%d ===", case.name, config.k, config.n0, config.levels)
    logger.info("case %s: %s", case.name, case.notes)
    started = time.perf_counter()
    reports: list[ErrorReport] = []
    mesh = None

    for level, n in enumerate(config.grid_counts):
        logger.info("--- Level %d/%d: n=%d ---", level + 1, config.levels, n)
        mesh = build_structured(n) if mesh is None else refine(mesh)
        level_started = time.perf_counter()
        try:
            ops = build_element_operators(mesh, config.k, settings)
            system = assemble(mesh, config.k, case, ops=ops, tol=config.tol, settings=settings)
            if config.dump_mesh:
                write_mesh(mesh, _level_path(config.dump_mesh, n))
            if config.dump_system:
                write_system(system, _level_path(config.dump_system, n))
            solution = solve(system, deterministic=config.deterministic, settings=settings)
        except (SolverError, DegenerateElementError, QuadratureError) as exc:
            raise StudyError(f"level {level} (n={n}) failed: {exc}", level=level, n=n) from exc

        report = ErrorReport(
            h=1.0 / n,
            n=n,
            energy=energy_error(solution, case.grad_u, mesh, ops, settings),
            pressure=pressure_error(solution, case.p, mesh, settings),
            superclose=superclose_error(solution, case.u, mesh, ops, settings),
            unknowns=system.size,
            solver_path=solution.diagnostics.path,
            residual=solution.diagnostics.residual,
            divergence_defect=divergence_defect(solution, system),
            stability=stability_ratio(solution, case, mesh, ops, settings),
        )
        if config.infsup:
            try:
                report.infsup = estimate_infsup(mesh, config.k, ops, settings)
            except InfSupError as exc:
                logger.warning("inf-sup skipped at n=%d: %s", n, exc)
        reports.append(report)
        logger.info("Level %d done: energy=%.4e pressure=%.4e superclose=%.4e (%.1fs)",
                    level + 1, report.energy, report.pressure, report.superclose,
                    time.perf_counter() - level_started)

    record = convergence_rates(reports)
    logger.info("=== Study done in %.1fs: final rates %s ===", time.perf_counter() - started,
                {c: None if r is None else round(r, 4) for c, r in record.final_rates().items()})
    return StudyResult(record, format_report(record, config))


# ── Formatting ────────────────────────────────────────────────────────────────

HEADERS = ["h", "energy error", "rate", "pressure error", "rate", "superclose error", "rate"]


def format_error(value: float) -> str:
    return f"{value:.4e}"


def format_rate(value: Optional[float], empty: str) -> str:
    return empty if value is None else f"{value:.5g}"


def _table_rows(record: ConvergenceRecord, empty: str, with_infsup: bool) -> list[list[str]]:
    rows = []
    for level, report in enumerate(record.reports):
        row = [f"1/{report.n}"]
        for column in ("energy", "pressure", "superclose"):
            row += [format_error(report.error(column)), format_rate(record.rate(column, level), empty)]
        if with_infsup:
            row.append(empty if report.infsup is None else f"{report.infsup:.6f}")
        rows.append(row)
    return rows


def to_schema(record: ConvergenceRecord, config: StudyConfig) -> StudyReportOut:
    rows = []
    for level, r in enumerate(record.reports):
        rows.append(LevelOut(
            h=r.h, n=r.n,
            energy=r.energy, energy_rate=record.rate("energy", level),
            pressure=r.pressure, pressure_rate=record.rate("pressure", level),
            superclose=r.superclose, superclose_rate=record.rate("superclose", level),
            unknowns=r.unknowns, solver_path=r.solver_path, residual=r.residual,
            divergence_defect=r.divergence_defect, infsup=r.infsup, stability=r.stability,
        ))
    return StudyReportOut(k=config.k, case=config.case, n0=config.n0, levels=config.levels,
                          rows=rows, final_rates=record.final_rates())


def format_report(record: ConvergenceRecord, config: StudyConfig) -> str:
    headers = HEADERS + (["beta_h"] if config.infsup else [])
    if config.format == "json":
        return to_schema(record, config).model_dump_json(indent=2) + "\n"
    if config.format == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(headers)
        writer.writerows(_table_rows(record, "", config.infsup))
        return buffer.getvalue()
    lines = [
        f"k = {config.k}, case = {config.case}",
        "",
        "| " + " | ".join(headers) + " |",
        "|" + "|".join("---" for _ in headers) + "|",
    ]
    lines += ["| " + " | ".join(row) + " |" for row in _table_rows(record, "-", config.infsup)]
    return "\n".join(lines) + "\n"
