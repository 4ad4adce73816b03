from typing import Optional

from pydantic import BaseModel


class LevelOut(BaseModel):
    h: float
    n: int
    energy: float
    energy_rate: Optional[float] = None
    pressure: float
    pressure_rate: Optional[float] = None
    superclose: float
    superclose_rate: Optional[float] = None
    unknowns: int
    solver_path: str
    residual: float
    divergence_defect: float
    infsup: Optional[float] = None      # beta_h, only with --infsup
    stability: Optional[float] = None   # (||grad_w u_h|| + ||p_h||) / ||f||


class StudyReportOut(BaseModel):
    k: int
    case: str
    n0: int
    levels: int
    rows: list[LevelOut]
    final_rates: dict[str, Optional[float]]


class CheckOut(BaseModel):
    name: str
    passed: bool
    detail: str


class VerifyReportOut(BaseModel):
    passed: bool
    checks: list[CheckOut]
