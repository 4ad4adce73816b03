import os
from functools import lru_cache

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide knobs, read from WG_STOKES_* environment variables (and .env)."""

    model_config = SettingsConfigDict(env_prefix="WG_STOKES_", env_file=".env", extra="ignore")

    threads: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    chunk_size: int = Field(default=2048, ge=1)        # elements per work unit, independent of threads
    direct_limit: int = Field(default=500_000, ge=1)   # unknowns; MINRES above (non-deterministic runs)
    max_unknowns: int = Field(default=2_000_000, ge=1)
    solver_tol: float = Field(default=1e-10, gt=0)
    dense_infsup_limit: int = Field(default=4000, ge=1)
    log_level: str = "INFO"


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings()
