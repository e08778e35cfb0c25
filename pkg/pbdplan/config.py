import logging
from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Process-wide settings

    Values come from environment variables prefixed with PBDPLAN_
    (e.g. PBDPLAN_DATABASE_URL) or from a local .env file.
    """
    model_config = SettingsConfigDict(env_prefix="PBDPLAN_", env_file=".env", extra="ignore")

    # Results store - sqlite file by default, any SQLAlchemy URL works
    database_url: str = "sqlite:///./pbdplan.db"
    log_level: str = "INFO"

    # Highest total order accepted by gaussian.central_moment
    moment_order_cap: int = 10
    # Eigenvalues down to -psd_tolerance are clamped to zero
    psd_tolerance: float = 1e-10

    results_dir: str = "results"


@lru_cache
def get_settings() -> Settings:
    return Settings()


LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def configure_logging(level: str | None = None) -> None:
    """
    Install the package log format once

    Called by the CLI and by the FastAPI app on startup.
    """
    level = (level or get_settings().log_level).upper()
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger("pbdplan").setLevel(level)
