from __future__ import annotations

import json
import logging
from functools import lru_cache
from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from qsmooth.schemas import FittedConstants

DEFAULT_CONSTANTS_FILE = Path(__file__).resolve().parent / "data" / "fitted_constants.json"

logger = logging.getLogger(__name__)


class LabSettings(BaseSettings):
    """Runtime knobs, overridable through QSLAB_* environment variables or a .env file."""

    model_config = SettingsConfigDict(env_prefix="QSLAB_", env_file=".env", extra="ignore")

    fft_threshold: int = Field(default=4096, ge=2, description="Combined support size above which convolution uses FFT")
    max_support_points: int = Field(default=2_000_000, ge=1, description="Cap on the support length of any pmf")
    n_max: int = Field(default=512, ge=2, description="Largest n for which exact pmfs are computed")
    mass_tol: float = Field(default=1e-9, gt=0)
    class_mean_tol: float = Field(default=1e-9, gt=0)
    brute_force_max: int = Field(default=9, ge=1)
    fft_noise_floor: float = Field(default=1e-15, ge=0, description="Relative floor below which FFT output is zeroed")
    coverage_tol: float = Field(default=1e-3, ge=0)
    threads: int = Field(default=1, ge=1)
    log_level: str = Field(default="WARNING")
    constants_file: Path = Field(default=DEFAULT_CONSTANTS_FILE)


@lru_cache(maxsize=1)
def get_settings() -> LabSettings:
    return LabSettings()


def load_constants(path: str | Path | None = None) -> FittedConstants:
    target = Path(path) if path is not None else get_settings().constants_file
    logger.debug("Loading fitted constants from %s", target)
    with open(target, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    return FittedConstants.model_validate(payload)
