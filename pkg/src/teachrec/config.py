"""Application configuration shared by the CLI and the HTTP service."""

from __future__ import annotations

import json
import os

from pydantic import BaseModel, Field, field_validator

from .gbdt import TrainParams
from .ranking import BoostParams

LOG_LEVEL_ENV = "TEACHREC_LOG_LEVEL"


class BoostSettings(BaseModel):
    alpha: float = 0.04
    beta: float = 1.0
    delta: int = 100

    def to_params(self) -> BoostParams:
        return BoostParams(alpha=self.alpha, beta=self.beta, delta=self.delta)

    @field_validator("alpha", "beta", "delta")
    @classmethod
    def _positive(cls, v):
        if not v > 0:
            raise ValueError("boost parameters must be positive")
        return v


class GbdtSettings(BaseModel):
    n_trees: int = Field(default=200, ge=1)
    max_depth: int = Field(default=4, ge=0)
    min_samples_leaf: int = Field(default=20, ge=1)
    learning_rate: float = Field(default=0.1, gt=0, le=1)
    subsample: float = Field(default=1.0, gt=0, le=1)

    def to_params(self, rng_seed: int) -> TrainParams:
        return TrainParams(
            n_trees=self.n_trees,
            max_depth=self.max_depth,
            min_samples_leaf=self.min_samples_leaf,
            learning_rate=self.learning_rate,
            subsample=self.subsample,
            rng_seed=rng_seed,
        )


class AppConfig(BaseModel):
    courses_csv: str = "data/courses.csv"
    outcomes_csv: str = "data/outcomes.csv"
    students_csv: str = "data/students.csv"
    teachers_csv: str = "data/teachers.csv"
    model_path: str = "artifacts/model.json"
    schema_path: str = "artifacts/feature_schema.json"
    event_log_path: str = "artifacts/events.jsonl"
    boost: BoostSettings = Field(default_factory=BoostSettings)
    gbdt: GbdtSettings = Field(default_factory=GbdtSettings)
    k: int = Field(default=10, ge=1)
    bind: str = "127.0.0.1:8000"
    log_level: str = "INFO"
    seed: int = 0
    cold_start_serving: bool = True
    max_school_vocab: int = Field(default=50, ge=1)

    @classmethod
    def load(cls, path: str | None = None, **overrides) -> "AppConfig":
        """Read a JSON config file, then apply non-None keyword overrides.

        The log level may additionally be overridden by the environment.
        """
        data: dict = {}
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        for key, value in overrides.items():
            if value is not None:
                data[key] = value
        env_level = os.environ.get(LOG_LEVEL_ENV)
        if env_level:
            data["log_level"] = env_level
        return cls.model_validate(data)
