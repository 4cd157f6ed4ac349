# config/experiment_config.py
"""
Experiment configuration: one flat key = value file per run, validated by pydantic.
"""
from typing import Any, Dict, Literal, Optional, Tuple
import hashlib
import json
import os

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config.settings import settings
from drift.errors import SamplerValidationError
from drift.schedules import NoiseSchedule, geometric_schedule
from drift.score_models import MODEL_PRESETS

SamplerName = Literal["ALS", "AMS", "MC-only", "LC-only", "RD-MC", "RD-LC", "EM-MC", "EM-LC", "RD", "EM"]

# sampler -> (family, predictor, corrector)
SAMPLER_PLANS: Dict[str, Tuple[str, Optional[str], Optional[str]]] = {
    "ALS": ("als", None, None),
    "AMS": ("ams", None, None),
    "MC-only": ("pc", None, "MC"),
    "LC-only": ("pc", None, "LC"),
    "RD-MC": ("pc", "RD", "MC"),
    "RD-LC": ("pc", "RD", "LC"),
    "EM-MC": ("pc", "EM", "MC"),
    "EM-LC": ("pc", "EM", "LC"),
    "RD": ("pc", "RD", None),
    "EM": ("pc", "EM", None),
}


class ExperimentConfig(BaseModel):
    """
    Everything that determines a run's output bytes (plus where to write them).
    """
    model_config = ConfigDict(frozen=True, extra="forbid", protected_namespaces=())

    model_name: str
    sampler: SamplerName
    variant: Literal["VE", "VP"] = "VE"
    sigma_max: float = Field(gt=0)
    sigma_min: float = Field(gt=0)
    n: int = Field(ge=2)
    n_sigma: int = Field(default=1, ge=1)
    epsilon: float = Field(gt=0)
    delta: float = Field(default=0.1, gt=0, le=1)
    chains: int = Field(gt=0)
    master_seed: int = Field(ge=0, lt=2**64)
    denoise: bool = False
    output_dir: str = os.path.join(settings.OUTPUT_DIR, "default")

    epsilon0: Optional[float] = Field(default=None, gt=0)
    snr_ratio: Literal["score_over_noise", "noise_over_score"] = "score_over_noise"
    alpha_tilde_mode: Literal["per_step", "per_level"] = "per_step"
    n_projections: int = Field(default=settings.DEFAULT_PROJECTIONS, ge=1)
    reference_size: Optional[int] = Field(default=None, gt=0)

    @field_validator("model_name")
    @classmethod
    def _known_model(cls, value: str) -> str:
        if value not in MODEL_PRESETS:
            raise ValueError(f"unknown preset {value!r}; choose from {sorted(MODEL_PRESETS)}")
        return value

    @model_validator(mode="after")
    def _consistent(self) -> "ExperimentConfig":
        if self.sigma_max <= self.sigma_min:
            raise ValueError(f"sigma_max must exceed sigma_min ({self.sigma_max} <= {self.sigma_min})")
        if self.sampler in ("ALS", "AMS") and self.variant != "VE":
            raise ValueError(f"{self.sampler} runs on the VE ladder only")
        return self

    @classmethod
    def from_values(cls, values: Dict[str, Any]) -> "ExperimentConfig":
        """Validate raw values, reporting the first offending field by name."""
        try:
            return cls(**values)
        except ValidationError as exc:
            error = exc.errors()[0]
            field = ".".join(str(part) for part in error.get("loc", ())) or "config"
            raise SamplerValidationError(field, error.get("msg", str(exc))) from None

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        """
        Load a flat config file (one key = value per line, # comments).

        Args:
            path: Path to the config file

        Returns:
            Validated ExperimentConfig
        """
        if not os.path.isfile(path):
            raise SamplerValidationError("config", f"no such config file: {path}")
        raw = dotenv_values(path)
        values = {key: value for key, value in raw.items() if value not in (None, "")}
        return cls.from_values(values)

    def with_updates(self, **updates) -> "ExperimentConfig":
        """Copy with some fields replaced, revalidated."""
        return self.from_values({**self.model_dump(), **updates})

    def schedule(self) -> NoiseSchedule:
        return geometric_schedule(
            self.sigma_max, self.sigma_min, self.n,
            n_sigma=self.n_sigma, epsilon=self.epsilon, delta=self.delta
        )

    @property
    def plan(self) -> Tuple[str, Optional[str], Optional[str]]:
        return SAMPLER_PLANS[self.sampler]

    @property
    def nfe(self) -> int:
        """Score evaluations per chain."""
        family, predictor, corrector = self.plan
        if family in ("als", "ams") or predictor is None:
            count = self.n * self.n_sigma
        elif corrector is None:
            count = self.n
        else:
            count = self.n * (1 + self.n_sigma)
        return count + (1 if self.denoise else 0)

    def config_hash(self) -> str:
        payload = json.dumps(self.model_dump(exclude={"output_dir"}), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()
