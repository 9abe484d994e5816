"""Run configuration: one JSON-compatible document describing an experiment.

The same model backs the config file read by the CLI, the flag overrides
layered on top of it, and the request body of the service's experiment
endpoint. Validation happens before any work starts, and the validated
document is echoed verbatim into the run's metrics output.
"""

from __future__ import annotations

import json
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .data import SynthConfig
from .errors import ConfigError
from .exemplars import AugmentConfig
from .voting import VoteParams

__all__ = ["SynthSpec", "RunConfig", "config_from_dict", "load_config_file"]


class SynthSpec(BaseModel):
    """Synthetic benchmark parameters (see data.generate_synthetic)."""

    model_config = ConfigDict(extra="forbid")

    num_classes: int = Field(ge=1)
    dim: int = Field(ge=1)
    train_per_class: int = Field(ge=1)
    test_per_class: int = Field(ge=1)
    std: float = Field(default=1.0, gt=0)
    separation: float = Field(default=10.0, ge=0)
    seed: int = 0

    def to_synth_config(self) -> SynthConfig:
        return SynthConfig(
            num_classes=self.num_classes,
            dim=self.dim,
            train_per_class=self.train_per_class,
            test_per_class=self.test_per_class,
            std=self.std,
            separation=self.separation,
            seed=self.seed,
        )


class RunConfig(BaseModel):
    """Everything a run needs: data source, protocol, memory, inference."""

    model_config = ConfigDict(extra="forbid")

    # data source: either two embedding files or a synthetic spec
    train_path: str | None = None
    test_path: str | None = None
    synth: SynthSpec | None = None

    # protocol
    step_size: int = Field(default=2, ge=1)
    capacity: int = Field(ge=1)
    batch_size: int = Field(default=10, ge=1)
    learning_rate: float = Field(default=0.1, gt=0)
    epochs_per_task: int = Field(default=1, ge=1)
    first_task_epochs: int = Field(default=1, ge=1)

    # inference
    mode: Literal["baseline", "baseline_ea", "cs_pnn_only", "full"] = "full"
    beta: float = Field(default=0.5, gt=0, le=1)
    pilot_beta: bool = False
    eps_n: float = Field(default=1e-6, gt=0)
    eps_r: float = Field(default=1e-2, gt=0)

    # training variants
    alpha_r: float = Field(default=1.0, ge=0)
    augment: bool | None = None  # None: on for every mode except plain baseline
    freeze: bool = True
    replay: bool = True

    # reproducibility and output
    seed: int = 0
    class_order_seed: int | None = None
    out_dir: str | None = None

    @model_validator(mode="after")
    def _check_source(self) -> "RunConfig":
        have_files = self.train_path is not None or self.test_path is not None
        if have_files and (self.train_path is None or self.test_path is None):
            raise ValueError("train_path and test_path must be given together")
        if have_files and self.synth is not None:
            raise ValueError("give either train/test paths or a synth block, not both")
        if not have_files and self.synth is None:
            raise ValueError("no data source: set train_path/test_path or a synth block")
        return self

    @property
    def augment_enabled(self) -> bool:
        if self.augment is not None:
            return self.augment
        return self.mode != "baseline"

    def vote_params(self) -> VoteParams:
        return VoteParams(
            beta=self.beta,
            eps_n=self.eps_n,
            eps_r=self.eps_r,
            beta_mode="pilot" if self.pilot_beta else "fixed",
        )

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(alpha_r=self.alpha_r, enabled=self.augment_enabled)

    def echo(self) -> dict[str, Any]:
        """The validated document as plain JSON types, for provenance."""
        return self.model_dump(mode="json")


def _format_validation_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "config"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def config_from_dict(raw: dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_validation_error(exc)) from exc


def load_config_file(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be a JSON object")
    return config_from_dict(raw)
