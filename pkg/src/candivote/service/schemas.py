"""Request and response bodies for the HTTP service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

from ..config import RunConfig


class HealthResponse(BaseModel):
    status: str
    version: str


class SessionCreateRequest(BaseModel):
    """Parameters for a fresh online-learning session."""

    model_config = ConfigDict(extra="forbid")

    dim: int = Field(ge=1)
    capacity: int = Field(ge=1)
    learning_rate: float = Field(default=0.1, gt=0)
    seed: int = 0
    mode: Literal["baseline", "baseline_ea", "cs_pnn_only", "full"] = "full"
    beta: float = Field(default=0.5, gt=0, le=1)
    pilot_beta: bool = False
    eps_n: float = Field(default=1e-6, gt=0)
    eps_r: float = Field(default=1e-2, gt=0)
    alpha_r: float = Field(default=1.0, ge=0)
    augment: bool | None = None
    freeze: bool = True
    replay: bool = True


class SessionInfo(BaseModel):
    session_id: str
    dim: int
    capacity: int
    mode: str
    num_classes: int
    tasks_completed: int
    open_task: int | None
    records_trained: int
    stored_exemplars: int
    effective_beta: float


class SessionList(BaseModel):
    sessions: list[SessionInfo]


class SessionDeleted(BaseModel):
    deleted: str


class TaskStartRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_classes: int = Field(ge=1)


class TaskStartResponse(BaseModel):
    task: int
    classes: list[int]


class ObservationsRequest(BaseModel):
    """One stream batch: parallel feature rows and class labels."""

    model_config = ConfigDict(extra="forbid")

    features: list[list[float]] = Field(min_length=1)
    labels: list[int] = Field(min_length=1)


class ObservationsResponse(BaseModel):
    loss: float
    records_trained: int


class TaskFinishResponse(BaseModel):
    task: int
    effective_beta: float
    stored_exemplars: int


class PredictionsRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    features: list[list[float]] = Field(min_length=1)
    mode: Literal["baseline", "baseline_ea", "cs_pnn_only", "full"] | None = None


class PredictionsResponse(BaseModel):
    labels: list[int]


class ExperimentRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: RunConfig


class ExperimentResponse(BaseModel):
    metrics: dict
    timings: dict
    written: list[str]


class ErrorBody(BaseModel):
    error: str
    detail: str
