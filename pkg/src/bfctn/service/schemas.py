"""Request and response models of the fusion service."""

from __future__ import annotations

from enum import Enum
from typing import Any, Literal

from pydantic import BaseModel, Field, model_validator

from ..runner import ABLATION_KINDS, ScenarioSpec


class JobState(str, Enum):
    QUEUED = "queued"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


class ErrorInfo(BaseModel):
    category: str
    message: str


class ScenarioRequest(BaseModel):
    """Either ``reference_path`` (simulate, fuse, score) or both observation paths (fuse only)."""

    spec: ScenarioSpec = Field(default_factory=ScenarioSpec)
    reference_path: str | None = None
    hsi_path: str | None = None
    msi_path: str | None = None
    out_dir: str

    @model_validator(mode="after")
    def _inputs(self):
        pair = self.hsi_path is not None and self.msi_path is not None
        if (self.reference_path is None) == (not pair):
            if self.reference_path is not None:
                raise ValueError("give either reference_path or hsi_path + msi_path, not both")
            raise ValueError("reference_path or hsi_path + msi_path is required")
        return self


class AblationRequest(BaseModel):
    kind: Literal[ABLATION_KINDS]  # type: ignore[valid-type]
    spec: ScenarioSpec = Field(default_factory=lambda: ScenarioSpec.preset("scenario1"))
    grid: list[Any] | None = None
    reference_path: str
    out_dir: str


class JobCreated(BaseModel):
    id: str
    state: JobState


class JobStatus(BaseModel):
    id: str
    kind: str
    state: JobState
    result: dict[str, Any] | None = None
    error: ErrorInfo | None = None


class Health(BaseModel):
    status: str = "ok"
    version: str
