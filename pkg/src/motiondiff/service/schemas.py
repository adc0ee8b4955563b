"""Pydantic request/response models for the HTTP service.

Frames travel as nested JSON number arrays (N rows of C channels); sequences
at desk scale are small enough that a binary transport is unnecessary.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field

Frames = list[list[float]]


class ModelInfo(BaseModel):
    name: str
    variant: str
    motion_channels: int
    schedule_T: int
    schedule_kind: str
    subjects: list[str]


class SequenceInfo(BaseModel):
    id: str
    kind: str
    frames: int
    channels: int
    fps: float
    subject: str


class SequencePayload(SequenceInfo):
    data: Frames


class SynthesizeRequest(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    model: str
    length: int = Field(ge=1)
    seed: int = 0
    scale: float = 0.5
    count: int = Field(default=1, ge=1, le=64)
    subject: str | None = None
    audio: Frames | None = None        # (length, 64) conditioning features
    fps: float = 30.0


class GeneratedSequence(BaseModel):
    data: Frames
    kind: str
    fps: float
    subject: str


class SynthesizeResponse(BaseModel):
    request: SynthesizeRequest
    elapsed_ms: float
    sequences: list[GeneratedSequence]


class EditRequest(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    model: str
    sequence: str | None = None        # sequence id under the run directory
    frames: Frames | None = None       # or inline base frames
    mask: list[float] | None = None    # explicit 0/1 per-frame mask
    keyframes: dict[int, list[float]] | None = None  # frame -> channel values
    seed: int = 0
    scale: float = 0.5
    audio: Frames | None = None
    fps: float = 30.0


class BoundaryReport(BaseModel):
    max_boundary_delta: float
    median_generated_delta: float
    ratio: float
    warning: bool


class EditResponse(BaseModel):
    request: EditRequest
    elapsed_ms: float
    data: Frames
    kind: str
    fps: float
    boundary: BoundaryReport


class MetricsRequest(BaseModel):
    pred: Frames
    gt: Frames
    kind: str = "face"                 # "face" | "head"
    fps: float = 30.0
    samples: list[Frames] | None = None  # optional sample set for diversity


class MetricsResponse(BaseModel):
    request: MetricsRequest
    elapsed_ms: float
    lip_sync: float | None = None
    beat_align: float | None = None
    diversity: float | None = None
