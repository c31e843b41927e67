"""Pydantic request/response models for the service API."""

import base64
from typing import Optional

from pydantic import BaseModel, ConfigDict


class ErrorBody(BaseModel):
    error_type: str       # "validation" | "numerical" | "acceptance"
    message: str


class HealthResponse(BaseModel):
    status: str
    version: str


class ConfigRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: dict = {}


class ConfigResponse(BaseModel):
    config: dict
    canonical_json: str


class GenerateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: dict = {}
    scene_id: int = 0
    count: int = 1


class SceneDoc(BaseModel):
    doc: dict
    filename: str


class GenerateResponse(BaseModel):
    scenes: list[SceneDoc]


class TrainRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: dict = {}
    scenes: list[dict]
    resume_checkpoint_b64: Optional[str] = None


class LossPoint(BaseModel):
    step: int
    total: float
    focal: float
    l1: float


class TrainResponse(BaseModel):
    checkpoint_b64: str
    losses: list[LossPoint]
    losses_csv: str


class EvaluateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: dict = {}
    scenes: list[dict]
    checkpoint_b64: str


class EvaluateResponse(BaseModel):
    report: str
    map_score: float


class PredictRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: dict = {}
    scene: dict
    checkpoint_b64: str
    min_score: float = 0.0


class Detection(BaseModel):
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float
    class_id: int
    score: float


class PredictResponse(BaseModel):
    detections: list[Detection]


class AblateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: dict = {}
    scenes: list[dict]
    checkpoints_b64: dict[str, str] = {}
    train_missing: bool = False


class AblateRow(BaseModel):
    variant: str
    map_score: float


class AblateResponse(BaseModel):
    report: str
    rows: list[AblateRow]
    checkpoints_b64: dict[str, str]


class GradcheckRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    op: Optional[str] = None
    n_seeds: int = 10


class GradcheckResult(BaseModel):
    op: str
    max_rel_err: float
    tolerance: float
    passed: bool


class GradcheckResponse(BaseModel):
    results: list[GradcheckResult]
    report: str
    all_passed: bool


class SelftestResult(BaseModel):
    name: str
    passed: bool
    detail: str


class SelftestResponse(BaseModel):
    results: list[SelftestResult]
    report: str
    all_passed: bool


def encode_blob(blob):
    return base64.b64encode(blob).decode("ascii")


def decode_blob(text):
    return base64.b64decode(text.encode("ascii"))
