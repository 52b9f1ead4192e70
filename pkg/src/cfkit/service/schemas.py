"""Request and response payloads for the session service."""
from __future__ import annotations

from typing import Any

from pydantic import BaseModel, Field

RawValue = float | str


class WireUpdate(BaseModel):
    """One constraint edit, features referenced by name."""
    action: str
    feature: str
    constraint: dict[str, Any] | None = None


class CreateSessionRequest(BaseModel):
    dataset: str
    instance_id: int
    init: str = "knn"
    strategy: str = "fix_violators"
    params: dict[str, Any] | None = None
    constraints: list[WireUpdate] = Field(default_factory=list)


class ConstraintUpdatesRequest(BaseModel):
    updates: list[WireUpdate]


class DatasetInfo(BaseModel):
    name: str
    schema_: dict[str, Any] = Field(alias="schema")
    n_train: int
    n_test: int
    negatives: list[int]
    epsilon: float

    model_config = {"populate_by_name": True, "serialize_by_alias": True}


class DatasetListResponse(BaseModel):
    datasets: list[DatasetInfo]


class InstanceResponse(BaseModel):
    dataset: str
    instance_id: int
    values: dict[str, RawValue]
    prediction: int


class SessionInfo(BaseModel):
    session_id: str
    dataset: str
    instance_id: int
    status: str
    iteration: int
    constraints: list[dict[str, Any]]
    epsilon: float


class FeatureDiff(BaseModel):
    feature: str
    before: RawValue
    after: RawValue
    changed: bool
    delta: float  # normalized-space absolute change


class ProposeResponse(BaseModel):
    session_id: str
    status: str
    iteration: int
    success: bool
    generations: int
    elapsed: float
    proximity: float | None
    sparsity: float | None
    epsilon: float
    candidate: dict[str, RawValue] | None
    diff: list[FeatureDiff]


class ConstraintsResponse(BaseModel):
    session_id: str
    status: str
    iteration: int
    constraints: list[dict[str, Any]]


class HistoryItem(BaseModel):
    step: int
    constraints: list[dict[str, Any]]
    success: bool
    generations: int
    elapsed: float
    proximity: float | None
    sparsity: float | None
    candidate: dict[str, RawValue] | None
    diff: list[FeatureDiff]


class HistoryResponse(BaseModel):
    session_id: str
    status: str
    iteration: int
    items: list[HistoryItem]


class AcceptResponse(BaseModel):
    session_id: str
    status: str
    final: dict[str, RawValue]
    proximity: float | None
    sparsity: float | None


class DeleteResponse(BaseModel):
    deleted: bool


class ErrorBody(BaseModel):
    code: str
    message: str


class ErrorResponse(BaseModel):
    error: ErrorBody
