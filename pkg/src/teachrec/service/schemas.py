"""Request/response bodies for the HTTP API."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator


class RecommendationRequest(BaseModel):
    student_id: str = Field(min_length=1)
    k: Optional[int] = Field(default=None, ge=1)


class SlateEntryOut(BaseModel):
    teacher_id: str
    model_score: float
    boost: float
    combined_score: float


class RecommendationResponse(BaseModel):
    student_id: str
    generated_at: str
    model_version: str
    cold_student: bool
    entries: list[SlateEntryOut]


class CourseEventData(BaseModel):
    student_id: str = Field(min_length=1)
    teacher_id: str = Field(min_length=1)
    timestamp_iso8601: str
    duration_minutes: float = Field(gt=0)
    stats: dict[str, float] = Field(default_factory=dict)


class OutcomeEventData(BaseModel):
    student_id: str = Field(min_length=1)
    outcome: Literal["completed", "dropped"]
    decided_at_iso8601: str


class EventRequest(BaseModel):
    event_id: str = Field(min_length=1)
    kind: Literal["course", "outcome"]
    course: Optional[CourseEventData] = None
    outcome: Optional[OutcomeEventData] = None

    @model_validator(mode="after")
    def _payload_matches_kind(self):
        if self.kind == "course" and self.course is None:
            raise ValueError("course event requires a 'course' payload")
        if self.kind == "outcome" and self.outcome is None:
            raise ValueError("outcome event requires an 'outcome' payload")
        return self


class EventAck(BaseModel):
    event_id: str
    status: str = "accepted"
    pending_refresh: bool = True


class RefreshResponse(BaseModel):
    students: int
    teachers: int
    course_records: int
    model_version: Optional[str]
    model_reloaded: bool


class MetricsResponse(BaseModel):
    diversity: float
    new_teacher_ratio: float
    slate_count: int


class HealthResponse(BaseModel):
    status: str
    model_loaded: bool
    students: int
    teachers: int


class ErrorBody(BaseModel):
    code: str
    message: str
