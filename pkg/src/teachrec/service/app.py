"""FastAPI application wrapping the recommendation core."""

from __future__ import annotations

import logging

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from ..config import AppConfig
from .schemas import (
    EventAck,
    EventRequest,
    HealthResponse,
    MetricsResponse,
    RecommendationRequest,
    RecommendationResponse,
    RefreshResponse,
)
from .state import ServiceError, ServiceState

logger = logging.getLogger(__name__)


def create_app(config: AppConfig | None = None) -> FastAPI:
    config = config or AppConfig()
    logging.basicConfig(level=config.log_level.upper())
    state = ServiceState(config)
    state.load_initial()

    app = FastAPI(title="teacher recommendation service", version="0.1.0")
    app.state.service = state

    @app.exception_handler(ServiceError)
    async def service_error_handler(request: Request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status_code,
            content={"code": exc.code, "message": exc.message},
        )

    @app.exception_handler(RequestValidationError)
    async def validation_error_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"code": "bad_request", "message": str(exc.errors())},
        )

    @app.get("/healthz", response_model=HealthResponse)
    def healthz():
        return state.health()

    @app.post("/v1/recommendations", response_model=RecommendationResponse)
    def recommendations(request: RecommendationRequest):
        return state.recommend(request.student_id, request.k)

    @app.post("/v1/events", response_model=EventAck, status_code=202)
    def events(request: EventRequest):
        data = (
            request.course.model_dump()
            if request.kind == "course"
            else request.outcome.model_dump()
        )
        state.append_event(request.event_id, request.kind, data)
        return EventAck(event_id=request.event_id)

    @app.post("/v1/refresh", response_model=RefreshResponse)
    def refresh():
        return state.refresh()

    @app.get("/v1/metrics", response_model=MetricsResponse)
    def metrics():
        return state.metrics()

    return app
