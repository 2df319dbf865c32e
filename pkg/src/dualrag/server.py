"""HTTP front end: ``POST /answer`` and ``GET /healthz``."""

from __future__ import annotations

import asyncio
import logging
import uuid

from fastapi import FastAPI, Request, status
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .pipeline import DualRAG
from .types import Question

logger = logging.getLogger(__name__)


class AnswerRequest(BaseModel):
    question: str = Field(..., min_length=1)
    id: str | None = None


class AnswerResponse(BaseModel):
    answer: str
    rounds: int
    trace_id: str


def create_app(model: DualRAG) -> FastAPI:
    """Build the app around a fitted :class:`DualRAG`; the index is shared read-only."""
    app = FastAPI(title="dualrag", version="0.1.0")

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=status.HTTP_400_BAD_REQUEST, content={"detail": exc.errors()})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/answer", response_model=AnswerResponse)
    async def answer(body: AnswerRequest):
        if not body.question.strip():
            return JSONResponse(status_code=400, content={"detail": "question is blank"})
        trace_id = uuid.uuid4().hex
        question = Question(body.id or trace_id, body.question)
        record = await asyncio.to_thread(model.run, question)
        if record.failed:
            logger.error("trace %s failed: %s", trace_id, record.error)
            return JSONResponse(
                status_code=status.HTTP_502_BAD_GATEWAY,
                content={"detail": record.error, "trace_id": trace_id},
            )
        return AnswerResponse(answer=record.answer_text, rounds=record.retrieval_rounds, trace_id=trace_id)

    return app


def serve(model: DualRAG, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    # uvicorn installs SIGINT/SIGTERM handlers and drains in-flight requests.
    uvicorn.run(create_app(model), host=host, port=port, log_level="info")
