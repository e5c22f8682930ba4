"""REST front end (FastAPI)."""
from __future__ import annotations

import json

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool

from .core import InferenceService, RecommendRequest, ServeError


def create_app(service: InferenceService) -> FastAPI:
    app = FastAPI(title="warpbench", docs_url=None, redoc_url=None)

    @app.exception_handler(ServeError)
    async def _serve_error(request: Request, exc: ServeError):
        return JSONResponse(exc.as_dict(), status_code=exc.status)

    @app.post("/recommend")
    async def recommend(request: Request):
        raw = await request.body()
        try:
            body = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError):
            raise ServeError("bad_request", "body is not valid JSON", 400)
        return await run_in_threadpool(service.recommend, RecommendRequest.from_mapping(body))

    @app.get("/models")
    def models():
        return {"models": service.inventory()}

    @app.get("/health")
    def health():
        return service.health()

    return app


def run(service: InferenceService, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    uvicorn.run(create_app(service), host=host, port=port, log_level="info")
