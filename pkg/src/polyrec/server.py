"""HTTP/JSON surface over the engine.

Paths:
    POST   /domains                       register (201 {version})
    PUT    /domains/{id}/profile          swap profile (200 {version})
    GET    /domains/{id}                  config snapshot
    DELETE /domains/{id}                  drop domain and its files
    POST   /domains/{id}/items            ingest (JSONL or JSON array)
    POST   /domains/{id}/interactions     ingest
    POST   /domains/{id}/embeddings       ingest
    GET    /domains/{id}/items            export as JSONL
    GET    /domains/{id}/interactions     export as JSONL
    GET    /domains/{id}/embeddings       export as JSONL
    POST   /domains/{id}/recommendations  serve one request
    POST   /domains/{id}/snapshot         write a point-in-time snapshot
    GET    /health                        per-domain health report
"""

from __future__ import annotations

import json
import threading
import time

import uvicorn
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse, PlainTextResponse

from .engine import RecommenderEngine, parse_recommend_request
from .errors import (
    CorruptSnapshot,
    DuplicateDomain,
    InvalidConfig,
    IoFailure,
    MalformedRequest,
    UnknownDomain,
)


def create_app(engine: RecommenderEngine) -> FastAPI:
    app = FastAPI(title="polyrec", docs_url=None, redoc_url=None)
    app.state.engine = engine

    @app.exception_handler(UnknownDomain)
    async def _unknown_domain(_req, exc):
        return JSONResponse({"error": str(exc)}, status_code=404)

    @app.exception_handler(DuplicateDomain)
    async def _duplicate(_req, exc):
        return JSONResponse({"error": str(exc)}, status_code=409)

    @app.exception_handler(InvalidConfig)
    async def _invalid_config(_req, exc):
        return JSONResponse({"error": str(exc)}, status_code=400)

    @app.exception_handler(MalformedRequest)
    async def _malformed(_req, exc):
        return JSONResponse({"error": str(exc)}, status_code=400)

    @app.exception_handler(CorruptSnapshot)
    async def _corrupt(_req, exc):
        return JSONResponse({"error": str(exc)}, status_code=409)

    @app.exception_handler(IoFailure)
    async def _io_failure(_req, exc):
        return JSONResponse({"error": str(exc)}, status_code=500)

    @app.post("/domains", status_code=201)
    def register_domain(body: dict):
        version = engine.register_domain(body)
        return {"version": version}

    @app.put("/domains/{domain_id}/profile")
    def update_profile(domain_id: str, body: dict):
        version = engine.update_profile(domain_id, body)
        return {"version": version}

    @app.get("/domains/{domain_id}")
    def get_domain(domain_id: str):
        return engine.get_domain(domain_id).to_dict()

    @app.delete("/domains/{domain_id}")
    def delete_domain(domain_id: str):
        engine.delete_domain(domain_id)
        return {"deleted": domain_id}

    def _ingest(domain_id: str, request: Request, body: bytes, op):
        records = _parse_records(request.headers.get("content-type", ""), body)
        result = op(domain_id, records)
        return result.to_dict()

    @app.post("/domains/{domain_id}/items")
    async def ingest_items(domain_id: str, request: Request):
        body = await request.body()
        return _ingest(domain_id, request, body, engine.ingest_items)

    @app.post("/domains/{domain_id}/interactions")
    async def ingest_interactions(domain_id: str, request: Request):
        body = await request.body()
        return _ingest(domain_id, request, body, engine.ingest_interactions)

    @app.post("/domains/{domain_id}/embeddings")
    async def ingest_embeddings(domain_id: str, request: Request):
        body = await request.body()
        return _ingest(domain_id, request, body, engine.ingest_embeddings)

    @app.get("/domains/{domain_id}/items")
    def export_items(domain_id: str):
        return _jsonl_response(engine.iter_items(domain_id))

    @app.get("/domains/{domain_id}/interactions")
    def export_interactions(domain_id: str):
        return _jsonl_response(engine.iter_interactions(domain_id))

    @app.get("/domains/{domain_id}/embeddings")
    def export_embeddings(domain_id: str):
        return _jsonl_response(engine.iter_embeddings(domain_id))

    @app.post("/domains/{domain_id}/recommendations")
    def recommend(domain_id: str, body: dict):
        request = parse_recommend_request(body)
        return engine.recommend(domain_id, request).to_dict()

    @app.post("/domains/{domain_id}/snapshot")
    def snapshot(domain_id: str):
        return {"snapshot": engine.snapshot(domain_id)}

    @app.get("/health")
    def health():
        return engine.health()

    return app


def _parse_records(content_type: str, body: bytes) -> list:
    """Accept a JSON array (application/json) or JSONL (anything else).

    Rejection line numbers are 1-based positions among the submitted records
    (blank JSONL lines are dropped before numbering). A line that is not
    valid JSON keeps its position and is rejected per record downstream.
    """
    if "application/json" in content_type:
        try:
            parsed = json.loads(body or b"null")
        except ValueError as exc:
            raise MalformedRequest(f"invalid JSON body: {exc}") from exc
        if isinstance(parsed, list):
            return parsed
        if isinstance(parsed, dict):
            return [parsed]
        raise MalformedRequest("JSON body must be an array of records")
    records = []
    for line in body.splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            records.append(json.loads(line))
        except ValueError:
            records.append(line.decode("utf-8", "replace"))  # rejected downstream
    return records


def _jsonl_response(records: list) -> Response:
    text = "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in records)
    return PlainTextResponse(text, media_type="application/x-ndjson")


class BackgroundServer:
    """uvicorn in a daemon thread; used by tests, eval and bench helpers."""

    def __init__(self, engine: RecommenderEngine, host: str = "127.0.0.1", port: int = 0):
        self.engine = engine
        config = uvicorn.Config(
            create_app(engine),
            host=host,
            port=port,
            log_level="warning",
            access_log=False,
        )
        self._server = uvicorn.Server(config)
        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self.base_url = ""

    def start(self) -> "BackgroundServer":
        self._thread.start()
        deadline = time.time() + 10
        while not self._server.started:
            if time.time() > deadline:
                raise RuntimeError("server failed to start within 10s")
            if not self._thread.is_alive():
                raise RuntimeError("server thread exited during startup")
            time.sleep(0.01)
        sock = self._server.servers[0].sockets[0]
        host, port = sock.getsockname()[:2]
        self.base_url = f"http://{host}:{port}"
        return self

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10)

    def __enter__(self) -> "BackgroundServer":
        return self.start()

    def __exit__(self, *_exc) -> None:
        self.stop()


def run(engine: RecommenderEngine, host: str, port: int) -> None:
    """Blocking server entry point for the CLI."""
    uvicorn.run(create_app(engine), host=host, port=port, log_level="info")
