"""HTTP service exposing search, document lookup, stats, and health over
JSON. Requests are served from an immutable engine snapshot; the engine
loads in the background and every endpoint answers 503 until it is ready.
"""

from __future__ import annotations

import threading
from contextlib import asynccontextmanager
from dataclasses import replace

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .retrieval import RetrievalConfig, RetrievalError, SearchEngine, search


class SearchRequest(BaseModel):
    query: str = Field(min_length=1)
    k: int | None = Field(default=None, ge=1, le=1000)
    expand: bool = False
    retention: float | None = Field(default=None, gt=0, le=100)


def create_app(loader, retrieval_defaults: RetrievalConfig | None = None,
               cors_origins: list[str] | None = None,
               load_in_background: bool = True) -> FastAPI:
    """Build the service around an engine loader. The loader runs once (in
    a thread by default); until it finishes, endpoints return 503."""
    state: dict = {"engine": None, "error": None}

    def load():
        try:
            state["engine"] = loader()
        except Exception as exc:  # noqa: BLE001 - surfaced via /api/health
            state["error"] = f"{type(exc).__name__}: {exc}"

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if load_in_background:
            threading.Thread(target=load, daemon=True).start()
        else:
            load()
        yield

    app = FastAPI(title="taxoindex", version="0.1.0", lifespan=lifespan)
    if cors_origins:
        app.add_middleware(CORSMiddleware, allow_origins=cors_origins,
                           allow_methods=["*"], allow_headers=["*"])
    defaults = retrieval_defaults or RetrievalConfig()

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"error": "malformed request",
                                     "detail": exc.errors()})

    def engine_or_none() -> SearchEngine | None:
        return state["engine"]

    def unavailable() -> JSONResponse:
        body = {"ok": False, "loading": state["error"] is None}
        if state["error"]:
            body["error"] = state["error"]
        return JSONResponse(status_code=503, content=body)

    @app.get("/api/health")
    def health():
        if engine_or_none() is None:
            return unavailable()
        return {"ok": True}

    @app.post("/api/search")
    def api_search(request: SearchRequest):
        engine = engine_or_none()
        if engine is None:
            return unavailable()
        config = replace(defaults,
                         top_k=request.k if request.k is not None else defaults.top_k,
                         expand=request.expand,
                         retention_percent=(request.retention
                                            if request.retention is not None
                                            else defaults.retention_percent))
        result = search(request.query, engine, config)
        results = []
        for row in result.ranked:
            concepts = result.doc_concepts[row["doc_id"]]
            results.append({
                "doc_id": row["doc_id"],
                "title": engine.corpus.get(row["doc_id"]).title,
                "score": row["score"],
                "backbone_score": row["backbone_score"],
                "topic_overlap": row["topic_overlap"],
                "topics": concepts["topics"],
                "phrases": concepts["phrases"],
                "shared_topics": concepts["shared_topics"],
                "shared_phrases": concepts["shared_phrases"],
            })
        return {"query": result.query_text,
                "effective_query": result.effective_query,
                "results": results,
                "query_concepts": result.query_concepts}

    @app.get("/api/doc/{doc_id}")
    def api_doc(doc_id: str):
        engine = engine_or_none()
        if engine is None:
            return unavailable()
        if doc_id not in engine.corpus:
            return JSONResponse(status_code=404,
                                content={"error": f"unknown document {doc_id}"})
        doc = engine.corpus.get(doc_id)
        record = engine.records.get(doc_id)
        indexed = {
            "topics": sorted(engine.tailored.name(t) for t in record.core_topics),
            "phrases": [{"surface": engine.catalog.surface_text(pid), "score": score}
                        for pid, score in record.phrases],
        } if record else {"topics": [], "phrases": []}
        return {"id": doc.id, "title": doc.title, "abstract": doc.abstract,
                "indexed": indexed}

    @app.get("/api/stats")
    def api_stats():
        engine = engine_or_none()
        if engine is None:
            return unavailable()
        return {
            "documents": len(engine.corpus),
            "tailored_topics": engine.tailored.num_topics,
            "catalog_phrases": len(engine.catalog),
            "embedding_dim": engine.addon_config.dim,
            "trainable_parameters": engine.params.count(),
            "experts": engine.addon_config.num_experts,
        }

    return app
