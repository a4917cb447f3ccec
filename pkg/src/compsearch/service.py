"""Read-only HTTP facade over a loaded index and encoder.

The service never mutates: the index is built offline by the CLI, loaded once
at startup, and shared by all request handlers. POST /query accepts the same
canvas JSON shape the CLI uses, GET /classes and GET /status bootstrap the UI.
Validation failures return 400 with one message per problem; a missing index
returns 503.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .canvas import CanvasError, canvas_from_obj, load_manifest, validate_canvas
from .encoder import load_weights
from .features import load_embedding_table
from .index import PQIndex, deserialize, exact_search, load_vectors, search
from .pipeline import EncoderSetup, embed_source
from .tensor import TensorConfig


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    index: str = "index.cspq"
    table: str = "table.json"
    manifest: str = "manifest.jsonl"
    weights: Optional[str] = None
    default_k: int = 20
    default_nprobe: Optional[int] = None
    encoder_mode: str = "bypass"  # "ft" | "bypass"
    retrieval_mode: str = "pq"  # "pq" | "exact"
    cors_origins: str = "*"


_INT_KEYS = {"port", "default_k", "default_nprobe"}


def load_service_config(path) -> ServiceConfig:
    """Parse a flat ``key = value`` config file (comments start with #)."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CanvasError([f"config line {lineno}: expected key = value"])
            key, _, raw = line.partition("=")
            key = key.strip().replace("-", "_")
            raw = raw.strip().strip('"').strip("'")
            if key not in ServiceConfig.__dataclass_fields__:
                raise CanvasError([f"config line {lineno}: unknown key {key!r}"])
            values[key] = int(raw) if key in _INT_KEYS else raw
    config = ServiceConfig(**values)
    problems = [
        f"{name} file not found: {path}"
        for name, path in (
            ("index", config.index),
            ("table", config.table),
            ("manifest", config.manifest),
        )
        if not os.path.exists(path)
    ]
    if config.encoder_mode == "ft":
        if not config.weights:
            problems.append("encoder_mode ft requires a weights path")
        elif not os.path.exists(config.weights):
            problems.append(f"weights file not found: {config.weights}")
    if config.retrieval_mode == "exact" and not os.path.exists(config.index + ".vecs"):
        problems.append(f"exact retrieval requires the sidecar {config.index}.vecs")
    if problems:
        raise CanvasError(problems)
    return config


@dataclass
class ServiceState:
    config: ServiceConfig
    table: object = None
    setup: EncoderSetup = None
    tensor_config: TensorConfig = None
    index: Optional[PQIndex] = None
    exact_ids: Optional[list] = None
    exact_matrix: Optional[np.ndarray] = None
    uris: dict = field(default_factory=dict)
    corpus_size: int = 0

    @property
    def loaded(self) -> bool:
        if self.config.retrieval_mode == "exact":
            return self.exact_ids is not None
        return self.index is not None


def load_state(config: ServiceConfig) -> ServiceState:
    state = ServiceState(config)
    state.table = load_embedding_table(config.table)
    if config.encoder_mode == "ft":
        state.setup = EncoderSetup("ft", load_weights(config.weights))
    else:
        state.setup = EncoderSetup("bypass")
    state.tensor_config = TensorConfig(channels=state.table.dim)
    manifest = load_manifest(config.manifest)
    state.uris = {r.image_id: r.uri for r in manifest}
    state.corpus_size = len(manifest)
    state.index = deserialize(config.index)
    if config.retrieval_mode == "exact":
        state.exact_ids, state.exact_matrix = load_vectors(config.index + ".vecs")
    return state


def create_app(config: ServiceConfig, state: Optional[ServiceState] = None) -> FastAPI:
    app = FastAPI(title="compsearch", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[o.strip() for o in config.cors_origins.split(",")],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    if state is None:
        state = load_state(config)
    app.state.engine = state

    @app.post("/query")
    async def query(request: Request):
        t_start = time.perf_counter()
        engine: ServiceState = app.state.engine
        if not engine.loaded:
            return JSONResponse({"errors": ["index not loaded"]}, status_code=503)
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"errors": ["body: not valid JSON"]}, status_code=400)
        problems = []
        k = body.get("k", engine.config.default_k) if isinstance(body, dict) else 0
        nprobe = body.get("nprobe", engine.config.default_nprobe) if isinstance(body, dict) else None
        if not isinstance(k, int) or isinstance(k, bool) or k < 1:
            problems.append("k: expected a positive integer")
        if nprobe is not None and (not isinstance(nprobe, int) or isinstance(nprobe, bool) or nprobe < 1):
            problems.append("nprobe: expected a positive integer")
        canvas = None
        try:
            canvas = canvas_from_obj(body)
            validate_canvas(
                canvas,
                engine.table.labels(),
                grid=engine.tensor_config.grid,
                max_objects=engine.tensor_config.max_objects,
            )
        except CanvasError as exc:
            problems.extend(exc.problems)
        if problems:
            return JSONResponse({"errors": problems}, status_code=400)

        embedding = embed_source(canvas, engine.table, engine.setup, engine.tensor_config)
        t_encoded = time.perf_counter()
        if engine.config.retrieval_mode == "exact":
            result = exact_search((engine.exact_ids, engine.exact_matrix), embedding, k)
        else:
            index = engine.index
            probe = index.nlist if nprobe is None else min(nprobe, index.nlist)
            result = search(index, embedding, k, probe)
        t_done = time.perf_counter()
        return {
            "results": [
                {"image_id": image_id, "distance": dist, "uri": engine.uris.get(image_id)}
                for image_id, dist in result
            ],
            "timing_ms": {
                "encode": (t_encoded - t_start) * 1000.0,
                "search": (t_done - t_encoded) * 1000.0,
                "total": (t_done - t_start) * 1000.0,
            },
        }

    @app.get("/classes")
    async def classes():
        engine: ServiceState = app.state.engine
        return {"classes": engine.table.labels()}

    @app.get("/status")
    async def status():
        engine: ServiceState = app.state.engine
        index_info = None
        if engine.index is not None:
            cfg = engine.index.config
            index_info = {
                "dim_reduced": cfg.dim_reduced,
                "nlist": cfg.nlist,
                "m": cfg.m,
                "ksub": cfg.ksub,
                "seed": cfg.seed,
                "size": engine.index.size,
            }
        return {
            "corpus_size": engine.corpus_size,
            "index": index_info,
            "mode": {
                "encoder": engine.config.encoder_mode,
                "retrieval": engine.config.retrieval_mode,
            },
            "default_k": engine.config.default_k,
        }

    return app
