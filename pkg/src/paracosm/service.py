"""HTTP facade over the query pipeline for the interactive console.

The service holds one immutable FeatureStore and a bounded cache of per-query
term embeddings. Both fusion weights are therefore live controls: reranking
under a new lambda re-fuses the cached query terms, reranking under a new
beta re-fuses the gallery from its per-term matrices — no backend is touched
either way, and repeating the original weights reproduces the original
result list byte for byte (ranking always runs against the term-fused
gallery, including the first pass).

POST /api/query is synchronous against mock backends; against remote ones it
answers 202 with a query id that GET /api/query/{id} polls.
"""

from __future__ import annotations

import threading
import time
import uuid
from collections import OrderedDict
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response

from .backends import Backends, ImageArtifact, image_from_bytes
from .config import AblationConfig
from .datasets import QueryRecord
from .errors import BackendError, BackendTimeout, MissingTermEmbedding, ParacosmError
from .fusion import EmbeddingVector, rank_rows
from .pipeline import fuse_bundle_terms, query_term_vectors
from .store import FeatureStore, fuse_term_matrices

DEFAULT_QUERY_CACHE = 256
DEFAULT_TOP_K = 50


@dataclass
class CachedQuery:
    query_id: str
    term_vectors: dict[str, EmbeddingVector]
    lam: float
    beta: float
    mental: ImageArtifact | None
    description: str | None
    timings: dict[str, float] = field(default_factory=dict)
    k: int = DEFAULT_TOP_K


class QueryCache:
    """Bounded LRU of processed queries (term embeddings + artifacts)."""

    def __init__(self, capacity: int = DEFAULT_QUERY_CACHE):
        self.capacity = capacity
        self._entries: OrderedDict[str, CachedQuery] = OrderedDict()
        self._lock = threading.Lock()

    def put(self, entry: CachedQuery) -> None:
        with self._lock:
            self._entries[entry.query_id] = entry
            self._entries.move_to_end(entry.query_id)
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)

    def get(self, query_id: str) -> CachedQuery | None:
        with self._lock:
            entry = self._entries.get(query_id)
            if entry is not None:
                self._entries.move_to_end(query_id)
            return entry

    def find_mental(self, image_id: str) -> ImageArtifact | None:
        with self._lock:
            for entry in self._entries.values():
                if entry.mental is not None and entry.mental.image_id == image_id:
                    return entry.mental
        return None

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


class GalleryView:
    """Beta-keyed fused gallery matrices over one store's term matrices."""

    def __init__(self, store: FeatureStore, config: AblationConfig):
        self.store = store
        self.config = config
        self._lock = threading.Lock()
        self._by_beta: dict[float, np.ndarray] = {}
        enabled = sorted(config.gallery_terms)
        self.refusable = all(t in store.term_matrices for t in enabled)

    def matrix(self, beta: float) -> np.ndarray:
        beta = float(beta)
        if not self.refusable:
            if beta != self.config.beta:
                raise MissingTermEmbedding(
                    "store lacks per-term matrices; beta cannot be changed"
                )
            return self.store.matrix
        with self._lock:
            cached = self._by_beta.get(beta)
            if cached is not None:
                return cached
        fused = fuse_term_matrices(self.store.term_matrices, self.config, beta)
        with self._lock:
            if len(self._by_beta) > 16:
                self._by_beta.clear()
            self._by_beta[beta] = fused
        return fused


def _results_payload(ids, matrix, q_values, k: int) -> list[dict]:
    ranked = rank_rows(q_values, ids, matrix, k)
    return [
        {
            "image_id": r.image_id,
            "score": r.score,
            "rank": r.rank,
            "image_url": f"/api/image/{r.image_id}",
        }
        for r in ranked
    ]


def create_app(
    store: FeatureStore,
    backends: Backends,
    config: AblationConfig,
    *,
    images_dir: str | Path | None = None,
    frontend_dir: str | Path | None = None,
    sync_mode: bool | None = None,
    query_cache_size: int = DEFAULT_QUERY_CACHE,
) -> FastAPI:
    app = FastAPI(title="paracosm", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    gallery = GalleryView(store, config)
    cache = QueryCache(query_cache_size)
    images_root = Path(images_dir) if images_dir else None
    synchronous = backends.is_mock if sync_mode is None else sync_mode
    executor = ThreadPoolExecutor(max_workers=4)
    pending: dict[str, Future] = {}
    pending_lock = threading.Lock()

    def run_query(
        query_id: str,
        ref: ImageArtifact,
        modification_text: str,
        shared_concept: str | None,
        lam: float | None,
        k: int,
    ) -> dict:
        record = QueryRecord(
            query_id=query_id,
            reference_image_id=ref.image_id,
            modification_text=modification_text,
            gt_target_ids=("__unknown__",),
            shared_concept=shared_concept,
        )
        t0 = time.perf_counter()
        vectors, mental, description, timings = query_term_vectors(
            record,
            backends,
            config.query_terms,
            ref_image=ref,
            dataset_kind=store.manifest.dataset_kind,
        )
        effective_lam = config.lam if lam is None else float(lam)
        feature = fuse_bundle_terms(vectors, config, effective_lam)
        entry = CachedQuery(
            query_id=query_id,
            term_vectors=vectors,
            lam=effective_lam,
            beta=config.beta,
            mental=mental,
            description=description,
            timings=timings,
            k=k,
        )
        cache.put(entry)
        results = _results_payload(store.ids, gallery.matrix(config.beta), feature.q.values, k)
        total_ms = (time.perf_counter() - t0) * 1000.0
        return {
            "query_id": query_id,
            "mental_image_url": (
                f"/api/image/{mental.image_id}" if mental is not None else None
            ),
            "description": description,
            "results": results,
            "timings": {
                "lambda": effective_lam,
                "beta": config.beta,
                "total_ms": total_ms,
                **{key: value for key, value in timings.items()},
            },
        }

    @app.post("/api/query")
    async def post_query(
        reference: UploadFile | None = File(default=None),
        modification_text: str = Form(default=""),
        shared_concept: str | None = Form(default=None),
        lam: float | None = Form(default=None, alias="lambda"),
        k: int = Form(default=DEFAULT_TOP_K),
    ):
        if reference is None:
            raise HTTPException(400, "multipart field 'reference' (image file) is required")
        if not modification_text.strip():
            raise HTTPException(400, "multipart field 'modification_text' must be non-empty")
        if lam is not None and not 0.0 <= lam <= 1.0:
            raise HTTPException(400, f"lambda must be in [0, 1], got {lam}")
        if store.manifest.dataset_kind == "circo" and not (shared_concept or "").strip():
            raise HTTPException(
                422, "this store is circo-configured: shared_concept is required"
            )
        data = await reference.read()
        try:
            ref = image_from_bytes(data, image_id=f"upload:{uuid.uuid4().hex[:12]}")
        except Exception:
            raise HTTPException(400, "reference upload is not a decodable image")
        query_id = f"q-{uuid.uuid4().hex[:12]}"
        k = max(1, min(int(k), store.n))

        if synchronous:
            try:
                return run_query(query_id, ref, modification_text, shared_concept, lam, k)
            except BackendTimeout as exc:
                raise HTTPException(503, f"backend unavailable: {exc}")
            except BackendError as exc:
                raise HTTPException(503, str(exc))
            except ParacosmError as exc:
                raise HTTPException(400, str(exc))
        future = executor.submit(
            run_query, query_id, ref, modification_text, shared_concept, lam, k
        )
        with pending_lock:
            pending[query_id] = future
        return JSONResponse({"query_id": query_id, "status": "pending"}, status_code=202)

    @app.get("/api/query/{query_id}")
    def poll_query(query_id: str):
        with pending_lock:
            future = pending.get(query_id)
        if future is None:
            raise HTTPException(404, f"unknown query id {query_id!r}")
        if not future.done():
            return JSONResponse({"query_id": query_id, "status": "pending"}, status_code=202)
        try:
            return future.result()
        except BackendTimeout as exc:
            raise HTTPException(503, f"backend unavailable: {exc}")
        except ParacosmError as exc:
            raise HTTPException(400, str(exc))

    @app.post("/api/rerank")
    def rerank(body: dict):
        query_id = body.get("query_id")
        if not query_id:
            raise HTTPException(400, "query_id is required")
        entry = cache.get(str(query_id))
        if entry is None:
            raise HTTPException(404, f"unknown or evicted query id {query_id!r}")
        lam = float(body.get("lambda", entry.lam))
        beta = float(body.get("beta", entry.beta))
        if not 0.0 <= lam <= 1.0 or not 0.0 <= beta <= 1.0:
            raise HTTPException(400, "lambda and beta must be in [0, 1]")
        t0 = time.perf_counter()
        try:
            feature = fuse_bundle_terms(entry.term_vectors, config, lam)
            matrix = gallery.matrix(beta)
        except MissingTermEmbedding as exc:
            raise HTTPException(400, str(exc))
        results = _results_payload(store.ids, matrix, feature.q.values, entry.k)
        return {
            "query_id": entry.query_id,
            "results": results,
            "timings": {
                "lambda": lam,
                "beta": beta,
                "rerank_ms": (time.perf_counter() - t0) * 1000.0,
            },
        }

    @app.get("/api/image/{image_id}")
    def get_image(image_id: str):
        mental = cache.find_mental(image_id)
        if mental is not None:
            return Response(mental.pixel_data, media_type="image/png")
        if images_root is not None:
            for ext, mime in ((".png", "image/png"), (".jpg", "image/jpeg"), (".jpeg", "image/jpeg")):
                candidate = images_root / f"{image_id}{ext}"
                if candidate.is_file():
                    return Response(candidate.read_bytes(), media_type=mime)
        raise HTTPException(404, f"unknown image id {image_id!r}")

    @app.get("/api/health")
    def health():
        return {
            "status": "ok",
            "backends": {
                cap: desc.endpoint for cap, desc in sorted(backends.descriptors.items())
            },
        }

    @app.get("/api/store/info")
    def store_info():
        return {
            "n": store.n,
            "dim": store.dim,
            "encoder_id": store.manifest.encoder_id,
            "config_digest": store.manifest.config_digest,
            "dataset_kind": store.manifest.dataset_kind,
            "lambda": config.lam,
            "beta": config.beta,
            "rerankable_beta": gallery.refusable,
        }

    if frontend_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="frontend")

    return app
