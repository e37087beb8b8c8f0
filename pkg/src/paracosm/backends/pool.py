"""Backend pool: the one object the pipeline talks to.

Binds a descriptor and a transport to each capability, fronts them with the
content-addressed cache, and turns raw transport payloads into typed
artifacts. A cache hit never reaches a transport, which is what makes
preprocessing resumable and ablation replays free.

Endpoint resolution order: PARACOSM_BACKEND_<CAPABILITY>_URL environment
variables beat the config file, which beats the "mock" default. The cache
root likewise honors PARACOSM_CACHE_DIR.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from PIL import Image

from ..errors import DimensionDrift, EmptyCaption
from ..fusion import EmbeddingVector
from .base import (
    CAPABILITIES,
    BackendDescriptor,
    CacheKey,
    ImageArtifact,
    text_digest,
)
from .cache import ContentCache
from .http import HttpTransport
from .mock import MockTransport

DEFAULT_GENERATION_SIZE = 512
DEFAULT_MOCK_DIM = 64


def image_from_bytes(data: bytes, image_id: str, provenance: str = "source") -> ImageArtifact:
    with Image.open(io.BytesIO(data)) as im:
        width, height = im.size
    return ImageArtifact(
        image_id=image_id, pixel_data=data, width=width, height=height, provenance=provenance
    )


def image_from_file(path: str | Path, image_id: str | None = None) -> ImageArtifact:
    path = Path(path)
    return image_from_bytes(path.read_bytes(), image_id or path.stem)


def _vector_bytes(vec: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.asarray(vec, dtype=np.float64), allow_pickle=False)
    return buf.getvalue()


def _vector_from_bytes(data: bytes) -> np.ndarray:
    return np.load(io.BytesIO(data), allow_pickle=False)


class Backends:
    """Clients for all five capabilities behind one cache."""

    def __init__(
        self,
        descriptors: Mapping[str, BackendDescriptor],
        transports: Mapping[str, Any],
        cache: ContentCache | None = None,
        generation_size: int = DEFAULT_GENERATION_SIZE,
    ):
        missing = set(CAPABILITIES) - set(descriptors)
        if missing:
            raise ValueError(f"descriptors missing for capabilities: {sorted(missing)}")
        self.descriptors = dict(descriptors)
        self.transports = dict(transports)
        self.cache = cache
        self.generation_size = int(generation_size)

    # -- construction --------------------------------------------------------

    @classmethod
    def mock(
        cls,
        seed: int = 0,
        dim: int = DEFAULT_MOCK_DIM,
        generation_size: int = DEFAULT_GENERATION_SIZE,
        cache_dir: str | Path | None = None,
        plants: Mapping[str, str] | None = None,
    ) -> "Backends":
        """All-mock pool; the cache (if any) is scoped by seed and plants so a
        reused cache directory can never leak outputs across mock worlds."""
        transport = MockTransport(seed=seed, dim=dim)
        if plants:
            transport.load_plants(plants)
        cache = None
        if cache_dir is not None:
            fingerprint = hashlib.sha256(
                json.dumps(sorted((transport.plants or {}).items())).encode()
            ).hexdigest()[:12]
            cache = ContentCache(Path(cache_dir) / f"mock-{seed}-{fingerprint}")
        descriptors = {
            cap: BackendDescriptor(
                backend_id=f"mock-{cap}",
                capability=cap,
                endpoint="mock",
                model_name="mock",
                dim=dim if cap.startswith("embed") else None,
            )
            for cap in CAPABILITIES
        }
        return cls(
            descriptors,
            {cap: transport for cap in CAPABILITIES},
            cache=cache,
            generation_size=generation_size,
        )

    @property
    def mock_transport(self) -> MockTransport | None:
        for t in self.transports.values():
            if isinstance(t, MockTransport):
                return t
        return None

    @property
    def is_mock(self) -> bool:
        return all(d.is_mock for d in self.descriptors.values())

    # -- telemetry -----------------------------------------------------------

    def transport_calls(self) -> dict[str, int]:
        merged: dict[str, int] = {}
        for t in {id(t): t for t in self.transports.values()}.values():
            for cap, n in getattr(t, "calls", {}).items():
                merged[cap] = merged.get(cap, 0) + n
        return merged

    def reset_counters(self) -> None:
        for t in {id(t): t for t in self.transports.values()}.values():
            if hasattr(t, "reset_calls"):
                t.reset_calls()
        if self.cache is not None:
            self.cache.reset_stats()

    # -- cache plumbing --------------------------------------------------------

    def _cached(self, capability: str, key: CacheKey) -> bytes | None:
        return self.cache.get(capability, key) if self.cache is not None else None

    def _store(self, capability: str, key: CacheKey, data: bytes) -> None:
        if self.cache is not None:
            self.cache.put(capability, key, data)

    # -- operations ------------------------------------------------------------

    def edit_image(
        self, ref: ImageArtifact, prompt: str, params: Mapping[str, Any] | None = None
    ) -> ImageArtifact:
        """Edit a reference image per the prompt (provenance "mental")."""
        desc = self.descriptors["image_edit"]
        size = self.generation_size
        key_params = {"width": size, "height": size, **(params or {})}
        key = CacheKey.build("image_edit", desc.model_name, prompt, ref.digest, key_params)
        data = self._cached("image_edit", key)
        if data is None:
            data = self.transports["image_edit"].edit_image(
                desc, ref.pixel_data, prompt, size, size, params
            )
            self._store("image_edit", key, data)
        return ImageArtifact(
            image_id=f"mental:{key.digest[:16]}",
            pixel_data=data,
            width=size,
            height=size,
            provenance="mental",
            parent_ids=(ref.image_id,),
            prompt_hash=text_digest(prompt),
        )

    def generate_image(
        self, prompt: str, params: Mapping[str, Any] | None = None, parent_id: str | None = None
    ) -> ImageArtifact:
        """Generate an image from text alone (provenance "synthetic")."""
        desc = self.descriptors["text_to_image"]
        size = self.generation_size
        key_params = {"width": size, "height": size, **(params or {})}
        key = CacheKey.build("text_to_image", desc.model_name, prompt, "", key_params)
        data = self._cached("text_to_image", key)
        if data is None:
            data = self.transports["text_to_image"].generate_image(
                desc, prompt, size, size, params
            )
            self._store("text_to_image", key, data)
        return ImageArtifact(
            image_id=f"syn:{key.digest[:16]}",
            pixel_data=data,
            width=size,
            height=size,
            provenance="synthetic",
            parent_ids=(parent_id,) if parent_id else (),
            prompt_hash=text_digest(prompt),
        )

    def caption(self, image: ImageArtifact, prompt: str) -> str:
        desc = self.descriptors["caption"]
        key = CacheKey.build("caption", desc.model_name, prompt, image.digest)
        data = self._cached("caption", key)
        if data is not None:
            return data.decode("utf-8")
        text = self.transports["caption"].caption(desc, image.pixel_data, prompt)
        if not text or not text.strip():
            raise EmptyCaption(f"caption backend returned empty text for {image.image_id!r}")
        self._store("caption", key, text.encode("utf-8"))
        return text

    def _finish_embedding(
        self, capability: str, desc: BackendDescriptor, key: CacheKey, raw: np.ndarray | None
    ) -> EmbeddingVector:
        if raw is not None and desc.dim is not None and raw.shape[0] != desc.dim:
            raise DimensionDrift(
                f"{capability} backend {desc.backend_id!r} declared dim {desc.dim} "
                f"but returned {raw.shape[0]}"
            )
        modality = "image" if capability == "embed_image" else "text"
        return EmbeddingVector(raw, f"{desc.model_name}:{modality}")

    def embed_image(self, image: ImageArtifact) -> EmbeddingVector:
        desc = self.descriptors["embed_image"]
        key = CacheKey.build("embed_image", desc.model_name, "", image.digest)
        data = self._cached("embed_image", key)
        if data is not None:
            return self._finish_embedding("embed_image", desc, key, _vector_from_bytes(data))
        raw = np.asarray(self.transports["embed_image"].embed_image(desc, image.pixel_data))
        vec = self._finish_embedding("embed_image", desc, key, raw)
        self._store("embed_image", key, _vector_bytes(vec.values))
        return vec

    def embed_text(self, text: str) -> EmbeddingVector:
        desc = self.descriptors["embed_text"]
        key = CacheKey.build("embed_text", desc.model_name, "", text_digest(text))
        data = self._cached("embed_text", key)
        if data is not None:
            return self._finish_embedding("embed_text", desc, key, _vector_from_bytes(data))
        raw = np.asarray(self.transports["embed_text"].embed_text(desc, text))
        vec = self._finish_embedding("embed_text", desc, key, raw)
        self._store("embed_text", key, _vector_bytes(vec.values))
        return vec

    def describe(self) -> dict[str, dict[str, Any]]:
        """Descriptor summary for run manifests and the health endpoint."""
        return {
            cap: {
                "backend_id": d.backend_id,
                "endpoint": d.endpoint,
                "model": d.model_name,
                "timeout_s": d.timeout_s,
                "max_retries": d.max_retries,
                **({"dim": d.dim} if d.dim is not None else {}),
            }
            for cap, d in sorted(self.descriptors.items())
        }


def build_backends(
    run_config: Mapping[str, Any] | None = None,
    *,
    seed: int | None = None,
    cache_dir: str | Path | None = None,
    plants: Mapping[str, str] | None = None,
) -> Backends:
    """Construct a pool from a run-config [backends] table plus environment.

    Without any configuration every capability defaults to the mock twin.
    """
    cfg = dict((run_config or {}).get("backends", {}))
    seed = int(cfg.get("seed", 0)) if seed is None else int(seed)
    dim = int(cfg.get("dim", DEFAULT_MOCK_DIM))
    generation_size = int(cfg.get("generation_size", DEFAULT_GENERATION_SIZE))

    env_cache = os.environ.get("PARACOSM_CACHE_DIR")
    root = env_cache or cache_dir or cfg.get("cache_dir")

    endpoints: dict[str, dict[str, Any]] = {}
    for cap in CAPABILITIES:
        sub = dict(cfg.get(cap, {}))
        env_url = os.environ.get(f"PARACOSM_BACKEND_{cap.upper()}_URL")
        if env_url:
            sub["endpoint"] = env_url
        sub.setdefault("endpoint", "mock")
        endpoints[cap] = sub

    if all(sub["endpoint"] == "mock" for sub in endpoints.values()):
        return Backends.mock(
            seed=seed, dim=dim, generation_size=generation_size, cache_dir=root, plants=plants
        )

    mock_transport = MockTransport(seed=seed, dim=dim)
    if plants:
        mock_transport.load_plants(plants)
    http_transport = HttpTransport()
    descriptors: dict[str, BackendDescriptor] = {}
    transports: dict[str, Any] = {}
    for cap, sub in endpoints.items():
        is_mock = sub["endpoint"] == "mock"
        descriptors[cap] = BackendDescriptor(
            backend_id=str(sub.get("backend_id", f"{cap}@{sub['endpoint']}")),
            capability=cap,
            endpoint=str(sub["endpoint"]),
            model_name=str(sub.get("model", "mock" if is_mock else cap)),
            timeout_s=float(sub.get("timeout_s", 60.0)),
            max_retries=int(sub.get("max_retries", 3)),
            dim=(int(sub["dim"]) if "dim" in sub else (dim if cap.startswith("embed") else None)),
        )
        transports[cap] = mock_transport if is_mock else http_transport
    cache = ContentCache(root) if root else None
    return Backends(descriptors, transports, cache=cache, generation_size=generation_size)
