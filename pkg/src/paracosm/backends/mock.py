"""Deterministic in-process twins of the four model capabilities.

Every mock output is a pure function of (run seed, request content), so a
pipeline run against mocks performs zero network I/O and is bit-reproducible
for a fixed seed. The module-level helpers expose those pure functions
directly: test oracles and the toy-benchmark generator call them to predict
what the pipeline will produce without going through a transport.

The embedder supports a test-only "planted" mode: content digests registered
under a plant key all embed to the same unit vector. Registering a query's
edited image together with its ground-truth target makes that target the
provable nearest neighbor, which turns end-to-end retrieval into a checkable
fixed point.
"""

from __future__ import annotations

import hashlib
import io
import threading
from typing import Any, Mapping

import numpy as np
from PIL import Image

from ..errors import BackendRejected
from .base import BackendDescriptor, canonical_params, content_digest, text_digest


def _seed64(*parts: bytes) -> int:
    h = hashlib.sha256()
    for p in parts:
        h.update(len(p).to_bytes(8, "little"))
        h.update(p)
    return int.from_bytes(h.digest()[:8], "little")


def _noise_png(seed: int, size: int) -> bytes:
    rng = np.random.Generator(np.random.PCG64(seed))
    pixels = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def mock_edit_png(
    seed: int, ref_digest: str, prompt: str, size: int, params: Mapping[str, Any] | None = None
) -> bytes:
    """Raster an image-edit result: noise keyed by (seed, ref image, prompt)."""
    material = _seed64(
        b"edit",
        seed.to_bytes(8, "little", signed=True),
        ref_digest.encode(),
        prompt.encode("utf-8"),
        canonical_params(params),
        size.to_bytes(4, "little"),
    )
    return _noise_png(material, size)


def mock_t2i_png(
    seed: int, prompt: str, size: int, params: Mapping[str, Any] | None = None
) -> bytes:
    """Raster a text-to-image result: noise keyed by (seed, prompt)."""
    material = _seed64(
        b"t2i",
        seed.to_bytes(8, "little", signed=True),
        prompt.encode("utf-8"),
        canonical_params(params),
        size.to_bytes(4, "little"),
    )
    return _noise_png(material, size)


def mock_caption_text(image_digest: str, prompt: str) -> str:
    """Caption string derived from (image, prompt) only; seed-independent."""
    h = hashlib.sha256()
    h.update(image_digest.encode())
    h.update(prompt.encode("utf-8"))
    return f"mock-caption-{h.hexdigest()[:8]}"


def mock_unit_vector(seed: int, dim: int, material: bytes) -> np.ndarray:
    rng = np.random.Generator(
        np.random.PCG64(_seed64(seed.to_bytes(8, "little", signed=True), material))
    )
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class MockTransport:
    """One shared transport instance serves all five capabilities.

    Call counts are kept per capability (thread safe) so tests can assert
    exactly which calls a configuration causes — and that cache hits cause
    none at all.
    """

    def __init__(self, seed: int = 0, dim: int = 64):
        self.seed = int(seed)
        self.dim = int(dim)
        self._plants: dict[str, str] = {}  # content digest -> plant key
        self._lock = threading.Lock()
        self.calls: dict[str, int] = {}

    # -- planted mode ------------------------------------------------------

    def plant(self, key: str, digests: list[str]) -> None:
        """Register content digests whose embeddings collapse to one vector."""
        with self._lock:
            for d in digests:
                self._plants[d] = key

    def load_plants(self, mapping: Mapping[str, str]) -> None:
        """Bulk-register a {content_digest: plant_key} mapping."""
        with self._lock:
            self._plants.update(mapping)

    @property
    def plants(self) -> dict[str, str]:
        return dict(self._plants)

    # -- bookkeeping ---------------------------------------------------------

    def _count(self, capability: str) -> None:
        with self._lock:
            self.calls[capability] = self.calls.get(capability, 0) + 1

    def reset_calls(self) -> None:
        with self._lock:
            self.calls = {}

    # -- capabilities --------------------------------------------------------

    def edit_image(
        self,
        desc: BackendDescriptor,
        ref_png: bytes,
        prompt: str,
        width: int,
        height: int,
        params: Mapping[str, Any] | None,
    ) -> bytes:
        self._count("image_edit")
        if not prompt.strip():
            raise BackendRejected("image_edit: empty prompt")
        return mock_edit_png(self.seed, content_digest(ref_png), prompt, width, params)

    def generate_image(
        self,
        desc: BackendDescriptor,
        prompt: str,
        width: int,
        height: int,
        params: Mapping[str, Any] | None,
    ) -> bytes:
        self._count("text_to_image")
        if not prompt.strip():
            raise BackendRejected("text_to_image: empty prompt")
        return mock_t2i_png(self.seed, prompt, width, params)

    def caption(self, desc: BackendDescriptor, image_png: bytes, prompt: str) -> str:
        self._count("caption")
        return mock_caption_text(content_digest(image_png), prompt)

    def _embed(self, capability: str, material_digest: str) -> np.ndarray:
        key = self._plants.get(material_digest)
        if key is not None:
            return mock_unit_vector(self.seed, self.dim, b"plant:" + key.encode("utf-8"))
        return mock_unit_vector(self.seed, self.dim, b"embed:" + material_digest.encode())

    def embed_image(self, desc: BackendDescriptor, image_png: bytes) -> np.ndarray:
        self._count("embed_image")
        return self._embed("embed_image", content_digest(image_png))

    def embed_text(self, desc: BackendDescriptor, text: str) -> np.ndarray:
        self._count("embed_text")
        return self._embed("embed_text", text_digest(text))
