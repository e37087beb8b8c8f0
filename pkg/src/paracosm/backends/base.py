"""Shared backend types: capabilities, descriptors, artifacts, cache keys.

A backend is one external model capability reachable over HTTP, or its
deterministic in-process mock. Five capabilities exist; which concrete model
serves each one is pure configuration, so swapping an image generator or a
captioner never touches pipeline code.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Mapping

CAPABILITIES = ("image_edit", "text_to_image", "caption", "embed_image", "embed_text")

PROVENANCES = ("source", "mental", "synthetic")


def content_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def canonical_params(params: Mapping[str, Any] | None) -> bytes:
    """Stable byte form of opaque generation parameters (cache-key input)."""
    return json.dumps(params or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass(frozen=True)
class BackendDescriptor:
    """Where one capability lives and how patiently to call it."""

    backend_id: str
    capability: str
    endpoint: str  # URL, or "mock" for the in-process twin
    model_name: str
    timeout_s: float = 60.0
    max_retries: int = 3
    dim: int | None = None  # declared output dim, embed capabilities only

    def __post_init__(self):
        if self.capability not in CAPABILITIES:
            raise ValueError(f"unknown capability {self.capability!r}")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")

    @property
    def is_mock(self) -> bool:
        return self.endpoint == "mock"


@dataclass(frozen=True)
class ImageArtifact:
    """Encoded raster plus provenance.

    provenance "source" marks dataset images; "mental" an edited query image;
    "synthetic" a generated gallery counterpart. Generated artifacts carry the
    hash of the prompt that produced them, source images never do.
    """

    image_id: str
    pixel_data: bytes
    width: int
    height: int
    provenance: str = "source"
    parent_ids: tuple[str, ...] = field(default_factory=tuple)
    prompt_hash: str | None = None

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.provenance == "source" and self.prompt_hash is not None:
            raise ValueError("source images must not carry a prompt hash")
        object.__setattr__(self, "parent_ids", tuple(self.parent_ids))

    @property
    def digest(self) -> str:
        return content_digest(self.pixel_data)


@dataclass(frozen=True)
class CacheKey:
    """Content address of one backend invocation.

    Equal inputs produce equal digests; any byte of the capability, model,
    prompt, input content, or parameters changing produces a different one.
    """

    digest: str

    @classmethod
    def build(
        cls,
        capability: str,
        model_name: str,
        prompt: str = "",
        input_digest: str = "",
        params: Mapping[str, Any] | None = None,
    ) -> "CacheKey":
        h = hashlib.sha256()
        for part in (
            capability.encode(),
            model_name.encode(),
            prompt.encode("utf-8"),
            input_digest.encode(),
            canonical_params(params),
        ):
            h.update(len(part).to_bytes(8, "little"))
            h.update(part)
        return cls(h.hexdigest())
