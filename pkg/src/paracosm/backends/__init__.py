from .base import (
    CAPABILITIES,
    BackendDescriptor,
    CacheKey,
    ImageArtifact,
    content_digest,
    text_digest,
)
from .cache import ContentCache, NullCache
from .http import HttpTransport
from .mock import MockTransport
from .pool import Backends, build_backends, image_from_bytes, image_from_file

__all__ = [
    "CAPABILITIES",
    "BackendDescriptor",
    "Backends",
    "CacheKey",
    "ContentCache",
    "HttpTransport",
    "ImageArtifact",
    "MockTransport",
    "NullCache",
    "build_backends",
    "content_digest",
    "image_from_bytes",
    "image_from_file",
    "text_digest",
]
