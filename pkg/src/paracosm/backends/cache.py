"""Content-addressed file cache for backend outputs.

Generated images, captions, and embeddings are expensive; everything a
backend returns is stored under the digest of the request that produced it
(see CacheKey), so reruns and ablation replays hit disk instead of the
network. Writes are write-temp-then-rename, which keeps concurrent writers
safe: identical requests race to write identical bytes, last rename wins.

Eviction is deliberately manual — gallery preprocessing is a one-time cost
and the features kept at the end are small compared to the generations.
"""

from __future__ import annotations

import os
import tempfile
import threading
from pathlib import Path

from .base import CacheKey


class ContentCache:
    """Bytes-in, bytes-out cache rooted at a directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def _path(self, capability: str, key: CacheKey) -> Path:
        return self.root / capability / key.digest[:2] / key.digest

    def get(self, capability: str, key: CacheKey) -> bytes | None:
        path = self._path(capability, key)
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            with self._lock:
                self.misses += 1
            return None
        with self._lock:
            self.hits += 1
        return data

    def put(self, capability: str, key: CacheKey, data: bytes) -> None:
        path = self._path(capability, key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            try:
                os.unlink(tmp)
            except FileNotFoundError:
                pass
            raise

    def reset_stats(self) -> None:
        with self._lock:
            self.hits = 0
            self.misses = 0


class NullCache(ContentCache):
    """Cache that stores nothing (useful for tests that count raw calls)."""

    def __init__(self):  # noqa: D401 - no root directory
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, capability: str, key: CacheKey) -> bytes | None:
        with self._lock:
            self.misses += 1
        return None

    def put(self, capability: str, key: CacheKey, data: bytes) -> None:
        return None
