"""JSON-over-HTTP transport for real inference servers.

One request shape per capability, so adapters for a specific vendor live in
whatever serves the endpoint, not here:

    caption  POST {model, prompt, image_b64}                  -> {text}
    edit     POST {model, prompt, image_b64, width, height, params} -> {image_b64}
    t2i      POST {model, prompt, width, height, params}      -> {image_b64}
    embed    POST {model, image_b64}  or  {model, text}       -> {vector: [f64, ...]}

Errors come back as non-2xx with {"error": "..."} and are not retried.
Timeouts and connection failures are retried with exponential backoff
(base 1 s, doubling, capped at 30 s) up to the descriptor's budget.
"""

from __future__ import annotations

import base64
import threading
import time
from typing import Any, Callable, Mapping

import numpy as np
import requests

from ..errors import BackendRejected, BackendTimeout, MalformedResponse
from .base import BackendDescriptor

BACKOFF_BASE_S = 1.0
BACKOFF_CAP_S = 30.0


class HttpTransport:
    """requests-based transport; one session shared across threads."""

    def __init__(self, sleeper: Callable[[float], None] = time.sleep):
        self._session = requests.Session()
        self._sleeper = sleeper
        self._lock = threading.Lock()
        self.calls: dict[str, int] = {}

    def _count(self, capability: str) -> None:
        with self._lock:
            self.calls[capability] = self.calls.get(capability, 0) + 1

    def reset_calls(self) -> None:
        with self._lock:
            self.calls = {}

    def _post(self, desc: BackendDescriptor, payload: dict[str, Any]) -> dict[str, Any]:
        attempts = desc.max_retries + 1
        for attempt in range(attempts):
            self._count(desc.capability)
            try:
                resp = self._session.post(desc.endpoint, json=payload, timeout=desc.timeout_s)
            except (requests.Timeout, requests.ConnectionError) as exc:
                if attempt + 1 >= attempts:
                    raise BackendTimeout(
                        f"{desc.capability} backend {desc.endpoint} unreachable "
                        f"after {attempts} attempts: {exc}",
                        attempts=attempts,
                    ) from exc
                self._sleeper(min(BACKOFF_BASE_S * (2**attempt), BACKOFF_CAP_S))
                continue
            if resp.status_code // 100 != 2:
                try:
                    detail = resp.json().get("error", resp.text)
                except ValueError:
                    detail = resp.text
                raise BackendRejected(
                    f"{desc.capability} backend rejected request "
                    f"(HTTP {resp.status_code}): {detail!r}; "
                    f"prompt={payload.get('prompt', '')[:200]!r}"
                )
            try:
                return resp.json()
            except ValueError as exc:
                raise MalformedResponse(
                    f"{desc.capability} backend returned non-JSON body"
                ) from exc
        raise AssertionError("unreachable")

    @staticmethod
    def _image_from(body: dict[str, Any], desc: BackendDescriptor) -> bytes:
        if "image_b64" not in body:
            raise MalformedResponse(f"{desc.capability} response lacks image_b64")
        try:
            return base64.b64decode(body["image_b64"], validate=True)
        except Exception as exc:
            raise MalformedResponse(f"{desc.capability} image_b64 is not base64") from exc

    def edit_image(
        self,
        desc: BackendDescriptor,
        ref_png: bytes,
        prompt: str,
        width: int,
        height: int,
        params: Mapping[str, Any] | None,
    ) -> bytes:
        if not prompt.strip():
            raise BackendRejected("image_edit: empty prompt")
        body = self._post(
            desc,
            {
                "model": desc.model_name,
                "prompt": prompt,
                "image_b64": base64.b64encode(ref_png).decode("ascii"),
                "width": width,
                "height": height,
                "params": dict(params or {}),
            },
        )
        return self._image_from(body, desc)

    def generate_image(
        self,
        desc: BackendDescriptor,
        prompt: str,
        width: int,
        height: int,
        params: Mapping[str, Any] | None,
    ) -> bytes:
        if not prompt.strip():
            raise BackendRejected("text_to_image: empty prompt")
        body = self._post(
            desc,
            {
                "model": desc.model_name,
                "prompt": prompt,
                "width": width,
                "height": height,
                "params": dict(params or {}),
            },
        )
        return self._image_from(body, desc)

    def caption(self, desc: BackendDescriptor, image_png: bytes, prompt: str) -> str:
        body = self._post(
            desc,
            {
                "model": desc.model_name,
                "prompt": prompt,
                "image_b64": base64.b64encode(image_png).decode("ascii"),
            },
        )
        if "text" not in body or not isinstance(body["text"], str):
            raise MalformedResponse("caption response lacks text")
        return body["text"]

    def _vector_from(self, body: dict[str, Any], desc: BackendDescriptor) -> np.ndarray:
        if "vector" not in body or not isinstance(body["vector"], list):
            raise MalformedResponse(f"{desc.capability} response lacks vector")
        try:
            return np.asarray(body["vector"], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise MalformedResponse(f"{desc.capability} vector is not numeric") from exc

    def embed_image(self, desc: BackendDescriptor, image_png: bytes) -> np.ndarray:
        body = self._post(
            desc,
            {
                "model": desc.model_name,
                "image_b64": base64.b64encode(image_png).decode("ascii"),
            },
        )
        return self._vector_from(body, desc)

    def embed_text(self, desc: BackendDescriptor, text: str) -> np.ndarray:
        body = self._post(desc, {"model": desc.model_name, "text": text})
        return self._vector_from(body, desc)
