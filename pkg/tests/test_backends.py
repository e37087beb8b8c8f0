import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
import requests

from paracosm.backends import (
    BackendDescriptor,
    Backends,
    CacheKey,
    ContentCache,
    HttpTransport,
    image_from_bytes,
)
from paracosm.backends.mock import mock_caption_text, mock_edit_png, mock_t2i_png
from paracosm.errors import (
    BackendRejected,
    BackendTimeout,
    DimensionDrift,
    EmptyCaption,
    MalformedResponse,
)


def toy_image(backends_or_seed=0, image_id="src"):
    png = mock_t2i_png(99, f"fixture {image_id}", 16)
    return image_from_bytes(png, image_id)


class TestCacheKey:
    def test_equal_inputs_equal_digest(self):
        a = CacheKey.build("caption", "m", "p", "d", {"x": 1})
        b = CacheKey.build("caption", "m", "p", "d", {"x": 1})
        assert a == b and len(a.digest) == 64

    def test_any_field_changes_digest(self):
        base = CacheKey.build("caption", "m", "p", "d", {"x": 1})
        assert CacheKey.build("embed_text", "m", "p", "d", {"x": 1}) != base
        assert CacheKey.build("caption", "m2", "p", "d", {"x": 1}) != base
        assert CacheKey.build("caption", "m", "p2", "d", {"x": 1}) != base
        assert CacheKey.build("caption", "m", "p", "d2", {"x": 1}) != base
        assert CacheKey.build("caption", "m", "p", "d", {"x": 2}) != base

    def test_params_order_irrelevant(self):
        assert CacheKey.build("caption", "m", "p", "d", {"a": 1, "b": 2}) == CacheKey.build(
            "caption", "m", "p", "d", {"b": 2, "a": 1}
        )


class TestMockDeterminism:
    def test_edit_pure_function_of_inputs(self, tmp_path):
        pool = Backends.mock(seed=3, dim=8, generation_size=24)
        ref = toy_image()
        a = pool.edit_image(ref, "turn it blue")
        b = pool.edit_image(ref, "turn it blue")
        assert a.pixel_data == b.pixel_data
        assert a.image_id == b.image_id
        assert a.provenance == "mental"
        assert a.parent_ids == (ref.image_id,)
        assert a.width == a.height == 24
        c = pool.edit_image(ref, "turn it red")
        assert c.pixel_data != a.pixel_data

    def test_edit_depends_on_seed(self):
        ref = toy_image()
        a = Backends.mock(seed=1, generation_size=24).edit_image(ref, "x")
        b = Backends.mock(seed=2, generation_size=24).edit_image(ref, "x")
        assert a.pixel_data != b.pixel_data

    def test_generate_keyed_by_prompt(self):
        pool = Backends.mock(seed=0, generation_size=24)
        a = pool.generate_image("a red square")
        b = pool.generate_image("a red square")
        c = pool.generate_image("a blue square")
        assert a.pixel_data == b.pixel_data != c.pixel_data
        assert a.provenance == "synthetic"

    def test_empty_prompt_rejected(self):
        pool = Backends.mock(seed=0)
        with pytest.raises(BackendRejected):
            pool.generate_image("   ")
        with pytest.raises(BackendRejected):
            pool.edit_image(toy_image(), "")

    def test_caption_format_and_determinism(self):
        pool = Backends.mock(seed=0)
        img = toy_image()
        text = pool.caption(img, "describe")
        assert text == pool.caption(img, "describe")
        assert text.startswith("mock-caption-") and len(text) == len("mock-caption-") + 8
        assert text == mock_caption_text(img.digest, "describe")

    def test_embed_same_bytes_same_vector(self):
        pool = Backends.mock(seed=0, dim=12)
        img = toy_image()
        a = pool.embed_image(img)
        b = pool.embed_image(img)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.dim == 12
        assert np.linalg.norm(a.values) == pytest.approx(1.0)

    def test_planted_pair_embeds_identically(self):
        pool = Backends.mock(seed=0, dim=12)
        mental = toy_image(image_id="m")
        target = toy_image(image_id="t")
        assert mental.pixel_data != target.pixel_data
        pool.mock_transport.plant("pair0", [mental.digest, target.digest])
        np.testing.assert_array_equal(
            pool.embed_image(mental).values, pool.embed_image(target).values
        )

    def test_plant_spans_image_and_text(self):
        from paracosm.backends import text_digest

        pool = Backends.mock(seed=0, dim=12)
        img = toy_image()
        pool.mock_transport.plant("k", [img.digest, text_digest("hello")])
        np.testing.assert_array_equal(
            pool.embed_image(img).values, pool.embed_text("hello").values
        )

    def test_dimension_drift(self):
        pool = Backends.mock(seed=0, dim=8)
        bad = BackendDescriptor(
            backend_id="b", capability="embed_image", endpoint="mock", model_name="mock", dim=16
        )
        pool.descriptors["embed_image"] = bad
        with pytest.raises(DimensionDrift):
            pool.embed_image(toy_image())


class TestCacheContract:
    def test_cold_equals_warm_and_skips_transport(self, tmp_path):
        pool = Backends.mock(seed=0, dim=8, generation_size=24, cache_dir=tmp_path)
        ref = toy_image()
        cold = pool.edit_image(ref, "p")
        calls_after_cold = pool.transport_calls().get("image_edit", 0)
        warm = pool.edit_image(ref, "p")
        assert warm.pixel_data == cold.pixel_data
        assert pool.transport_calls().get("image_edit", 0) == calls_after_cold == 1

    def test_cache_covers_all_capabilities(self, tmp_path):
        pool = Backends.mock(seed=0, dim=8, generation_size=24, cache_dir=tmp_path)
        img = toy_image()
        ops = [
            lambda: pool.edit_image(img, "e"),
            lambda: pool.generate_image("g"),
            lambda: pool.caption(img, "c"),
            lambda: pool.embed_image(img),
            lambda: pool.embed_text("t"),
        ]
        first = [op() for op in ops]
        base = dict(pool.transport_calls())
        second = [op() for op in ops]
        assert pool.transport_calls() == base
        for a, b in zip(first, second):
            if hasattr(a, "pixel_data"):
                assert a.pixel_data == b.pixel_data
            elif hasattr(a, "values"):
                np.testing.assert_array_equal(a.values, b.values)
            else:
                assert a == b

    def test_cache_shared_across_pools(self, tmp_path):
        a = Backends.mock(seed=0, dim=8, generation_size=24, cache_dir=tmp_path)
        img = toy_image()
        a.generate_image("shared prompt")
        b = Backends.mock(seed=0, dim=8, generation_size=24, cache_dir=tmp_path)
        b.generate_image("shared prompt")
        assert b.transport_calls().get("text_to_image", 0) == 0

    def test_cache_isolated_by_seed(self, tmp_path):
        a = Backends.mock(seed=0, dim=8, generation_size=24, cache_dir=tmp_path)
        b = Backends.mock(seed=1, dim=8, generation_size=24, cache_dir=tmp_path)
        pa = a.generate_image("p")
        pb = b.generate_image("p")
        assert pa.pixel_data != pb.pixel_data
        assert b.transport_calls().get("text_to_image", 0) == 1

    def test_raw_cache_round_trip(self, tmp_path):
        cache = ContentCache(tmp_path)
        key = CacheKey.build("caption", "m", "p", "d")
        assert cache.get("caption", key) is None
        cache.put("caption", key, b"value")
        assert cache.get("caption", key) == b"value"
        assert cache.hits == 1 and cache.misses == 1

    def test_concurrent_identical_puts(self, tmp_path):
        cache = ContentCache(tmp_path)
        key = CacheKey.build("caption", "m", "p", "d")
        threads = [
            threading.Thread(target=cache.put, args=("caption", key, b"same")) for _ in range(8)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert cache.get("caption", key) == b"same"


class _FakeResponse:
    def __init__(self, status_code=200, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload
        self.text = text

    def json(self):
        if self._payload is None:
            raise ValueError("no json")
        return self._payload


DESC = BackendDescriptor(
    backend_id="cap",
    capability="caption",
    endpoint="http://backend.test/v1/caption",
    model_name="captioner",
    timeout_s=1.0,
    max_retries=3,
)


class TestHttpRetries:
    def test_timeout_exhausts_budget_with_backoff(self, monkeypatch):
        sleeps: list[float] = []
        transport = HttpTransport(sleeper=sleeps.append)
        attempts = {"n": 0}

        def failing_post(url, json=None, timeout=None):
            attempts["n"] += 1
            raise requests.Timeout("boom")

        monkeypatch.setattr(transport._session, "post", failing_post)
        with pytest.raises(BackendTimeout) as exc_info:
            transport.caption(DESC, b"img", "p")
        assert exc_info.value.attempts == 4
        assert attempts["n"] == 4
        assert sleeps == [1.0, 2.0, 4.0]

    def test_backoff_capped_at_30s(self, monkeypatch):
        sleeps: list[float] = []
        transport = HttpTransport(sleeper=sleeps.append)
        desc = BackendDescriptor(
            backend_id="cap",
            capability="caption",
            endpoint="http://backend.test",
            model_name="m",
            max_retries=7,
        )
        monkeypatch.setattr(
            transport._session,
            "post",
            lambda *a, **k: (_ for _ in ()).throw(requests.ConnectionError("x")),
        )
        with pytest.raises(BackendTimeout):
            transport.caption(desc, b"img", "p")
        assert sleeps == [1.0, 2.0, 4.0, 8.0, 16.0, 30.0, 30.0]

    def test_rejection_is_not_retried(self, monkeypatch):
        transport = HttpTransport(sleeper=lambda s: pytest.fail("must not sleep"))
        attempts = {"n": 0}

        def rejecting_post(url, json=None, timeout=None):
            attempts["n"] += 1
            return _FakeResponse(status_code=422, payload={"error": "nope"})

        monkeypatch.setattr(transport._session, "post", rejecting_post)
        with pytest.raises(BackendRejected, match="nope"):
            transport.caption(DESC, b"img", "the prompt")
        assert attempts["n"] == 1

    def test_success_after_transient_failures(self, monkeypatch):
        transport = HttpTransport(sleeper=lambda s: None)
        attempts = {"n": 0}

        def flaky_post(url, json=None, timeout=None):
            attempts["n"] += 1
            if attempts["n"] < 3:
                raise requests.Timeout("flaky")
            return _FakeResponse(payload={"text": "ok"})

        monkeypatch.setattr(transport._session, "post", flaky_post)
        assert transport.caption(DESC, b"img", "p") == "ok"
        assert attempts["n"] == 3

    def test_malformed_json_body(self, monkeypatch):
        transport = HttpTransport()
        monkeypatch.setattr(
            transport._session, "post", lambda *a, **k: _FakeResponse(payload=None, text="<html>")
        )
        with pytest.raises(MalformedResponse):
            transport.caption(DESC, b"img", "p")

    def test_missing_fields(self, monkeypatch):
        transport = HttpTransport()
        monkeypatch.setattr(
            transport._session, "post", lambda *a, **k: _FakeResponse(payload={"oops": 1})
        )
        with pytest.raises(MalformedResponse):
            transport.caption(DESC, b"img", "p")
        with pytest.raises(MalformedResponse):
            transport.embed_text(
                BackendDescriptor(
                    backend_id="e",
                    capability="embed_text",
                    endpoint="http://backend.test",
                    model_name="m",
                ),
                "t",
            )


class _WireHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        if self.path == "/caption":
            out = {"text": f"seen:{body['model']}:{body['prompt']}"}
        elif self.path == "/embed":
            out = {"vector": [1.0, 2.0, 3.0]}
        elif self.path == "/reject":
            self.send_response(400)
            payload = json.dumps({"error": "bad request"}).encode()
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)
            return
        else:
            out = {}
        payload = json.dumps(out).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def wire_server():
    server = HTTPServer(("127.0.0.1", 0), _WireHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


class TestHttpWire:
    def test_caption_round_trip(self, wire_server):
        transport = HttpTransport()
        desc = BackendDescriptor(
            backend_id="c",
            capability="caption",
            endpoint=f"{wire_server}/caption",
            model_name="remote-captioner",
        )
        assert transport.caption(desc, b"png", "hello") == "seen:remote-captioner:hello"

    def test_embed_round_trip(self, wire_server):
        transport = HttpTransport()
        desc = BackendDescriptor(
            backend_id="e",
            capability="embed_text",
            endpoint=f"{wire_server}/embed",
            model_name="encoder",
        )
        np.testing.assert_array_equal(transport.embed_text(desc, "t"), [1.0, 2.0, 3.0])

    def test_http_error_payload_surfaces(self, wire_server):
        transport = HttpTransport()
        desc = BackendDescriptor(
            backend_id="c",
            capability="caption",
            endpoint=f"{wire_server}/reject",
            model_name="m",
        )
        with pytest.raises(BackendRejected, match="bad request"):
            transport.caption(desc, b"png", "p")


class _WhitespaceCaptioner:
    calls: dict = {}

    def caption(self, desc, image_png, prompt):
        return "   \n"


def test_empty_caption_rejected():
    pool = Backends.mock(seed=0, dim=8)
    pool.transports["caption"] = _WhitespaceCaptioner()
    with pytest.raises(EmptyCaption):
        pool.caption(toy_image(), "describe")


def test_mock_edit_helper_matches_pool(tmp_path):
    pool = Backends.mock(seed=5, dim=8, generation_size=24)
    ref = toy_image()
    via_pool = pool.edit_image(ref, "prompt")
    via_helper = mock_edit_png(5, ref.digest, "prompt", 24)
    assert via_pool.pixel_data == via_helper


class TestBuildBackends:
    def test_defaults_to_all_mock(self):
        from paracosm.backends import build_backends

        pool = build_backends({})
        assert pool.is_mock
        assert pool.cache is None

    def test_env_url_overrides_config(self, monkeypatch):
        from paracosm.backends import build_backends

        monkeypatch.setenv("PARACOSM_BACKEND_CAPTION_URL", "http://cap.example/v1")
        pool = build_backends({"backends": {"caption": {"endpoint": "mock"}}})
        assert pool.descriptors["caption"].endpoint == "http://cap.example/v1"
        assert isinstance(pool.transports["caption"], HttpTransport)
        assert pool.descriptors["embed_text"].endpoint == "mock"

    def test_env_cache_dir_wins(self, monkeypatch, tmp_path):
        from paracosm.backends import build_backends

        monkeypatch.setenv("PARACOSM_CACHE_DIR", str(tmp_path / "env-cache"))
        pool = build_backends({"backends": {"cache_dir": str(tmp_path / "cfg-cache")}})
        assert pool.cache is not None
        assert str(pool.cache.root).startswith(str(tmp_path / "env-cache"))

    def test_config_table_sets_descriptor_fields(self):
        from paracosm.backends import build_backends

        pool = build_backends(
            {
                "backends": {
                    "seed": 9,
                    "dim": 24,
                    "image_edit": {
                        "endpoint": "http://edits.example",
                        "model": "editor-xl",
                        "timeout_s": 12.5,
                        "max_retries": 1,
                    },
                }
            }
        )
        desc = pool.descriptors["image_edit"]
        assert desc.model_name == "editor-xl"
        assert desc.timeout_s == 12.5
        assert desc.max_retries == 1
        assert pool.descriptors["embed_image"].dim == 24
