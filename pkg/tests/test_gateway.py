import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from tsrkit.gateway import (
    AuthenticationError,
    GatewayError,
    LiveBackend,
    MalformedReplyError,
    MllmGateway,
    MllmRequest,
    MllmResponse,
    MockBackend,
    RateLimiter,
    ResponseCache,
    request_digest,
)


def make_request(text="identify this", images=(b"\x89PNGfake",), **kw):
    return MllmRequest(images=list(images), text=text, **kw)


class TestRequestDigest:
    def test_equal_requests_equal_digest(self):
        assert request_digest(make_request()) == request_digest(make_request())

    def test_any_byte_difference_changes_digest(self):
        base = request_digest(make_request())
        assert request_digest(make_request(text="identify that")) != base
        assert request_digest(make_request(images=[b"\x89PNGfakf"])) != base
        assert request_digest(make_request(temperature=0.5)) != base
        assert request_digest(make_request(model_tag="other")) != base

    def test_field_boundaries_unambiguous(self):
        a = make_request(images=[b"ab", b"c"])
        b = make_request(images=[b"a", b"bc"])
        assert request_digest(a) != request_digest(b)

    def test_empty_request_rejected_before_any_call(self):
        with pytest.raises(GatewayError):
            MllmRequest(images=[], text="")


class TestMockBackend:
    def test_fixture_lookup(self):
        req = make_request()
        backend = MockBackend(fixtures={request_digest(req): "stop sign"})
        assert backend.complete(req).text == "stop sign"

    def test_fixture_directory(self, tmp_path):
        req = make_request()
        (tmp_path / f"{request_digest(req)}.txt").write_text("yield sign", encoding="utf-8")
        backend = MockBackend(fixtures_dir=tmp_path)
        assert backend.complete(req).text == "yield sign"

    def test_fallback_deterministic_across_instances(self):
        req = make_request()
        first = MockBackend().complete(req).text
        second = MockBackend().complete(req).text
        assert first == second
        assert first  # non-empty


def counting(backend):
    class Counting:
        calls = 0

        def complete(self, req):
            type(self).calls += 1
            return backend.complete(req)

    return Counting()


class TestCache:
    def test_hit_after_store(self, tmp_path):
        gateway = MllmGateway(MockBackend())
        cache = ResponseCache(tmp_path)
        req = make_request()
        first, hit1 = gateway.complete_cached(req, cache)
        second, hit2 = gateway.complete_cached(req, cache)
        assert (hit1, hit2) == (False, True)
        assert second.text == first.text

    def test_temperature_creates_distinct_entries(self, tmp_path):
        backend = counting(MockBackend())
        gateway = MllmGateway(backend)
        cache = ResponseCache(tmp_path)
        gateway.complete_cached(make_request(temperature=0.0), cache)
        gateway.complete_cached(make_request(temperature=0.7), cache)
        assert type(backend).calls == 2

    def test_hand_edited_response_returned(self, tmp_path):
        gateway = MllmGateway(MockBackend())
        cache = ResponseCache(tmp_path)
        req = make_request()
        gateway.complete_cached(req, cache)
        digest = request_digest(req)
        entry = tmp_path / digest[:2] / digest / "response.txt"
        entry.write_text("expert-corrected text", encoding="utf-8")
        resp, hit = gateway.complete_cached(req, cache)
        assert hit is True
        assert resp.text == "expert-corrected text"

    def test_corrupt_entry_falls_back_to_miss(self, tmp_path):
        backend = counting(MockBackend())
        gateway = MllmGateway(backend)
        cache = ResponseCache(tmp_path)
        req = make_request()
        gateway.complete_cached(req, cache)
        digest = request_digest(req)
        (tmp_path / digest[:2] / digest / "response.txt").write_bytes(b"\xff\xfe\x00bad")
        resp, hit = gateway.complete_cached(req, cache)
        assert hit is False
        assert type(backend).calls == 2
        assert resp.text  # repaired entry served afterwards
        assert gateway.complete_cached(req, cache)[1] is True

    def test_layout_one_directory_per_prefix(self, tmp_path):
        gateway = MllmGateway(MockBackend())
        cache = ResponseCache(tmp_path)
        req = make_request()
        gateway.complete_cached(req, cache)
        digest = request_digest(req)
        entry = tmp_path / digest[:2] / digest
        assert (entry / "request.json").exists()
        assert (entry / "response.txt").exists()
        meta = json.loads((entry / "request.json").read_text())
        assert meta["model_tag"] == "mock"
        assert meta["text"] == "identify this"


class _ScriptedHandler(BaseHTTPRequestHandler):
    script: list = []
    seen: list = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        type(self).seen.append((self.headers.get("Authorization"), body))
        status, payload = (
            type(self).script.pop(0) if type(self).script else (200, _chat_reply("fallback"))
        )
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


def _chat_reply(text):
    return json.dumps(
        {
            "choices": [{"message": {"content": text}}],
            "usage": {"prompt_tokens": 11, "completion_tokens": 3},
        }
    ).encode("utf-8")


@pytest.fixture
def stub_server():
    handler = type("Handler", (_ScriptedHandler,), {"script": [], "seen": []})
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions", handler
    server.shutdown()
    thread.join(timeout=5)


class TestLiveBackend:
    def test_retry_after_429_then_success(self, stub_server):
        url, handler = stub_server
        handler.script[:] = [
            (429, b'{"error": "rate limited"}'),
            (429, b'{"error": "rate limited"}'),
            (200, _chat_reply("stop sign")),
        ]
        gateway = MllmGateway(
            LiveBackend(url, api_key="k"), max_retries=3, backoff_seconds=0.001
        )
        resp = gateway.complete(make_request())
        assert resp.text == "stop sign"
        assert resp.usage == (11, 3)
        assert resp.latency > 0
        assert len(handler.seen) == 3

    def test_retries_exhausted(self, stub_server):
        url, handler = stub_server
        handler.script[:] = [(500, b"{}")] * 3
        gateway = MllmGateway(
            LiveBackend(url, api_key="k"), max_retries=2, backoff_seconds=0.001
        )
        with pytest.raises(GatewayError, match="after 2 retries"):
            gateway.complete(make_request())
        assert len(handler.seen) == 3

    def test_auth_failure_not_retried(self, stub_server):
        url, handler = stub_server
        handler.script[:] = [(401, b'{"error": "bad key"}')]
        gateway = MllmGateway(
            LiveBackend(url, api_key="wrong"), max_retries=5, backoff_seconds=0.001
        )
        with pytest.raises(AuthenticationError):
            gateway.complete(make_request())
        assert len(handler.seen) == 1

    def test_malformed_reply(self, stub_server):
        url, handler = stub_server
        handler.script[:] = [(200, b"this is not json")]
        gateway = MllmGateway(LiveBackend(url, api_key="k"))
        with pytest.raises(MalformedReplyError):
            gateway.complete(make_request())

    def test_missing_credential_rejected(self, monkeypatch):
        monkeypatch.delenv("TSRKIT_API_KEY", raising=False)
        with pytest.raises(AuthenticationError, match="TSRKIT_API_KEY"):
            LiveBackend("http://example.invalid/")

    def test_wire_format(self, stub_server):
        url, handler = stub_server
        handler.script[:] = [(200, _chat_reply("ok"))]
        gateway = MllmGateway(LiveBackend(url, api_key="secret"), model_tag="gpt-test")
        gateway.complete(gateway.request([b"imagebytes"], "the prompt"))
        auth, body = handler.seen[0]
        assert auth == "Bearer secret"
        payload = json.loads(body)
        assert payload["model"] == "gpt-test"
        parts = payload["messages"][0]["content"]
        assert parts[0] == {"type": "text", "text": "the prompt"}
        assert parts[1]["image_url"]["url"].startswith("data:image/png;base64,")


class TestRateLimiter:
    def test_sliding_window_ceiling(self):
        now = [0.0]

        def clock():
            return now[0]

        def sleep(seconds):
            assert seconds >= 0
            now[0] += seconds

        limiter = RateLimiter(10, clock=clock, sleep=sleep)
        dispatches = []
        for _ in range(100):
            limiter.acquire()
            dispatches.append(now[0])
            now[0] += 0.01  # simulated work between calls
        for i, start in enumerate(dispatches):
            in_window = [t for t in dispatches if start <= t < start + 60.0]
            assert len(in_window) <= 10

    def test_unlimited_when_zero(self):
        limiter = RateLimiter(0, clock=lambda: 0.0, sleep=lambda s: None)
        for _ in range(1000):
            limiter.acquire()

    def test_gateway_respects_ceiling_with_virtual_clock(self):
        now = [0.0]

        def clock():
            return now[0]

        def sleep(seconds):
            now[0] += max(0.0, seconds)

        stamps = []

        class Recorder:
            def complete(self, req):
                stamps.append(now[0])
                return MllmResponse(text="ok", model_tag=req.model_tag)

        gateway = MllmGateway(Recorder(), rpm_limit=5, clock=clock, sleep=sleep)
        for _ in range(23):
            gateway.complete(make_request())
        for start in stamps:
            assert sum(1 for t in stamps if start <= t < start + 60.0) <= 5
