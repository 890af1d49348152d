"""Uniform access to multimodal LLM backends.

Provides a live HTTP chat-vision client and a deterministic offline mock
behind one gateway that adds retry with exponential backoff, a sliding-window
rate limiter, and a content-addressed response cache. Cached responses are
plain text files, so description texts can be audited and hand-corrected.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import socket
import struct
import threading
import time
import urllib.error
import urllib.request
from collections import deque
from dataclasses import dataclass
from pathlib import Path

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_OUTPUT_TOKENS = 512
API_KEY_ENV = "TSRKIT_API_KEY"


class GatewayError(Exception):
    """Base error for backend access failures."""


class AuthenticationError(GatewayError):
    """Credential rejected; never retried."""


class TransientBackendError(GatewayError):
    """Rate limit, server error, or network fault; retried with backoff."""


class MalformedReplyError(GatewayError):
    """Backend answered with an undecodable body."""


@dataclass
class MllmRequest:
    """One chat-vision call: ordered image payloads plus a prompt string."""

    images: list[bytes]
    text: str
    model_tag: str = "mock"
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        if not self.images and not self.text:
            raise GatewayError("request needs at least one image or non-empty text")
        if self.temperature < 0:
            raise GatewayError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise GatewayError("max_output_tokens must be >= 1")


@dataclass
class MllmResponse:
    text: str
    model_tag: str
    usage: tuple[int, int] = (0, 0)  # (input tokens, output tokens)
    latency: float = 0.0


def request_digest(req: MllmRequest) -> str:
    """Content hash over model tag, temperature, prompt text, and image bytes.

    Equal requests produce equal digests; any byte difference changes the
    digest. Length prefixes keep field boundaries unambiguous."""
    h = hashlib.sha256()
    for field in (req.model_tag.encode("utf-8"), repr(req.temperature).encode("ascii")):
        h.update(struct.pack(">I", len(field)))
        h.update(field)
    text = req.text.encode("utf-8")
    h.update(struct.pack(">I", len(text)))
    h.update(text)
    for payload in req.images:
        h.update(struct.pack(">I", len(payload)))
        h.update(payload)
    return h.hexdigest()


class MockBackend:
    """Offline deterministic backend.

    Answers from a digest-keyed fixture mapping (in-memory dict and/or a
    directory of "<digest>.txt" files); without a fixture it falls back to a
    deterministic function of the digest, so any pipeline runs offline."""

    def __init__(self, fixtures: dict[str, str] | None = None, fixtures_dir: str | Path | None = None):
        self.fixtures = dict(fixtures or {})
        self.fixtures_dir = Path(fixtures_dir) if fixtures_dir else None

    def complete(self, req: MllmRequest) -> MllmResponse:
        digest = request_digest(req)
        text = self.fixtures.get(digest)
        if text is None and self.fixtures_dir is not None:
            fixture_path = self.fixtures_dir / f"{digest}.txt"
            if fixture_path.exists():
                text = fixture_path.read_text(encoding="utf-8")
        if text is None:
            text = f"[mock response {digest[:16]}]"
        return MllmResponse(text=text, model_tag=req.model_tag)


class LiveBackend:
    """Chat-completion HTTP client: JSON body with interleaved text and
    base64 data-URL image parts. The credential comes from the environment,
    never from config files."""

    def __init__(
        self,
        endpoint_url: str,
        api_key: str | None = None,
        timeout_seconds: float = 60.0,
    ):
        self.endpoint_url = endpoint_url
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.timeout_seconds = timeout_seconds
        if not self.api_key:
            raise AuthenticationError(
                f"no API credential; set the {API_KEY_ENV} environment variable"
            )

    def _payload(self, req: MllmRequest) -> bytes:
        content: list[dict] = []
        if req.text:
            content.append({"type": "text", "text": req.text})
        for image in req.images:
            encoded = base64.b64encode(image).decode("ascii")
            content.append(
                {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{encoded}"}}
            )
        body = {
            "model": req.model_tag,
            "messages": [{"role": "user", "content": content}],
            "max_tokens": req.max_output_tokens,
            "temperature": req.temperature,
        }
        return json.dumps(body).encode("utf-8")

    def complete(self, req: MllmRequest) -> MllmResponse:
        request = urllib.request.Request(
            self.endpoint_url,
            data=self._payload(req),
            headers={
                "Content-Type": "application/json",
                "Authorization": f"Bearer {self.api_key}",
            },
            method="POST",
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout_seconds) as resp:
                raw = resp.read()
        except urllib.error.HTTPError as exc:
            raise _classify_http_error(exc.code, exc.reason) from exc
        except (urllib.error.URLError, socket.timeout, TimeoutError) as exc:
            raise TransientBackendError(f"network failure: {exc}") from exc
        try:
            reply = json.loads(raw.decode("utf-8"))
            text = reply["choices"][0]["message"]["content"]
            if not isinstance(text, str):
                raise TypeError("message content is not a string")
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedReplyError(f"cannot parse backend reply: {exc}") from exc
        usage = reply.get("usage", {})
        return MllmResponse(
            text=text,
            model_tag=req.model_tag,
            usage=(int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))),
        )


def _classify_http_error(code: int, reason) -> GatewayError:
    if code in (401, 403):
        return AuthenticationError(f"backend rejected credentials (HTTP {code})")
    if code == 429 or code >= 500:
        return TransientBackendError(f"HTTP {code}: {reason}")
    return GatewayError(f"HTTP {code}: {reason}")


class RateLimiter:
    """Caps dispatches to `rpm_limit` per sliding 60-second window.

    Dispatch decisions are serialized under a lock; clock and sleep are
    injectable so tests can drive a virtual clock."""

    WINDOW = 60.0

    def __init__(self, rpm_limit: int, clock=time.monotonic, sleep=time.sleep):
        self.rpm_limit = rpm_limit
        self._clock = clock
        self._sleep = sleep
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self.rpm_limit <= 0:  # unlimited
            return
        with self._lock:
            while True:
                now = self._clock()
                while self._stamps and self._stamps[0] + self.WINDOW <= now:
                    self._stamps.popleft()
                if len(self._stamps) < self.rpm_limit:
                    self._stamps.append(now)
                    return
                wait = self._stamps[0] + self.WINDOW - now
                if wait <= 0:  # float round-off left a due stamp behind
                    self._stamps.popleft()
                    continue
                self._sleep(wait)


class ResponseCache:
    """Content-addressed store: one directory per digest prefix, holding
    "request.json" (auditable request metadata) and "response.txt" (the
    verbatim backend text, editable by hand)."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _entry_dir(self, digest: str) -> Path:
        return self.root / digest[:2] / digest

    def load(self, digest: str) -> MllmResponse | None:
        entry = self._entry_dir(digest)
        response_path = entry / "response.txt"
        if not response_path.exists():
            return None
        try:
            text = response_path.read_bytes().decode("utf-8")
            meta = json.loads((entry / "request.json").read_text(encoding="utf-8"))
            model_tag = str(meta["model_tag"])
        except (OSError, ValueError, KeyError) as exc:
            log.warning("corrupt cache entry %s (%s); treating as miss", digest, exc)
            return None
        return MllmResponse(text=text, model_tag=model_tag)

    def store(self, digest: str, req: MllmRequest, resp: MllmResponse) -> None:
        entry = self._entry_dir(digest)
        entry.mkdir(parents=True, exist_ok=True)
        meta = {
            "model_tag": req.model_tag,
            "temperature": req.temperature,
            "max_output_tokens": req.max_output_tokens,
            "text": req.text,
            "image_sha256": [hashlib.sha256(p).hexdigest() for p in req.images],
            "usage": list(resp.usage),
        }
        _atomic_write(entry / "request.json", json.dumps(meta, indent=2, sort_keys=True).encode("utf-8"))
        _atomic_write(entry / "response.txt", resp.text.encode("utf-8"))


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


class MllmGateway:
    """Backend access point shared by all pipeline stages.

    Builds requests with the configured model tag and decoding defaults,
    enforces the requests-per-minute ceiling, and retries transient failures
    with exponential backoff."""

    def __init__(
        self,
        backend,
        model_tag: str = "mock",
        temperature: float = DEFAULT_TEMPERATURE,
        max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
        rpm_limit: int = 0,
        max_retries: int = 3,
        backoff_seconds: float = 0.5,
        clock=time.monotonic,
        sleep=time.sleep,
    ):
        self.backend = backend
        self.model_tag = model_tag
        self.temperature = temperature
        self.max_output_tokens = max_output_tokens
        self.max_retries = max_retries
        self.backoff_seconds = backoff_seconds
        self._clock = clock
        self._sleep = sleep
        self._limiter = RateLimiter(rpm_limit, clock=clock, sleep=sleep)

    def request(self, images: list[bytes], text: str) -> MllmRequest:
        return MllmRequest(
            images=list(images),
            text=text,
            model_tag=self.model_tag,
            max_output_tokens=self.max_output_tokens,
            temperature=self.temperature,
        )

    def complete(self, req: MllmRequest) -> MllmResponse:
        attempt = 0
        while True:
            self._limiter.acquire()
            started = self._clock()
            try:
                resp = self.backend.complete(req)
            except TransientBackendError as exc:
                if attempt >= self.max_retries:
                    raise GatewayError(
                        f"backend still failing after {attempt} retries: {exc}"
                    ) from exc
                delay = self.backoff_seconds * (2**attempt)
                log.warning("transient backend failure (%s); retrying in %.2fs", exc, delay)
                self._sleep(delay)
                attempt += 1
                continue
            resp.latency = self._clock() - started
            return resp

    def complete_cached(self, req: MllmRequest, cache: ResponseCache) -> tuple[MllmResponse, bool]:
        """Return (response, hit). Hits never contact the backend; misses call
        complete() and persist the result keyed by the request digest."""
        digest = request_digest(req)
        stored = cache.load(digest)
        if stored is not None:
            return stored, True
        resp = self.complete(req)
        cache.store(digest, req, resp)
        return resp, False
