"""Wire clients for generation and embedding services, plus deterministic twins.

This is the only module that opens network connections. The wire protocol is
the common chat-completions HTTP JSON format (POST /v1/chat/completions and
POST /v1/embeddings); endpoint and model names are fully configurable and no
vendor is assumed. Every live request/response pair can be recorded to a
JSON-lines replay log and served back verbatim for offline runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

API_KEY_ENV = "ELICIT_API_KEY"
DEFAULT_TIMEOUT_S = 60.0
MAX_RETRIES = 2
BACKOFF_BASE_S = 0.5


class BackendError(RuntimeError):
    pass


class AuthError(BackendError):
    """Missing or rejected credentials; never retried."""


class TransportError(BackendError):
    """Network-level failure or retryable server error."""


class MalformedResponseError(BackendError):
    pass


class ScriptExhaustedError(BackendError):
    """A scripted backend ran out of canned completions."""


@dataclass(frozen=True)
class Message:
    role: str  # system | user | assistant
    content: str


@dataclass(frozen=True)
class GenerationRequest:
    messages: tuple[Message, ...]
    temperature: float = 0.7
    max_tokens: int = 512
    model: str = ""

    def __post_init__(self):
        if not self.messages:
            raise ValueError("request must contain at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def fingerprint(self) -> str:
        payload = {
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "model": self.model,
        }
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class BackendConfig:
    endpoint: str = "http://localhost:8000"
    model: str = ""
    embed_model: str = ""
    timeout_s: float = DEFAULT_TIMEOUT_S
    max_concurrency: int = 4


class HttpBackend:
    """Chat-completions client with bounded retries and a concurrency cap.

    `transport` is injectable for fault-injection tests; the default posts
    JSON over urllib.
    """

    def __init__(self, config: BackendConfig, transport=None, api_key: str | None = None):
        self.config = config
        self._transport = transport or self._http_post
        self._key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self._semaphore = threading.Semaphore(max(1, config.max_concurrency))
        self.retry_count = 0

    def _http_post(self, path: str, body: dict) -> dict:
        if not self._key:
            raise AuthError(f"no API key: set {API_KEY_ENV}")
        req = urllib.request.Request(
            self.config.endpoint.rstrip("/") + path,
            data=json.dumps(body).encode("utf-8"),
            headers={
                "Content-Type": "application/json",
                "Authorization": f"Bearer {self._key}",
            },
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.config.timeout_s) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as e:
            if e.code in (401, 403):
                raise AuthError(f"auth rejected ({e.code})") from e
            raise TransportError(f"HTTP {e.code}") from e
        except (urllib.error.URLError, TimeoutError, OSError) as e:
            raise TransportError(str(e)) from e

    def _with_retries(self, path: str, body: dict) -> dict:
        delay = BACKOFF_BASE_S
        attempt = 0
        while True:
            try:
                with self._semaphore:
                    return self._transport(path, body)
            except AuthError:
                raise
            except TransportError as e:
                if attempt >= MAX_RETRIES:
                    raise
                attempt += 1
                self.retry_count += 1
                logger.warning("transport failure (%s), retry %d/%d", e, attempt, MAX_RETRIES)
                time.sleep(delay)
                delay *= 2

    def complete(self, request: GenerationRequest) -> str:
        body = {
            "model": request.model or self.config.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        doc = self._with_retries("/v1/chat/completions", body)
        try:
            return doc["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise MalformedResponseError(f"unexpected completion payload: {e}") from e

    def embed(self, texts: list[str]) -> list[list[float]]:
        if not texts:
            return []
        if any(not t.strip() for t in texts):
            raise ValueError("embed inputs must be non-empty")
        body = {"model": self.config.embed_model or self.config.model, "input": list(texts)}
        doc = self._with_retries("/v1/embeddings", body)
        try:
            rows = sorted(doc["data"], key=lambda r: r["index"])
            out = []
            for row in rows:
                vec = [float(x) for x in row["embedding"]]
                norm = sum(x * x for x in vec) ** 0.5
                out.append([x / norm for x in vec] if norm > 0 else vec)
            return out
        except (KeyError, TypeError) as e:
            raise MalformedResponseError(f"unexpected embedding payload: {e}") from e


class ScriptedBackend:
    """Deterministic generation twin: serves canned completions.

    Either an ordered queue (consumed once; exhaustion is an error, never a
    silent recycle) or a map from request fingerprint to completion.
    """

    def __init__(self, script: list[str] | None = None, by_fingerprint: dict[str, str] | None = None):
        if (script is None) == (by_fingerprint is None):
            raise ValueError("provide exactly one of script, by_fingerprint")
        self._queue = list(script) if script is not None else None
        self._map = dict(by_fingerprint) if by_fingerprint is not None else None
        self.requests: list[GenerationRequest] = []

    def complete(self, request: GenerationRequest) -> str:
        self.requests.append(request)
        if self._queue is not None:
            if not self._queue:
                raise ScriptExhaustedError("scripted completions exhausted")
            return self._queue.pop(0)
        fp = request.fingerprint()
        if fp not in self._map:
            raise ScriptExhaustedError(f"no scripted completion for fingerprint {fp[:12]}")
        return self._map[fp]


@dataclass
class RecordingBackend:
    """Wraps a live client and appends {fingerprint, request, response} lines."""

    inner: HttpBackend
    log_path: Path
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def complete(self, request: GenerationRequest) -> str:
        text = self.inner.complete(request)
        entry = {
            "fingerprint": request.fingerprint(),
            "request": {
                "messages": [{"role": m.role, "content": m.content} for m in request.messages],
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
                "model": request.model,
            },
            "response": text,
        }
        with self._lock, open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n")
        return text


class ReplayBackend:
    """Serves completions recorded by RecordingBackend, keyed by fingerprint."""

    def __init__(self, log_path: str | Path):
        self._map: dict[str, str] = {}
        with open(log_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    entry = json.loads(line)
                    self._map[entry["fingerprint"]] = entry["response"]

    def complete(self, request: GenerationRequest) -> str:
        fp = request.fingerprint()
        if fp not in self._map:
            raise ScriptExhaustedError(f"replay log has no entry for fingerprint {fp[:12]}")
        return self._map[fp]
