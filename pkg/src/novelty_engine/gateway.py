"""Access to every external service the pipeline talks to.

All traffic (chat completions, embeddings, and plain HTTP such as the
metadata API or the TEI service) goes through :class:`Gateway`, which layers
a content-addressed response cache over one of three backends:

* ``live``   - dispatch over the network,
* ``record`` - dispatch over the network and store the exchange as a fixture,
* ``replay`` - answer only from stored fixtures; never touch the network.

Fixtures live at ``<root>/<first-2-hex>/<digest>.json`` and hold the
normalized request next to the raw response body.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
import os
import tempfile
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Protocol

import httpx

from .errors import BudgetExceeded, EmptyCompletion, FixtureMiss, ProviderError

TEMPLATE_IDS = frozenset(
    {
        "extraction",
        "landscape",
        "delta",
        "summary",
        "normalization",
        "core-judgments",
        "judge",
        "query-gen",
        "rerank",
        "naive",
    }
)
MODES = ("record", "replay", "live")
RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def digest_of(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class PromptRequest:
    template_id: str
    rendered_text: str
    temperature: float = 0.0
    max_output_tokens: int = 4096
    role_context: str | None = None
    # Distinguishes repeated samples of the same prompt (e.g. judge runs).
    replicate: int = 0

    def __post_init__(self) -> None:
        if self.template_id not in TEMPLATE_IDS:
            raise ValueError(f"unknown template id {self.template_id!r}")
        if not self.rendered_text.strip():
            raise ValueError("rendered_text must be non-empty")
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 1]")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")

    def normalized(self, model_id: str = "") -> dict[str, Any]:
        body = asdict(self)
        body["kind"] = "chat"
        body["model_id"] = model_id
        return body


def request_digest(req: PromptRequest, model_id: str = "") -> str:
    return digest_of(req.normalized(model_id))


@dataclass(frozen=True)
class CompletionResult:
    text: str
    provider_id: str
    from_replay: bool
    usage: dict[str, int] = field(default_factory=dict)
    digest: str = ""


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    model_id: str

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class HttpResponse:
    status: int
    content: bytes
    content_type: str = ""
    digest: str = ""

    @property
    def ok(self) -> bool:
        return 200 <= self.status < 300

    @property
    def text(self) -> str:
        return self.content.decode("utf-8", errors="replace")

    def json(self) -> Any:
        return json.loads(self.content)


# --------------------------------------------------------------------------
# storage


class DigestStore:
    """Directory of JSON documents addressed by hex digest."""

    def __init__(self, root: str | os.PathLike[str]) -> None:
        self.root = Path(root)

    def path(self, digest: str) -> Path:
        return self.root / digest[:2] / f"{digest}.json"

    def get(self, digest: str) -> dict[str, Any] | None:
        p = self.path(digest)
        if not p.exists():
            return None
        return json.loads(p.read_text(encoding="utf-8"))

    def put(self, digest: str, request: dict[str, Any], response: dict[str, Any]) -> None:
        p = self.path(digest)
        p.parent.mkdir(parents=True, exist_ok=True)
        doc = {"digest": digest, "request": request, "response": response}
        payload = json.dumps(doc, sort_keys=True, indent=1, ensure_ascii=False) + "\n"
        # atomic rename so concurrent runs sharing the directory never see partial files
        fd, tmp = tempfile.mkstemp(dir=p.parent, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(payload)
            os.replace(tmp, p)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def __contains__(self, digest: str) -> bool:
        return self.path(digest).exists()

    def digests(self) -> list[str]:
        if not self.root.exists():
            return []
        return sorted(p.stem for p in self.root.glob("??/*.json"))


class FixtureStore(DigestStore):
    def __init__(self, root: str | os.PathLike[str], mode: str = "replay") -> None:
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        super().__init__(root)
        self.mode = mode


# --------------------------------------------------------------------------
# clocks and rate limiting


class Clock(Protocol):
    def monotonic(self) -> float: ...

    def sleep(self, seconds: float) -> None: ...


class SystemClock:
    def monotonic(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class VirtualClock:
    """Clock whose sleep advances time instantly; used by tests."""

    def __init__(self, start: float = 0.0) -> None:
        self.now = start
        self.sleeps: list[float] = []

    def monotonic(self) -> float:
        return self.now

    def sleep(self, seconds: float) -> None:
        self.sleeps.append(seconds)
        if seconds > 0:
            self.now += seconds


class RateLimiter:
    """Sliding-window gate: at most ``max_calls`` dispatches per ``interval``."""

    def __init__(self, max_calls: int, interval: float, clock: Clock | None = None) -> None:
        if max_calls < 1 or interval <= 0:
            raise ValueError("max_calls must be >= 1 and interval > 0")
        self.max_calls = max_calls
        self.interval = interval
        self.clock = clock or SystemClock()
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        with self._lock:
            while True:
                now = self.clock.monotonic()
                while self._stamps and self._stamps[0] <= now - self.interval:
                    self._stamps.popleft()
                if len(self._stamps) < self.max_calls:
                    self._stamps.append(now)
                    return now
                self.clock.sleep(self._stamps[0] + self.interval - now)


# --------------------------------------------------------------------------
# gateway


@dataclass
class ProviderSettings:
    chat_url: str = "https://api.openai.com/v1/chat/completions"
    chat_model: str = "gpt-4.1"
    chat_key_env: str = "OPENAI_API_KEY"
    context_tokens: int = 1_000_000
    budget_safety: float = 0.9
    embed_url: str = "https://api.openai.com/v1/embeddings"
    embed_model: str = "allenai/specter2"
    embed_key_env: str = "EMBEDDING_API_KEY"
    embed_dim: int = 768
    embed_batch_size: int = 64
    rate_limit_calls: int = 10
    rate_limit_interval: float = 1.0
    max_attempts: int = 3
    backoff_base: float = 1.0
    timeout: float = 120.0


@dataclass(frozen=True)
class CallRecord:
    kind: str
    stage: str
    digest: str
    source: str  # "cache", "replay", "live" or "record"
    label: str = ""


class Gateway:
    """Uniform, cache-backed access to chat, embedding and HTTP providers."""

    def __init__(
        self,
        settings: ProviderSettings | None = None,
        *,
        fixtures: FixtureStore | None = None,
        cache: DigestStore | None = None,
        transport: httpx.BaseTransport | None = None,
        clock: Clock | None = None,
        env: dict[str, str] | None = None,
    ) -> None:
        self.settings = settings or ProviderSettings()
        self.fixtures = fixtures
        self.mode = fixtures.mode if fixtures is not None else "live"
        self.cache = cache
        self.clock = clock or SystemClock()
        self.env = os.environ if env is None else env
        self.limiter = RateLimiter(
            self.settings.rate_limit_calls, self.settings.rate_limit_interval, self.clock
        )
        self._transport = transport
        self._client: httpx.Client | None = None
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._log_lock = threading.Lock()
        self.calls: list[CallRecord] = []
        self.stage = ""

    # -- bookkeeping -------------------------------------------------------

    def _lock_for(self, digest: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(digest, threading.Lock())

    def _log(self, kind: str, digest: str, source: str, label: str) -> None:
        with self._log_lock:
            self.calls.append(CallRecord(kind, self.stage, digest, source, label))

    def dispatched(self) -> list[CallRecord]:
        """Calls that reached a backend (fixture store or network), not the cache."""
        return [c for c in self.calls if c.source != "cache"]

    def call_digests(self) -> list[str]:
        return sorted({c.digest for c in self.calls})

    @property
    def client(self) -> httpx.Client:
        if self._client is None:
            self._client = httpx.Client(transport=self._transport, timeout=self.settings.timeout)
        return self._client

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None

    # -- core resolution -----------------------------------------------------

    def _resolve(
        self,
        kind: str,
        request: dict[str, Any],
        live: Callable[[], dict[str, Any]],
        label: str = "",
        cacheable: Callable[[dict[str, Any]], bool] = lambda r: True,
    ) -> tuple[str, dict[str, Any], str]:
        digest = digest_of(request)
        with self._lock_for(digest):
            if self.cache is not None:
                hit = self.cache.get(digest)
                if hit is not None:
                    self._log(kind, digest, "cache", label)
                    return digest, hit["response"], "cache"
            if self.mode == "replay":
                assert self.fixtures is not None
                doc = self.fixtures.get(digest)
                if doc is None:
                    raise FixtureMiss(digest, label or kind)
                response, source = doc["response"], "replay"
            else:
                response = live()
                source = self.mode
                if self.mode == "record":
                    assert self.fixtures is not None
                    self.fixtures.put(digest, request, response)
            self._log(kind, digest, source, label)
            if self.cache is not None and "error" not in response and cacheable(response):
                self.cache.put(digest, request, response)
            return digest, response, source

    def _send(self, build: Callable[[], httpx.Request]) -> tuple[httpx.Response | None, str, int]:
        """Send with retry on transport errors, 429 and 5xx.

        Returns (response, error message, attempts); exactly one of response or
        error is meaningful - a retryable failure on the last attempt yields the
        final response object so callers can record it.
        """
        attempts = 0
        last_error = ""
        last_response: httpx.Response | None = None
        for attempt in range(self.settings.max_attempts):
            if attempt:
                self.clock.sleep(self.settings.backoff_base * 2 ** (attempt - 1))
            attempts += 1
            self.limiter.acquire()
            try:
                resp = self.client.send(build())
                resp.read()
            except httpx.TransportError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                last_response = None
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last_error = f"HTTP {resp.status_code}"
                last_response = resp
                continue
            return resp, "", attempts
        return last_response, last_error, attempts

    # -- chat ----------------------------------------------------------------

    def chat_complete(self, req: PromptRequest, label: str = "") -> CompletionResult:
        s = self.settings
        budget = s.context_tokens * s.budget_safety
        used = estimate_tokens(req.rendered_text + (req.role_context or ""))
        if used > budget:
            raise BudgetExceeded(
                f"{req.template_id}: ~{used} tokens exceeds budget {budget:.0f}"
            )
        request = req.normalized(s.chat_model)

        def live() -> dict[str, Any]:
            messages = []
            if req.role_context:
                messages.append({"role": "system", "content": req.role_context})
            messages.append({"role": "user", "content": req.rendered_text})
            body = {
                "model": s.chat_model,
                "messages": messages,
                "temperature": req.temperature,
                "max_tokens": req.max_output_tokens,
            }
            headers = self._auth(s.chat_key_env)
            resp, err, attempts = self._send(
                lambda: self.client.build_request("POST", s.chat_url, json=body, headers=headers)
            )
            if resp is None or not resp.is_success:
                status = resp.status_code if resp is not None else None
                return {"error": err or f"HTTP {status}", "status": status, "attempts": attempts}
            return {"body": resp.json()}

        digest, response, source = self._resolve(
            "chat", request, live, label or req.template_id
        )
        if "error" in response:
            raise ProviderError(
                f"chat completion failed: {response['error']}",
                attempts=response.get("attempts", 1),
                status=response.get("status"),
            )
        body = response["body"]
        try:
            text = body["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"unexpected chat response shape: {exc}") from exc
        if not text.strip():
            raise EmptyCompletion(f"{req.template_id}: provider returned empty text")
        usage = {k: int(v) for k, v in (body.get("usage") or {}).items() if isinstance(v, int)}
        return CompletionResult(
            text=text,
            provider_id=body.get("model", s.chat_model),
            from_replay=self.mode == "replay",
            usage=usage,
            digest=digest,
        )

    # -- embeddings ------------------------------------------------------------

    def _embed_request(self, text: str) -> dict[str, Any]:
        return {"kind": "embedding", "model_id": self.settings.embed_model, "text": text}

    def embed(self, texts: Iterable[str], label: str = "") -> list[EmbeddingVector]:
        texts = list(texts)
        for t in texts:
            if not t.strip():
                raise ValueError("cannot embed empty text")
        s = self.settings
        unique = list(dict.fromkeys(texts))
        resolved: dict[str, tuple[float, ...]] = {}

        # Batch the network round-trip for texts the cache cannot answer;
        # each text is still stored under its own digest.
        prefetched: dict[str, list[float]] = {}
        if self.mode != "replay":
            need = [
                t
                for t in unique
                if self.cache is None or digest_of(self._embed_request(t)) not in self.cache
            ]
            for i in range(0, len(need), s.embed_batch_size):
                chunk = need[i : i + s.embed_batch_size]
                prefetched.update(zip(chunk, self._embed_live(chunk)))

        for t in unique:
            request = self._embed_request(t)

            def live(t: str = t) -> dict[str, Any]:
                vec = prefetched.get(t)
                if vec is None:
                    vec = self._embed_live([t])[0]
                return {"embedding": vec}

            _, response, _ = self._resolve("embedding", request, live, label or "embed")
            resolved[t] = self._check_vector(response["embedding"])
        return [EmbeddingVector(resolved[t], s.embed_model) for t in texts]

    def _check_vector(self, values: list[float]) -> tuple[float, ...]:
        if len(values) != self.settings.embed_dim:
            raise ProviderError(
                f"embedding has dimension {len(values)}, expected {self.settings.embed_dim}"
            )
        out = tuple(float(v) for v in values)
        if not all(math.isfinite(v) for v in out):
            raise ProviderError("embedding contains non-finite values")
        return out

    def _embed_live(self, texts: list[str]) -> list[list[float]]:
        s = self.settings
        body = {"model": s.embed_model, "input": texts}
        headers = self._auth(s.embed_key_env)
        resp, err, attempts = self._send(
            lambda: self.client.build_request("POST", s.embed_url, json=body, headers=headers)
        )
        if resp is None or not resp.is_success:
            status = resp.status_code if resp is not None else None
            raise ProviderError(
                f"embedding request failed: {err or f'HTTP {status}'}", attempts, status
            )
        data = sorted(resp.json()["data"], key=lambda d: d.get("index", 0))
        if len(data) != len(texts):
            raise ProviderError(f"expected {len(texts)} embeddings, got {len(data)}")
        return [d["embedding"] for d in data]

    # -- generic http ------------------------------------------------------------

    def http(
        self,
        method: str,
        url: str,
        *,
        params: dict[str, Any] | None = None,
        json_body: Any = None,
        files: dict[str, tuple[str, bytes, str]] | None = None,
        headers: dict[str, str] | None = None,
        label: str = "",
    ) -> HttpResponse:
        """Issue an HTTP request through the cache/fixture layers.

        4xx responses are returned to the caller; retryable failures that
        survive every attempt raise :class:`ProviderError`.
        """
        clean_params = {k: str(v) for k, v in sorted((params or {}).items()) if v is not None}
        request = {
            "kind": "http",
            "method": method.upper(),
            "url": url,
            "params": clean_params,
            "json": json_body,
            "files": {
                name: {"filename": fn, "sha256": hashlib.sha256(data).hexdigest()}
                for name, (fn, data, _ct) in sorted((files or {}).items())
            },
        }

        def live() -> dict[str, Any]:
            resp, err, attempts = self._send(
                lambda: self.client.build_request(
                    method.upper(),
                    url,
                    params=clean_params or None,
                    json=json_body,
                    files=files,
                    headers=headers,
                )
            )
            if resp is None:
                return {"error": err, "status": None, "attempts": attempts}
            stored = _encode_body(resp)
            if resp.status_code in RETRYABLE_STATUS:
                stored.update(error=err, attempts=attempts)
            return stored

        digest, response, _ = self._resolve(
            "http", request, live, label or url, cacheable=lambda r: r.get("status", 0) < 500
        )
        if "error" in response:
            raise ProviderError(
                f"{method.upper()} {url} failed: {response['error']}",
                attempts=response.get("attempts", 1),
                status=response.get("status"),
            )
        return HttpResponse(
            status=response["status"],
            content=_decode_body(response),
            content_type=response.get("content_type", ""),
            digest=digest,
        )

    def _auth(self, env_name: str) -> dict[str, str]:
        key = self.env.get(env_name, "")
        return {"Authorization": f"Bearer {key}"} if key else {}


def _encode_body(resp: httpx.Response) -> dict[str, Any]:
    ctype = resp.headers.get("content-type", "")
    out: dict[str, Any] = {"status": resp.status_code, "content_type": ctype}
    raw = resp.content
    try:
        if "pdf" in ctype or "octet-stream" in ctype:
            raise UnicodeDecodeError("binary", b"", 0, 1, "binary content type")
        out["text"] = raw.decode("utf-8")
    except UnicodeDecodeError:
        out["base64"] = base64.b64encode(raw).decode("ascii")
    return out


def _decode_body(stored: dict[str, Any]) -> bytes:
    if "base64" in stored:
        return base64.b64decode(stored["base64"])
    return stored.get("text", "").encode("utf-8")
