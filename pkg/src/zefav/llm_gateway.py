"""Text-generation backends, request digests, the response cache and replay."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol

import httpx

from .errors import (
    BackendUnreachable,
    DuplicateDigestConflict,
    ReplayMiss,
    ResponseMalformed,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_TOKENS = 2048
_HEX64 = re.compile(r"^[0-9a-f]{64}$")
_TRANSIENT_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


class Stage(str, enum.Enum):
    RELATION_EXTRACTION = "relation_extraction"
    INFORE = "infore"
    VERDICT = "verdict"


class BackendKind(str, enum.Enum):
    HTTP = "http"
    REPLAY = "replay"
    FUNCTION = "function"


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    model_id: str
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = 0.0
    stop: tuple[str, ...] | None = None
    stage: Stage = Stage.VERDICT

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if int(self.max_tokens) < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.stop is not None:
            object.__setattr__(self, "stop", tuple(self.stop))
        object.__setattr__(self, "stage", Stage(self.stage))


@dataclass(frozen=True)
class GenerationResponse:
    text: str
    backend: BackendKind
    cached: bool
    latency_ms: int
    request_digest: str


def _field(buf: bytearray, value: str) -> None:
    raw = value.encode("utf-8")
    buf += str(len(raw)).encode("ascii") + b":" + raw + b";"


def digest(req: GenerationRequest) -> str:
    """SHA-256 over a length-prefixed serialization of the request.

    Covers prompt, model id, max_tokens, temperature and stop sequences in that
    order. The stage tag is deliberately left out so identical prompts share
    a cache entry.
    """
    buf = bytearray(b"zefav-request-v1;")
    _field(buf, req.prompt)
    _field(buf, req.model_id)
    _field(buf, str(int(req.max_tokens)))
    _field(buf, repr(float(req.temperature)))
    if req.stop is None:
        buf += b"-;"
    else:
        _field(buf, str(len(req.stop)))
        for s in req.stop:
            _field(buf, s)
    return hashlib.sha256(bytes(buf)).hexdigest()


# --- cache ------------------------------------------------------------------


class ResponseCache:
    """One file per digest under ``root``, plus a JSON sidecar with the request.

    Entries are immutable, so concurrent writers of the same digest are
    harmless: each write lands atomically via rename.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.txt"

    def get(self, key: str) -> str | None:
        path = self._path(key)
        try:
            return path.read_bytes().decode("utf-8")
        except FileNotFoundError:
            return None

    def put(self, key: str, text: str, req: GenerationRequest | None = None) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        _atomic_write(path, text.encode("utf-8"))
        if req is not None:
            meta = {
                "digest": key,
                "model_id": req.model_id,
                "max_tokens": req.max_tokens,
                "temperature": req.temperature,
                "stop": list(req.stop) if req.stop is not None else None,
                "stage": req.stage.value,
                "prompt_chars": len(req.prompt),
            }
            _atomic_write(path.with_suffix(".json"), json.dumps(meta, sort_keys=True).encode("utf-8"))

    def __contains__(self, key: str) -> bool:
        return self._path(key).exists()


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- replay -----------------------------------------------------------------


@dataclass
class ReplayStore:
    entries: dict[str, str] = field(default_factory=dict)
    path: Path | None = None

    def __post_init__(self) -> None:
        for key in self.entries:
            if not _HEX64.match(key):
                raise ValueError(f"invalid digest in replay store: {key!r}")

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, key: str) -> str:
        try:
            return self.entries[key]
        except KeyError:
            raise ReplayMiss(key) from None

    @classmethod
    def load(cls, path: str | Path) -> ReplayStore:
        path = Path(path)
        entries: dict[str, str] = {}
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                obj = json.loads(line)
                key, text = obj["digest"], obj["text"]
                if key in entries and entries[key] != text:
                    raise DuplicateDigestConflict(f"{path}:{lineno}: digest {key} maps to two texts")
                entries[key] = text
        return cls(entries, path)

    def save(self, path: str | Path | None = None) -> Path:
        path = Path(path or self.path)
        lines = [
            json.dumps({"digest": k, "text": self.entries[k]}, ensure_ascii=False)
            for k in sorted(self.entries)
        ]
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8", newline="\n")
        self.path = path
        return path


def record_replay(run_log: str | Path | Iterable[str | Path], out: str | Path) -> ReplayStore:
    """Build a replay store from one or more run logs written by :class:`Gateway`."""
    logs = [run_log] if isinstance(run_log, (str, Path)) else list(run_log)
    entries: dict[str, str] = {}
    for log in logs:
        with Path(log).open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                key, text = obj["digest"], obj["text"]
                if key in entries and entries[key] != text:
                    raise DuplicateDigestConflict(f"digest {key} maps to two different texts")
                entries[key] = text
    store = ReplayStore(entries)
    store.save(out)
    return store


# --- backends ---------------------------------------------------------------


class Backend(Protocol):
    kind: BackendKind

    def complete(self, req: GenerationRequest, key: str) -> str: ...


class ReplayBackend:
    """Closed-world backend: serves canned text by digest, never falls through."""

    kind = BackendKind.REPLAY

    def __init__(self, store: ReplayStore):
        self.store = store

    def complete(self, req: GenerationRequest, key: str) -> str:
        return self.store.lookup(key)


class FunctionBackend:
    """In-process backend wrapping ``fn(prompt) -> text``."""

    kind = BackendKind.FUNCTION

    def __init__(self, fn: Callable[[str], str]):
        self.fn = fn
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, req: GenerationRequest, key: str) -> str:
        with self._lock:
            self.calls += 1
        return self.fn(req.prompt)


class HttpBackend:
    """OpenAI-compatible HTTP client with retries and a concurrency gate."""

    kind = BackendKind.HTTP

    def __init__(
        self,
        base_url: str,
        api_key_env: str | None = "OPENAI_API_KEY",
        timeout: float = 120.0,
        retries: int = 3,
        backoff: float = 1.0,
        parallelism: int = 4,
        mode: str = "chat",
        transport: httpx.BaseTransport | None = None,
    ):
        if mode not in ("chat", "completions"):
            raise ValueError(f"unknown mode {mode!r}")
        if parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self.backoff = backoff
        self.mode = mode
        self._gate = threading.BoundedSemaphore(parallelism)
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(api_key_env) if api_key_env else None
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def close(self) -> None:
        self._client.close()

    def _payload(self, req: GenerationRequest) -> tuple[str, dict]:
        body: dict = {
            "model": req.model_id,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        }
        if req.stop:
            body["stop"] = list(req.stop)
        if self.mode == "chat":
            body["messages"] = [{"role": "user", "content": req.prompt}]
            return f"{self.base_url}/v1/chat/completions", body
        body["prompt"] = req.prompt
        return f"{self.base_url}/v1/completions", body

    def _extract(self, data) -> str:
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"] if self.mode == "chat" else choice["text"]
        except (KeyError, IndexError, TypeError):
            raise ResponseMalformed(f"response body lacks generated text: {str(data)[:200]}") from None
        if not isinstance(text, str):
            raise ResponseMalformed("generated text is not a string")
        return text

    def complete(self, req: GenerationRequest, key: str) -> str:
        url, body = self._payload(req)
        last_error: str = ""
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._gate:
                    resp = self._client.post(url, json=body)
            except httpx.TransportError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                logger.warning("request %s attempt %d failed: %s", key[:12], attempt + 1, last_error)
                continue
            if resp.status_code in _TRANSIENT_STATUS:
                last_error = f"HTTP {resp.status_code}"
                logger.warning("request %s attempt %d got %s", key[:12], attempt + 1, last_error)
                continue
            if resp.status_code >= 400:
                raise BackendUnreachable(f"{url} returned HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                data = resp.json()
            except ValueError:
                raise ResponseMalformed(f"non-JSON body from {url}") from None
            return self._extract(data)
        raise BackendUnreachable(f"{url} failed after {self.retries + 1} attempts ({last_error})")


# --- gateway ----------------------------------------------------------------


class Gateway:
    """Front door for generation: cache lookup, backend call, run logging."""

    def __init__(
        self,
        backend: Backend,
        cache: ResponseCache | None = None,
        run_log: str | Path | None = None,
    ):
        self.backend = backend
        self.cache = cache
        self.run_log = Path(run_log) if run_log else None
        self.backend_calls = 0
        self._lock = threading.Lock()

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        key = digest(req)
        start = time.perf_counter()
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return GenerationResponse(hit, self.backend.kind, True, _ms(start), key)
        text = self.backend.complete(req, key)
        with self._lock:
            self.backend_calls += 1
        if self.cache is not None:
            self.cache.put(key, text, req)
        if self.run_log is not None:
            self._log(key, req, text)
        return GenerationResponse(text, self.backend.kind, False, _ms(start), key)

    def _log(self, key: str, req: GenerationRequest, text: str) -> None:
        line = json.dumps({"digest": key, "stage": req.stage.value, "text": text}, ensure_ascii=False)
        with self._lock:
            self.run_log.parent.mkdir(parents=True, exist_ok=True)
            with self.run_log.open("a", encoding="utf-8", newline="\n") as fh:
                fh.write(line + "\n")


def generate(req: GenerationRequest, gateway: Gateway) -> GenerationResponse:
    return gateway.generate(req)


def _ms(start: float) -> int:
    return max(0, int(round((time.perf_counter() - start) * 1000)))
