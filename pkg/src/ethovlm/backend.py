"""Chat-completion client for a VLM serving endpoint.

Requests are content-addressed: the digest covers every part (image bytes
hashed), the decoding parameters and the model id, and doubles as the key of
the on-disk response cache. :class:`MockBackend` stands in for the endpoint in
tests and dry runs.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import random
import tempfile
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence, Union

import httpx

from .core import GOLD_CLASSES, BehaviorLabel, Decoding

log = logging.getLogger(__name__)

RETRY_DELAYS_S = (1.0, 2.0, 4.0)
DEFAULT_MAX_PAYLOAD_BYTES = 512 * 1024 * 1024
MALFORMED_REPLY = "sure! the mouse seems calm"


class BackendError(RuntimeError):
    pass


class TransportError(BackendError):
    def __init__(self, message: str, status: int | None = None, attempts: int = 1):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


class PayloadTooLarge(BackendError):
    pass


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    data: bytes = field(repr=False)
    mime: str = "image/jpeg"


@dataclass(frozen=True)
class VideoPart:
    """A clip, either a file/URL reference or an explicit frame sequence."""

    ref: str | None = None
    frames: tuple[bytes, ...] = field(default=(), repr=False)
    frame_mime: str = "image/jpeg"

    def __post_init__(self) -> None:
        if (self.ref is None) == (not self.frames):
            raise ValueError("VideoPart needs exactly one of ref or frames")


Part = Union[TextPart, ImagePart, VideoPart]


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _ref_identity(ref: str) -> str:
    path = Path(ref[7:] if ref.startswith("file://") else ref)
    if path.is_file():
        h = hashlib.sha256()
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
        return "sha256:" + h.hexdigest()
    return "ref:" + ref


def _part_identity(part: Part) -> dict:
    if isinstance(part, TextPart):
        return {"text": part.text}
    if isinstance(part, ImagePart):
        return {"image": _sha(part.data), "mime": part.mime}
    if part.ref is not None:
        return {"video": _ref_identity(part.ref)}
    return {"video_frames": [_sha(f) for f in part.frames], "mime": part.frame_mime}


@dataclass(frozen=True)
class ModelRequest:
    parts: tuple[Part, ...]
    decoding: Decoding
    expected_label_count: int
    model_id: str = ""
    # (session_id, second_index or None for a whole session). Routing hint for
    # mock backends; not part of the digest.
    target: tuple[str, int | None] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.expected_label_count < 1:
            raise ValueError("expected_label_count must be >= 1")
        if not any(isinstance(p, TextPart) for p in self.parts):
            raise ValueError("request needs at least one text part")
        if not any(isinstance(p, (ImagePart, VideoPart)) for p in self.parts):
            raise ValueError("request needs at least one media part")

    @property
    def max_output_tokens(self) -> int:
        return self.decoding.tokens_for(self.expected_label_count)

    @property
    def request_digest(self) -> str:
        cached = self.__dict__.get("_digest")
        if cached is None:
            identity = {
                "model_id": self.model_id,
                "temperature": self.decoding.temperature,
                "max_output_tokens": self.max_output_tokens,
                "parts": [_part_identity(p) for p in self.parts],
            }
            blob = json.dumps(identity, sort_keys=True, separators=(",", ":")).encode("utf-8")
            cached = _sha(blob)
            object.__setattr__(self, "_digest", cached)
        return cached

    def payload_size(self) -> int:
        """Approximate wire size in bytes (base64 expansion included)."""
        size = 0
        for p in self.parts:
            if isinstance(p, TextPart):
                size += len(p.text.encode("utf-8"))
            elif isinstance(p, ImagePart):
                size += 4 * ((len(p.data) + 2) // 3)
            elif p.ref is not None:
                size += len(p.ref)
            else:
                size += sum(4 * ((len(f) + 2) // 3) + 1 for f in p.frames)
        return size


@dataclass(frozen=True)
class ModelResponse:
    raw_text: str
    latency_ms: int
    backend_id: str
    from_cache: bool = False
    attempts: int = 1

    @property
    def retries(self) -> int:
        return max(self.attempts - 1, 0)


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _wire_part(part: Part) -> dict:
    if isinstance(part, TextPart):
        return {"type": "text", "text": part.text}
    if isinstance(part, ImagePart):
        return {"type": "image_url", "image_url": {"url": f"data:{part.mime};base64,{_b64(part.data)}"}}
    if part.ref is not None:
        ref = part.ref
        if "://" not in ref:
            ref = Path(ref).resolve().as_uri()
        return {"type": "video_url", "video_url": {"url": ref}}
    # Frame-sequence video: comma-separated base64 frames under a video/<fmt> data URL.
    fmt = part.frame_mime.split("/")[-1]
    joined = ",".join(_b64(f) for f in part.frames)
    return {"type": "video_url", "video_url": {"url": f"data:video/{fmt};base64,{joined}"}}


def to_chat_payload(request: ModelRequest) -> dict:
    """OpenAI-style chat-completion body: one user message with ordered content parts."""
    return {
        "model": request.model_id,
        "messages": [{"role": "user", "content": [_wire_part(p) for p in request.parts]}],
        "temperature": request.decoding.temperature,
        "max_tokens": request.max_output_tokens,
    }


class Backend(Protocol):
    backend_id: str
    model_id: str

    def complete(self, request: ModelRequest) -> tuple[str, int]:
        """Return (raw_text, attempts)."""
        ...


class HttpBackend:
    def __init__(
        self,
        endpoint: str,
        model_id: str,
        api_key: str | None = None,
        timeout_s: float = 300.0,
        retry_delays: Sequence[float] = RETRY_DELAYS_S,
        sleep: Callable[[float], None] | None = None,
        transport: httpx.BaseTransport | None = None,
    ):
        if not endpoint:
            raise ValueError("no VLM endpoint configured (set VLM_ENDPOINT or --endpoint)")
        url = endpoint.rstrip("/")
        if not url.endswith("/chat/completions"):
            url += "/chat/completions"
        self.url = url
        self.model_id = model_id
        self.backend_id = f"http:{model_id}"
        self.retry_delays = tuple(retry_delays)
        self._sleep = sleep or (lambda s: time.sleep(s))
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout_s, headers=headers, transport=transport)

    @classmethod
    def from_env(cls, endpoint: str | None = None, model_id: str | None = None, **kwargs) -> "HttpBackend":
        return cls(
            endpoint or os.environ.get("VLM_ENDPOINT", ""),
            model_id or os.environ.get("VLM_MODEL_ID", "Qwen/Qwen2.5-VL-7B-Instruct"),
            api_key=os.environ.get("VLM_API_KEY") or None,
            **kwargs,
        )

    def complete(self, request: ModelRequest) -> tuple[str, int]:
        body = to_chat_payload(request)
        attempts = 0
        delays = list(self.retry_delays)
        while True:
            attempts += 1
            try:
                resp = self._client.post(self.url, json=body)
            except httpx.HTTPError as exc:
                status, reason, retryable = None, f"{type(exc).__name__}: {exc}", True
            else:
                if resp.status_code == 200:
                    return _extract_text(resp), attempts
                status, reason = resp.status_code, resp.text[:200]
                retryable = status == 429 or status >= 500
            if not retryable or not delays:
                raise TransportError(
                    f"{self.url}: status={status} after {attempts} attempt(s): {reason}",
                    status=status, attempts=attempts,
                )
            delay = delays.pop(0)
            log.warning("request failed (status=%s), retrying in %.0f s", status, delay)
            self._sleep(delay)


def _extract_text(resp: httpx.Response) -> str:
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"malformed completion body: {exc}", status=resp.status_code) from None
    if content is None:
        return ""
    if isinstance(content, list):
        return "".join(c.get("text", "") for c in content if isinstance(c, dict))
    return str(content)


class ResponseCache:
    """On-disk cache at ``<dir>/<first 2 hex>/<digest>.json``. Never expires."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self._lock = threading.Lock()

    def path_for(self, digest: str) -> Path:
        return self.directory / digest[:2] / f"{digest}.json"

    def get(self, digest: str) -> dict | None:
        path = self.path_for(digest)
        try:
            entry = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except (OSError, json.JSONDecodeError):
            log.warning("ignoring unreadable cache entry %s", path)
            return None
        if entry.get("request_digest") != digest or not isinstance(entry.get("raw_text"), str):
            return None
        return entry

    def put(self, digest: str, raw_text: str, backend_id: str) -> None:
        path = self.path_for(digest)
        entry = {
            "request_digest": digest,
            "raw_text": raw_text,
            "backend_id": backend_id,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(entry, fh)
            os.replace(tmp, path)


class VlmClient:
    """Cache lookup, payload limit and in-flight bound in front of a backend."""

    def __init__(
        self,
        backend: Backend,
        cache: ResponseCache | None = None,
        concurrency_limit: int = 4,
        max_payload_bytes: int = DEFAULT_MAX_PAYLOAD_BYTES,
    ):
        if concurrency_limit <= 0:
            raise ValueError("concurrency_limit must be positive")
        self.backend = backend
        self.cache = cache
        self.max_payload_bytes = max_payload_bytes
        self._slots = threading.BoundedSemaphore(concurrency_limit)
        self._stats_lock = threading.Lock()
        self.network_requests = 0
        self.cache_hits = 0

    @property
    def model_id(self) -> str:
        return self.backend.model_id

    def send(self, request: ModelRequest) -> ModelResponse:
        digest = request.request_digest
        if self.cache is not None:
            entry = self.cache.get(digest)
            if entry is not None:
                with self._stats_lock:
                    self.cache_hits += 1
                return ModelResponse(entry["raw_text"], 0, entry.get("backend_id", ""), from_cache=True, attempts=0)
        size = request.payload_size()
        if size > self.max_payload_bytes:
            raise PayloadTooLarge(f"payload {size} bytes exceeds limit {self.max_payload_bytes}")
        with self._slots:
            with self._stats_lock:
                self.network_requests += 1
            start = time.monotonic()
            raw_text, attempts = self.backend.complete(request)
            latency = int((time.monotonic() - start) * 1000)
        if self.cache is not None:
            self.cache.put(digest, raw_text, self.backend.backend_id)
        return ModelResponse(raw_text, latency, self.backend.backend_id, attempts=attempts)


# --- mock backend -----------------------------------------------------------


@dataclass(frozen=True)
class MockScript:
    """Scripted replies keyed on the request's (session_id, second_index) target.

    ``echo`` returns gold; ``noisy`` swaps each label for another class with
    probability ``p``; ``malform`` replaces the whole reply with prose with
    probability ``p``. Randomness is derived from (seed, request digest,
    position), so replies do not depend on call order.
    """

    gold: Mapping[str, Sequence[BehaviorLabel]] = field(repr=False)
    mode: str = "echo"
    p: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("echo", "noisy", "malform"):
            raise ValueError(f"unknown mock mode {self.mode!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"mock probability must be in [0, 1], got {self.p}")

    @classmethod
    def parse(cls, spec: str, gold: Mapping[str, Sequence[BehaviorLabel]]) -> "MockScript":
        """Parse ``echo``, ``noisy:<p>:<seed>`` or ``malform:<p>:<seed>``."""
        fields_ = spec.split(":")
        if fields_ == ["echo"]:
            return cls(gold)
        if len(fields_) == 3 and fields_[0] in ("noisy", "malform"):
            try:
                return cls(gold, fields_[0], float(fields_[1]), int(fields_[2]))
            except ValueError as exc:
                raise ValueError(f"bad mock spec {spec!r}: {exc}") from None
        raise ValueError(f"bad mock spec {spec!r}; expected echo, noisy:<p>:<seed> or malform:<p>:<seed>")

    @property
    def name(self) -> str:
        if self.mode == "echo":
            return "mock:echo"
        return f"mock:{self.mode}:{self.p:g}:{self.seed}"


def format_label_vector(labels: Sequence[BehaviorLabel]) -> str:
    return "[" + ", ".join(label.value for label in labels) + "]"


def mock_respond(request: ModelRequest, script: MockScript) -> ModelResponse:
    if request.target is None:
        return ModelResponse("", 0, script.name)
    session, second = request.target
    gold = list(script.gold.get(session, ()))
    if second is not None:
        wanted = gold[second:second + 1]
    else:
        wanted = gold[: request.expected_label_count]
    digest = request.request_digest
    if script.mode == "malform" and random.Random(f"{script.seed}:{digest}").random() < script.p:
        return ModelResponse(MALFORMED_REPLY, 0, script.name)
    if script.mode == "noisy":
        noisy = []
        for i, label in enumerate(wanted):
            rng = random.Random(f"{script.seed}:{digest}:{i}")
            if rng.random() < script.p:
                label = rng.choice([c for c in GOLD_CLASSES if c is not label])
            noisy.append(label)
        wanted = noisy
    return ModelResponse(format_label_vector(wanted), 0, script.name)


class MockBackend:
    """In-process backend driven by a :class:`MockScript`.

    Counts calls and the peak number of concurrent calls. ``fail_after``
    makes every call after the first N raise :class:`TransportError`,
    which simulates an endpoint going away mid-run.
    """

    def __init__(self, script: MockScript, delay_s: float = 0.0, fail_after: int | None = None):
        self.script = script
        self.model_id = script.name
        self.backend_id = script.name
        self.delay_s = delay_s
        self.fail_after = fail_after
        self.calls = 0
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()

    def complete(self, request: ModelRequest) -> tuple[str, int]:
        with self._lock:
            self.calls += 1
            if self.fail_after is not None and self.calls > self.fail_after:
                raise TransportError("mock endpoint unavailable", status=503)
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
        try:
            if self.delay_s:
                time.sleep(self.delay_s)
            return mock_respond(request, self.script).raw_text, 1
        finally:
            with self._lock:
                self.in_flight -= 1
