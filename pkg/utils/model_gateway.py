"""
Model Gateway Module
Uniform client for text-only and vision chat-completion endpoints with retries,
a content-addressed response cache, scripted test backends and a request log
"""

import base64
import hashlib
import io
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import requests

from utils.errors import AuthFailure, GatewayError, GatewayTimeout, MalformedResponse, UnknownScriptedRequest
from utils.trajectory_core import BlobStore, ScreenshotRef

# Pillow only sniffs attachment formats; without it every image is sent as PNG
try:
    from PIL import Image
    PIL_AVAILABLE = True
except ImportError:
    PIL_AVAILABLE = False

logger = logging.getLogger(__name__)


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    text: str
    image_refs: Tuple[ScreenshotRef, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "image_refs", tuple(self.image_refs))
        if not self.text and not self.image_refs:
            raise ValueError("a chat message needs text or at least one image")


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    max_tokens: int = 1024
    top_k: Optional[int] = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.top_k is not None and self.top_k <= 0:
            raise ValueError("top_k must be positive")
        object.__setattr__(self, "temperature", float(self.temperature))


# Evaluation runs greedy; data-collection actors sample widely
EVALUATION_PARAMS = GenerationParams(temperature=0.0)
COLLECTION_PARAMS = GenerationParams(temperature=1.5, top_k=100)


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    auth_token_env: Optional[str] = None
    timeout: float = 60.0
    max_retries: int = 3
    max_in_flight: int = 4
    name: Optional[str] = None

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_in_flight <= 0:
            raise ValueError("max_in_flight must be positive")

    @property
    def label(self) -> str:
        return self.name or self.model_name


@dataclass
class ScriptedBackend:
    """
    Deterministic test double: canned responses keyed by request digest

    Lookups are pure; the table is never mutated by the gateway.
    """

    table: Dict[str, str] = field(default_factory=dict)
    default_response: Optional[str] = None
    model_name: str = "scripted"

    @property
    def label(self) -> str:
        return self.model_name

    def respond(self, messages: Sequence[ChatMessage], params: GenerationParams) -> str:
        digest = request_digest(messages, params)
        if digest in self.table:
            return self.table[digest]
        if self.default_response is not None:
            return self.default_response
        raise UnknownScriptedRequest(digest)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ScriptedBackend":
        """Load a table written by `save` ({"table": {...}, "default_response": ...})"""
        with Path(path).open("r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(table=dict(doc.get("table", {})),
                   default_response=doc.get("default_response"),
                   model_name=doc.get("model_name", "scripted"))

    def save(self, path: Union[str, Path]):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = {"model_name": self.model_name, "default_response": self.default_response, "table": self.table}
        path.write_text(json.dumps(doc, sort_keys=True, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")


Backend = Union[EndpointConfig, ScriptedBackend]


def request_digest(messages: Sequence[ChatMessage], params: GenerationParams) -> str:
    """
    Stable digest of a request

    Covers message order, roles, texts, attached image hashes and generation
    parameters; canonical JSON keeps it identical across processes.
    """

    doc = {
        "messages": [
            {"role": m.role.value, "text": m.text, "images": [ref.sha256 for ref in m.image_refs]}
            for m in messages
        ],
        "params": {"temperature": params.temperature, "max_tokens": params.max_tokens, "top_k": params.top_k},
    }
    blob = json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ResponseCache:
    """Directory of `<key>.txt` files; reads run concurrently, writes are serialized"""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._write_lock = threading.Lock()

    @staticmethod
    def key(digest: str, model_name: str) -> str:
        return hashlib.sha256(f"{digest}:{model_name}".encode("utf-8")).hexdigest()

    def get(self, key: str) -> Optional[str]:
        path = self.root / f"{key}.txt"
        try:
            return path.read_bytes().decode("utf-8")
        except FileNotFoundError:
            return None

    def put(self, key: str, text: str):
        path = self.root / f"{key}.txt"
        with self._write_lock:
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(text.encode("utf-8"))
            os.replace(tmp, path)


class RequestLog:
    """Append-only request log, kept in memory and optionally mirrored to JSONL"""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path else None
        self.entries: List[Dict[str, Any]] = []
        self._lock = threading.Lock()
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, digest: str, model_name: str, latency_ms: float, outcome: str):
        entry = {"digest": digest, "model_name": model_name,
                 "latency_ms": round(latency_ms, 3), "outcome": outcome}
        with self._lock:
            self.entries.append(entry)
            if self.path:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def count(self, outcome: Optional[str] = None) -> int:
        with self._lock:
            if outcome is None:
                return len(self.entries)
            return sum(1 for e in self.entries if e["outcome"] == outcome)


class ModelGateway:
    """Routes chat requests to scripted or HTTP backends"""

    def __init__(self, cache_dir: Optional[Union[str, Path]] = None,
                 log_path: Optional[Union[str, Path]] = None,
                 blob_store: Optional[BlobStore] = None,
                 session: Optional[requests.Session] = None,
                 sleep: Callable[[float], None] = time.sleep,
                 backoff_base: float = 1.0):
        """
        Args:
            cache_dir: Response cache directory; None disables caching
            log_path: JSONL request log path; the in-memory log is always kept
            blob_store: Where screenshot bytes are read from for image attachments
            session: requests session for HTTP endpoints
            sleep: Sleep function used between retries
            backoff_base: First retry delay in seconds, doubled per attempt
        """
        self.cache = ResponseCache(cache_dir) if cache_dir else None
        self.log = RequestLog(log_path)
        self.blob_store = blob_store
        self.session = session or requests.Session()
        self.sleep = sleep
        self.backoff_base = backoff_base
        self._limits: Dict[str, threading.BoundedSemaphore] = {}
        self._key_locks: Dict[str, threading.Lock] = {}
        self._limits_lock = threading.Lock()

    @property
    def backend_calls(self) -> int:
        return self.log.count("ok")

    @property
    def cache_hits(self) -> int:
        return self.log.count("cache_hit")

    def complete(self, messages: Sequence[ChatMessage], params: GenerationParams, endpoint: Backend) -> str:
        """
        Run one chat completion

        Args:
            messages: Non-empty list of chat messages
            params: Generation parameters
            endpoint: EndpointConfig for HTTP models or a ScriptedBackend

        Returns:
            The model's text response
        """

        if not messages:
            raise ValueError("complete() needs at least one message")

        digest = request_digest(messages, params)
        model_name = endpoint.model_name
        started = time.perf_counter()

        cache_key = ResponseCache.key(digest, model_name) if self.cache else None
        if not cache_key:
            return self._dispatch(messages, params, endpoint, digest, started, None)

        cached = self._cache_hit(cache_key, digest, model_name, started)
        if cached is not None:
            return cached
        # one backend call per cache key; waiters read what the first caller stored
        with self._key_lock(cache_key):
            cached = self._cache_hit(cache_key, digest, model_name, started)
            if cached is not None:
                return cached
            return self._dispatch(messages, params, endpoint, digest, started, cache_key)

    def _cache_hit(self, cache_key: str, digest: str, model_name: str, started: float) -> Optional[str]:
        cached = self.cache.get(cache_key)
        if cached is not None:
            self.log.append(digest, model_name, (time.perf_counter() - started) * 1000, "cache_hit")
        return cached

    def _key_lock(self, cache_key: str) -> threading.Lock:
        with self._limits_lock:
            return self._key_locks.setdefault(cache_key, threading.Lock())

    def _dispatch(self, messages: Sequence[ChatMessage], params: GenerationParams, endpoint: Backend,
                  digest: str, started: float, cache_key: Optional[str]) -> str:
        model_name = endpoint.model_name
        try:
            if isinstance(endpoint, ScriptedBackend):
                text = endpoint.respond(messages, params)
            else:
                with self._limit(endpoint):
                    text = self._call_endpoint(messages, params, endpoint)
        except GatewayError as e:
            self.log.append(digest, model_name, (time.perf_counter() - started) * 1000,
                            f"error:{type(e).__name__}")
            raise

        if cache_key:
            self.cache.put(cache_key, text)
        self.log.append(digest, model_name, (time.perf_counter() - started) * 1000, "ok")
        return text

    def _limit(self, endpoint: EndpointConfig) -> threading.BoundedSemaphore:
        with self._limits_lock:
            if endpoint.label not in self._limits:
                self._limits[endpoint.label] = threading.BoundedSemaphore(endpoint.max_in_flight)
            return self._limits[endpoint.label]

    # ===== HTTP backend =====

    def _image_part(self, ref: ScreenshotRef) -> Dict[str, Any]:
        if self.blob_store is None:
            raise GatewayError("image attachments need a blob store")
        data = self.blob_store.get(ref)
        mime = "image/png"
        if PIL_AVAILABLE:
            try:
                fmt = Image.open(io.BytesIO(data)).format
                if fmt:
                    mime = Image.MIME.get(fmt, mime)
            except Exception:
                pass
        encoded = base64.b64encode(data).decode("ascii")
        return {"type": "image_url", "image_url": {"url": f"data:{mime};base64,{encoded}"}}

    def build_payload(self, messages: Sequence[ChatMessage], params: GenerationParams,
                      endpoint: EndpointConfig) -> Dict[str, Any]:
        """Role-tagged chat JSON with images as base64 data-URL parts"""

        wire_messages = []
        for m in messages:
            if m.image_refs:
                content = [self._image_part(ref) for ref in m.image_refs]
                if m.text:
                    content.append({"type": "text", "text": m.text})
            else:
                content = m.text
            wire_messages.append({"role": m.role.value, "content": content})

        payload = {
            "model": endpoint.model_name,
            "messages": wire_messages,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if params.top_k is not None:
            payload["top_k"] = params.top_k
        return payload

    def _headers(self, endpoint: EndpointConfig) -> Dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if endpoint.auth_token_env:
            token = os.environ.get(endpoint.auth_token_env)
            if not token:
                raise AuthFailure(f"environment variable {endpoint.auth_token_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _call_endpoint(self, messages: Sequence[ChatMessage], params: GenerationParams,
                       endpoint: EndpointConfig) -> str:
        headers = self._headers(endpoint)
        payload = self.build_payload(messages, params, endpoint)
        url = endpoint.base_url.rstrip("/") + "/chat/completions"

        last_error: Optional[GatewayError] = None
        for attempt in range(endpoint.max_retries + 1):
            if attempt > 0:
                delay = self.backoff_base * (2 ** (attempt - 1))
                logger.warning(f"⚠️ Retrying {endpoint.label} in {delay:.1f}s "
                               f"(attempt {attempt + 1}/{endpoint.max_retries + 1}): {last_error}")
                self.sleep(delay)

            try:
                response = self.session.post(url, json=payload, headers=headers, timeout=endpoint.timeout)
            except requests.Timeout:
                last_error = GatewayTimeout(f"{endpoint.label} timed out after {endpoint.timeout}s")
                continue
            except requests.ConnectionError as e:
                last_error = GatewayError(f"{endpoint.label} unreachable: {e}")
                continue

            if response.status_code in (401, 403):
                raise AuthFailure(f"{endpoint.label} rejected credentials (HTTP {response.status_code})")
            if response.status_code == 429 or response.status_code >= 500:
                last_error = GatewayError(f"{endpoint.label} returned HTTP {response.status_code}")
                continue
            if response.status_code >= 400:
                raise GatewayError(f"{endpoint.label} returned HTTP {response.status_code}: {response.text[:200]}")

            return self._extract_text(response, endpoint)

        logger.error(f"❌ {endpoint.label} failed after {endpoint.max_retries + 1} attempts")
        raise last_error

    @staticmethod
    def _extract_text(response: requests.Response, endpoint: EndpointConfig) -> str:
        try:
            body = response.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise MalformedResponse(f"{endpoint.label} sent an unexpected body: {e}")
        if not isinstance(text, str):
            raise MalformedResponse(f"{endpoint.label} sent non-text content")
        return text
