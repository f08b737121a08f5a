"""LLM access: request hashing, backends and the replay cache."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import httpx

from .prompts import PromptKind, render

logger = logging.getLogger(__name__)

DEFAULT_TOKEN_ENV = "TOOLRANK_API_KEY"


class GatewayError(RuntimeError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class UncachedPrompt(GatewayError):
    pass


@dataclass(frozen=True)
class LlmRequest:
    kind: PromptKind
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 512


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def request_key(req: LlmRequest, model: str) -> str:
    payload = json.dumps([PromptKind(req.kind).value, req.prompt, float(req.temperature), model],
                         ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class MockOracle:
    """Deterministic scripted backend.

    Lookup order: ``script[prompt_hash(prompt)]``, then ``responder(request)``,
    then ``default``. With none of them matching the call fails.
    """

    model = "mock"

    def __init__(self, script: Mapping[str, str] | None = None,
                 responder: Callable[[LlmRequest], str] | None = None,
                 default: str | None = None):
        self.script = dict(script or {})
        self.responder = responder
        self.default = default
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, req: LlmRequest) -> str:
        with self._lock:
            self.calls += 1
        h = prompt_hash(req.prompt)
        if h in self.script:
            return self.script[h]
        if self.responder is not None:
            return self.responder(req)
        if self.default is not None:
            return self.default
        raise GatewayError(f"mock oracle has no script for prompt {h[:12]}")


class HttpChatBackend:
    """Chat-completion endpoint client.

    Sends ``{model, messages, temperature, max_tokens}`` and reads
    ``choices[0].message.content``. The bearer token comes from the
    environment variable named by ``token_env``.
    """

    def __init__(self, endpoint: str, model: str, token_env: str = DEFAULT_TOKEN_ENV,
                 retries: int = 3, backoff: float = 0.5, timeout: float = 60.0,
                 client: httpx.Client | None = None):
        self.endpoint = endpoint
        self.model = model
        self.token_env = token_env
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._client = client or httpx.Client(timeout=timeout)
        self.calls = 0
        self._lock = threading.Lock()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env, "").strip()
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, req: LlmRequest) -> str:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            with self._lock:
                self.calls += 1
            try:
                resp = self._client.post(self.endpoint, json=body, headers=self._headers())
            except httpx.HTTPError as exc:
                last = exc
                logger.warning("llm request failed (attempt %d/%d): %r", attempt + 1, self.retries + 1, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = GatewayError(f"HTTP {resp.status_code}", resp.status_code)
                continue
            if not 200 <= resp.status_code < 300:
                raise GatewayError(f"HTTP {resp.status_code}: {resp.text[:200]}", resp.status_code)
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise GatewayError(f"malformed completion response: {exc!r}") from exc
            return content if isinstance(content, str) else ""
        status = getattr(last, "status", None)
        raise GatewayError(f"request failed after {self.retries + 1} attempts: {last}", status)


class ReplayCache:
    """Append-only JSON-lines store of ``{key, kind, request, response}`` records.

    Later records win on duplicate keys when the file is loaded.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, str] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._entries[rec["key"]] = rec["response"]

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def get(self, key: str) -> str | None:
        return self._entries.get(key)

    def put(self, key: str, req: LlmRequest, response: str) -> None:
        rec = {"key": key, "kind": PromptKind(req.kind).value, "request": req.prompt, "response": response}
        line = json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n"
        with self._lock:
            self._entries[key] = response
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)


class Gateway:
    """Single entry point for prompts: render, look up the cache, call the backend."""

    def __init__(self, backend=None, cache: ReplayCache | None = None, replay_only: bool = False,
                 domain: str = "Groceries on Instacart", max_concurrency: int = 8,
                 temperature: float = 0.0, max_tokens: int = 512, model: str | None = None):
        if backend is None and not replay_only:
            raise ValueError("a backend is required unless replay_only is set")
        if replay_only and cache is None:
            raise ValueError("replay_only needs a cache")
        self.backend = backend
        self.cache = cache
        self.replay_only = replay_only
        self.domain = domain
        self.temperature = temperature
        self.max_tokens = max_tokens
        self._model = model
        self._slots = threading.BoundedSemaphore(max_concurrency)

    @property
    def model(self) -> str:
        """Model name folded into cache keys; replay-only runs must pass the recorded name."""
        return self._model or getattr(self.backend, "model", "replay")

    def complete(self, req: LlmRequest) -> str:
        key = request_key(req, self.model)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return hit
        if self.replay_only:
            raise UncachedPrompt(f"uncached prompt {key[:12]} ({PromptKind(req.kind).value}) in replay-only mode")
        with self._slots:
            text = self.backend.complete(req)
        if self.cache is not None:
            self.cache.put(key, req, text)
        return text

    def ask(self, kind: PromptKind, bindings: Mapping[str, object], **request_kw) -> str:
        full = {"domain": self.domain, **bindings}
        req = LlmRequest(
            kind,
            render(kind, full),
            temperature=request_kw.get("temperature", self.temperature),
            max_tokens=request_kw.get("max_tokens", self.max_tokens),
        )
        return self.complete(req)
