"""Model access layer: one Gateway in front of interchangeable backends.

The gateway owns everything the pipeline should not care about: a
content-addressed disk cache, coalescing of identical concurrent requests,
an in-flight cap, and retry with backoff on transient transport failures.

Two backends ship here.  HttpBackend talks to an OpenAI-style server (chat
completions for generation, echo+logprobs completions for teacher-forced
scoring).  MockBackend replays a JSON script of regex-matched canned
responses, which is what makes the whole pipeline runnable offline and
deterministically.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol

import numpy as np

from .core import PipelineError


class GatewayError(PipelineError):
    """Backend failure or malformed backend response."""


class TransientBackendError(GatewayError):
    """Transport-level failure worth retrying."""


class ScriptMatchError(GatewayError):
    """No mock script entry matched the request."""


@dataclass(frozen=True)
class PromptRequest:
    """A chat request: ordered (role, text) messages plus decoding knobs."""

    messages: tuple[tuple[str, str], ...]
    model_name: str
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        if not self.messages:
            raise ValueError("request needs at least one message")
        for role, text in self.messages:
            if role not in ("system", "user", "assistant"):
                raise ValueError(f"unknown message role {role!r}")
            if not text:
                raise ValueError("empty message text")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        object.__setattr__(self, "messages", tuple(tuple(m) for m in self.messages))


@dataclass(frozen=True)
class ScoredContinuation:
    """Teacher-forced token logprobs for a continuation of some context."""

    tokens: tuple[str, ...]
    logprobs: tuple[float, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.logprobs):
            raise ValueError("tokens and logprobs must have equal length")
        if not self.tokens:
            raise ValueError("continuation must contain at least one token")
        for lp in self.logprobs:
            if lp > 0.0 or math.isnan(lp):
                raise ValueError(f"logprob {lp} out of range (must be <= 0)")
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "logprobs", tuple(float(lp) for lp in self.logprobs))


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"
    model: str = "mock-model"
    endpoint: str = ""
    api_key_env: str = ""
    script_path: str = ""
    cache_dir: str = ""
    timeout: float = 60.0
    max_retries: int = 2
    retry_backoff: float = 0.25
    max_in_flight: int = 4

    def __post_init__(self):
        if self.kind not in ("mock", "http"):
            raise ValueError(f"backend kind must be mock or http, got {self.kind!r}")
        if self.kind == "mock" and not self.script_path:
            raise ValueError("mock backend requires script_path")
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http backend requires endpoint")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


class Backend(Protocol):
    def complete(self, request: PromptRequest, stage: str) -> str: ...

    def score(
        self, context: str, continuation: str, model: str, stage: str
    ) -> ScoredContinuation: ...


# ---------------------------------------------------------------------------
# Mock backend
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _ScriptEntry:
    kind: str
    stage: str
    pattern: re.Pattern
    response: str = ""
    confidence: float = 0.0
    logprobs: tuple[float, ...] | None = None
    score_value: float = 0.0


def _load_script(path: Path) -> list[_ScriptEntry]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise GatewayError(f"{path}: script must be a JSON list")
    entries = []
    for i, e in enumerate(raw):
        kind = e.get("kind", "")
        if kind not in ("chat", "score", "entail"):
            raise GatewayError(f"{path}[{i}]: unknown kind {kind!r}")
        pattern = re.compile(e.get("match", ""), re.DOTALL)
        if kind == "chat":
            if "response" not in e:
                raise GatewayError(f"{path}[{i}]: chat entry needs a response")
            entries.append(
                _ScriptEntry(kind, e.get("stage", ""), pattern, response=e["response"])
            )
        elif kind == "score":
            lps = e.get("logprobs")
            conf = e.get("confidence")
            if (lps is None) == (conf is None):
                raise GatewayError(
                    f"{path}[{i}]: score entry needs confidence or logprobs, not both"
                )
            if conf is not None and not 0.0 < conf <= 1.0:
                raise GatewayError(f"{path}[{i}]: confidence must be in (0, 1]")
            entries.append(
                _ScriptEntry(
                    kind,
                    e.get("stage", ""),
                    pattern,
                    confidence=conf if conf is not None else 0.0,
                    logprobs=tuple(lps) if lps is not None else None,
                )
            )
        else:
            if "score" not in e:
                raise GatewayError(f"{path}[{i}]: entail entry needs a score")
            entries.append(
                _ScriptEntry(kind, e.get("stage", ""), pattern, score_value=e["score"])
            )
    return entries


def _substitute(template: str, m: re.Match, text: str) -> str:
    out = template
    if "{digest}" in out:
        out = out.replace(
            "{digest}", hashlib.sha256(text.encode("utf-8")).hexdigest()[:8]
        )
    for i, group in enumerate(m.groups(), start=1):
        out = out.replace("{m%d}" % i, group or "")
    return out


class MockBackend:
    """Replays canned responses from a script; first matching entry wins.

    Entries match on (kind, stage, regex over the request text).  An entry
    with an empty stage applies to every stage.  Chat responses may use
    {m1}..{mN} for regex groups and {digest} for a short hash of the matched
    text.  Score entries give either a single confidence c (every token gets
    logprob ln(c)) or an explicit per-token logprob list.
    """

    def __init__(self, script_path: str | Path):
        self._entries = _load_script(Path(script_path))

    def _find(self, kind: str, stage: str, text: str) -> tuple[_ScriptEntry, re.Match]:
        for entry in self._entries:
            if entry.kind != kind:
                continue
            if entry.stage and entry.stage != stage:
                continue
            m = entry.pattern.search(text)
            if m:
                return entry, m
        raise ScriptMatchError(
            f"no script entry for kind={kind} stage={stage!r} text={text[:200]!r}"
        )

    def complete(self, request: PromptRequest, stage: str) -> str:
        text = "\n".join(f"{role}: {body}" for role, body in request.messages)
        entry, m = self._find("chat", stage, text)
        return _substitute(entry.response, m, text)

    def score(
        self, context: str, continuation: str, model: str, stage: str
    ) -> ScoredContinuation:
        text = context + "\n<CONT>\n" + continuation
        entry, _ = self._find("score", stage, text)
        tokens = tuple(continuation.split()) or (continuation,)
        if entry.logprobs is not None:
            if len(entry.logprobs) != len(tokens):
                raise GatewayError(
                    f"script logprobs length {len(entry.logprobs)} != "
                    f"token count {len(tokens)}"
                )
            return ScoredContinuation(tokens, entry.logprobs)
        lp = math.log(entry.confidence)
        return ScoredContinuation(tokens, (lp,) * len(tokens))

    def entail(self, premise: str, hypothesis: str) -> float:
        text = premise + "|||" + hypothesis
        entry, _ = self._find("entail", "", text)
        return float(entry.score_value)


# ---------------------------------------------------------------------------
# HTTP backend
# ---------------------------------------------------------------------------


class HttpBackend:
    """OpenAI-style HTTP server: /chat/completions and echo-mode /completions."""

    def __init__(self, config: BackendConfig):
        import os

        import requests

        self._config = config
        self._session = requests.Session()
        key = os.environ.get(config.api_key_env, "") if config.api_key_env else ""
        if key:
            self._session.headers["Authorization"] = f"Bearer {key}"

    def _post(self, path: str, payload: dict) -> dict:
        import requests

        url = self._config.endpoint.rstrip("/") + path
        try:
            resp = self._session.post(url, json=payload, timeout=self._config.timeout)
        except requests.RequestException as exc:
            raise TransientBackendError(f"POST {url}: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"POST {url}: HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise GatewayError(f"POST {url}: HTTP {resp.status_code}: {resp.text[:500]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise GatewayError(f"POST {url}: non-JSON response") from exc

    def complete(self, request: PromptRequest, stage: str) -> str:
        payload = {
            "model": request.model_name,
            "messages": [{"role": r, "content": t} for r, t in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        data = self._post("/chat/completions", payload)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed chat response: {data!r}") from exc

    def score(
        self, context: str, continuation: str, model: str, stage: str
    ) -> ScoredContinuation:
        payload = {
            "model": model,
            "prompt": context + continuation,
            "max_tokens": 0,
            "echo": True,
            "logprobs": 0,
            "temperature": 0,
        }
        data = self._post("/completions", payload)
        try:
            lp = data["choices"][0]["logprobs"]
            tokens = lp["tokens"]
            token_logprobs = lp["token_logprobs"]
            offsets = lp["text_offset"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed completion response: {data!r}") from exc
        cut = len(context)
        picked_tokens: list[str] = []
        picked_lps: list[float] = []
        for tok, tlp, off in zip(tokens, token_logprobs, offsets):
            if off >= cut:
                if tlp is None:
                    raise GatewayError("continuation token has no logprob")
                picked_tokens.append(tok)
                picked_lps.append(min(float(tlp), 0.0))
        if not picked_tokens:
            raise GatewayError("no tokens aligned to the continuation span")
        return ScoredContinuation(tuple(picked_tokens), tuple(picked_lps))


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------


class Gateway:
    """Caching, coalescing, rate-capped front door to a backend."""

    def __init__(self, backend: Backend, config: BackendConfig):
        self._backend = backend
        self._config = config
        self._cache_dir = Path(config.cache_dir) if config.cache_dir else None
        self._semaphore = threading.Semaphore(config.max_in_flight)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()
        self.cache_hits = 0
        self.backend_calls = 0

    @classmethod
    def from_config(cls, config: BackendConfig) -> "Gateway":
        if config.kind == "mock":
            backend: Backend = MockBackend(config.script_path)
        else:
            backend = HttpBackend(config)
        return cls(backend, config)

    @property
    def model(self) -> str:
        return self._config.model

    # -- cache plumbing ------------------------------------------------

    def _key(self, payload: dict) -> str:
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def _cache_path(self, key: str) -> Path | None:
        if self._cache_dir is None:
            return None
        return self._cache_dir / key[:2] / (key + ".json")

    def _cache_read(self, key: str) -> dict | None:
        path = self._cache_path(key)
        if path is None or not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def _cache_write(self, key: str, value: dict) -> None:
        path = self._cache_path(key)
        if path is None or path.exists():
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(value, ensure_ascii=False), encoding="utf-8")
        tmp.replace(path)

    def _key_lock(self, key: str) -> threading.Lock:
        with self._guard:
            lock = self._locks.get(key)
            if lock is None:
                lock = threading.Lock()
                self._locks[key] = lock
            return lock

    def _call(self, fn, *args):
        last: Exception | None = None
        for attempt in range(self._config.max_retries + 1):
            try:
                with self._semaphore:
                    with self._guard:
                        self.backend_calls += 1
                    return fn(*args)
            except TransientBackendError as exc:
                last = exc
                if attempt < self._config.max_retries:
                    time.sleep(self._config.retry_backoff * (2**attempt))
        assert last is not None
        raise last

    # -- public API ----------------------------------------------------

    def complete(self, request: PromptRequest, stage: str = "") -> str:
        payload = {
            "kind": "chat",
            "model": request.model_name,
            "messages": [list(m) for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        key = self._key(payload)
        with self._key_lock(key):
            cached = self._cache_read(key)
            if cached is not None:
                with self._guard:
                    self.cache_hits += 1
                return cached["response"]
            response = self._call(self._backend.complete, request, stage)
            self._cache_write(key, {"kind": "chat", "response": response})
            return response

    def score_continuation(
        self, context: str, continuation: str, stage: str = ""
    ) -> ScoredContinuation:
        if not continuation:
            raise ValueError("continuation must be nonempty")
        payload = {
            "kind": "score",
            "model": self._config.model,
            "context": context,
            "continuation": continuation,
        }
        key = self._key(payload)
        with self._key_lock(key):
            cached = self._cache_read(key)
            if cached is not None:
                with self._guard:
                    self.cache_hits += 1
                return ScoredContinuation(
                    tuple(cached["tokens"]), tuple(cached["logprobs"])
                )
            scored = self._call(
                self._backend.score, context, continuation, self._config.model, stage
            )
            self._cache_write(
                key,
                {
                    "kind": "score",
                    "tokens": list(scored.tokens),
                    "logprobs": list(scored.logprobs),
                },
            )
            return scored


# ---------------------------------------------------------------------------
# Embedding and entailment clients
# ---------------------------------------------------------------------------


class EmbeddingClient(Protocol):
    def embed(self, texts: list[str]) -> np.ndarray: ...


class MockEmbeddingClient:
    """Deterministic unit vectors seeded from each text's hash."""

    def __init__(self, dim: int = 16):
        if dim < 2:
            raise ValueError("embedding dim must be >= 2")
        self.dim = dim

    def embed(self, texts: list[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            seed = int.from_bytes(
                hashlib.sha256(text.encode("utf-8")).digest()[:8], "big"
            )
            vec = np.random.default_rng(seed).standard_normal(self.dim)
            norm = float(np.linalg.norm(vec))
            if norm == 0.0:  # pragma: no cover - measure-zero with gaussian draws
                vec[0] = 1.0
                norm = 1.0
            out[i] = vec / norm
        return out


class HttpEmbeddingClient:
    def __init__(self, config: BackendConfig):
        self._backend = HttpBackend(config)
        self._model = config.model

    def embed(self, texts: list[str]) -> np.ndarray:
        data = self._backend._post(
            "/embeddings", {"model": self._model, "input": texts}
        )
        try:
            rows = [item["embedding"] for item in data["data"]]
        except (KeyError, TypeError) as exc:
            raise GatewayError(f"malformed embeddings response: {data!r}") from exc
        arr = np.asarray(rows, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != len(texts):
            raise GatewayError("embeddings response shape mismatch")
        norms = np.linalg.norm(arr, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return arr / norms


class EntailmentScorer(Protocol):
    def score(self, premise: str, hypothesis: str) -> float: ...


class MockEntailmentScorer:
    """Script-driven entailment probabilities (entries with kind "entail")."""

    def __init__(self, script_path: str | Path):
        self._backend = MockBackend(script_path)

    def score(self, premise: str, hypothesis: str) -> float:
        value = self._backend.entail(premise, hypothesis)
        if not 0.0 <= value <= 1.0:
            raise GatewayError(f"entailment score {value} out of [0, 1]")
        return value


class HttpEntailmentScorer:
    def __init__(self, config: BackendConfig):
        self._backend = HttpBackend(config)

    def score(self, premise: str, hypothesis: str) -> float:
        data = self._backend._post(
            "/entailment", {"premise": premise, "hypothesis": hypothesis}
        )
        try:
            value = float(data["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise GatewayError(f"malformed entailment response: {data!r}") from exc
        if not 0.0 <= value <= 1.0:
            raise GatewayError(f"entailment score {value} out of [0, 1]")
        return value
