"""Model backends: remote chat endpoints, local logit sources, and
scripted fixtures for deterministic tests.

Two capabilities exist. Chat backends answer a message list with free
text (used by the drafting and verdict stages). Logit backends expose
raw next-token scores over a vocabulary (used by constrained decoding)
and are local only; nothing here ships logits over the public internet.
"""

from __future__ import annotations

import enum
import json
import os
import random
import threading
import time
import zlib
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import httpx
import numpy as np

from .errors import (
    BackendFailureError,
    BackendTimeoutError,
    ConfigError,
    ContextOverflowError,
    FixtureConflictError,
    IoFailureError,
)
from .vocabulary import Vocabulary


class BackendKind(str, enum.Enum):
    REMOTE_CHAT = "REMOTE_CHAT"
    LOCAL_LOGIT = "LOCAL_LOGIT"
    SCRIPTED = "SCRIPTED"


@dataclass(frozen=True)
class SamplingParams:
    """Decoding knobs shared by every backend call."""

    temperature: float = 0.4
    top_p: float = 0.9
    max_new_tokens: int = 512
    seed: Optional[int] = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")


@dataclass(frozen=True)
class ChatMessage:
    role: str  # "system" | "user" | "assistant"
    content: str


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    sampling: SamplingParams = SamplingParams()

    @classmethod
    def user(cls, content: str, sampling: SamplingParams = SamplingParams()) -> "ChatRequest":
        return cls(messages=(ChatMessage("user", content),), sampling=sampling)

    @property
    def text(self) -> str:
        """All message contents joined; used by scripted prompt matching."""
        return "\n".join(m.content for m in self.messages)


@dataclass(frozen=True)
class BackendDescriptor:
    kind: BackendKind
    name: str = ""
    supports_chat: bool = False
    supports_logits: bool = False
    max_context: Optional[int] = None


def complete_chat(backend, request: ChatRequest) -> str:
    """Route a chat request to a chat-capable backend."""
    if not backend.descriptor.supports_chat:
        raise BackendFailureError(
            f"backend {backend.descriptor.kind.value} has no chat capability"
        )
    return backend.complete(request)


def next_token_logits(
    backend,
    prompt_tokens: Sequence[int],
    state_tag: Optional[str] = None,
) -> np.ndarray:
    """Fetch next-token logits from a logit-capable backend.

    ``state_tag`` is a decoding hint (the automaton state's role) that
    scripted fixtures may key on; real backends ignore it.
    """
    if not backend.descriptor.supports_logits:
        raise BackendFailureError(
            f"backend {backend.descriptor.kind.value} has no logit capability"
        )
    limit = backend.descriptor.max_context
    if limit is not None and len(prompt_tokens) > limit:
        raise ContextOverflowError(
            f"prompt of {len(prompt_tokens)} tokens exceeds context limit {limit}"
        )
    return backend.next_token_logits(prompt_tokens, state_tag=state_tag)


# --- scripted fixtures ------------------------------------------------------


@dataclass(frozen=True)
class _ChatRule:
    patterns: tuple[str, ...]  # every pattern must occur in the prompt
    reply: str


class ScriptedBackend:
    """Deterministic fixture backend; a pure function of its spec table.

    Chat: the first rule whose patterns all occur in the prompt wins;
    otherwise ``default_reply``. Logits (requires a vocabulary): rules
    either favor tokens at states with a given tag or steer decoding
    along one target string by boosting every token that extends it.
    """

    def __init__(
        self,
        chat_rules: Sequence[_ChatRule] = (),
        logit_rules: Sequence[dict] = (),
        default_reply: str = "[]",
        vocab: Optional[Vocabulary] = None,
        name: str = "scripted",
        max_context: Optional[int] = None,
    ):
        self._chat_rules = tuple(chat_rules)
        self._logit_rules = tuple(logit_rules)
        self._default_reply = default_reply
        self._vocab = vocab
        self.descriptor = BackendDescriptor(
            kind=BackendKind.SCRIPTED,
            name=name,
            supports_chat=True,
            supports_logits=vocab is not None,
            max_context=max_context,
        )

    def complete(self, request: ChatRequest) -> str:
        prompt = request.text
        for rule in self._chat_rules:
            if all(p in prompt for p in rule.patterns):
                return rule.reply
        return self._default_reply

    def next_token_logits(
        self,
        prompt_tokens: Sequence[int],
        state_tag: Optional[str] = None,
    ) -> np.ndarray:
        assert self._vocab is not None
        logits = np.zeros(len(self._vocab), dtype=np.float64)
        text = self._vocab.decode(prompt_tokens)
        for rule in self._logit_rules:
            target = rule.get("target")
            if target is not None:
                remaining = self._target_remainder(text, target)
                if remaining:
                    for tok_id, tok_text in enumerate(self._vocab.tokens):
                        if remaining.startswith(tok_text):
                            # longer extensions win so decoding follows the
                            # canonical (longest-match) path
                            logits[tok_id] = 16.0 + 0.01 * len(tok_text)
                continue
            if state_tag is not None and rule.get("at_state") == state_tag:
                favored = rule.get("favor", ())
                for tok_id, tok_text in enumerate(self._vocab.tokens):
                    if any(tok_text in f for f in favored):
                        logits[tok_id] += 8.0
        return logits

    @staticmethod
    def _target_remainder(decoded: str, target: str) -> str:
        """Unemitted tail of ``target``, given everything decoded so far."""
        for k in range(len(target), 0, -1):
            if decoded.endswith(target[:k]):
                return target[k:]
        return target


def _normalize_patterns(match: Union[str, Sequence[str]]) -> tuple[str, ...]:
    if isinstance(match, str):
        return (match,)
    if isinstance(match, (list, tuple)) and match and all(isinstance(m, str) for m in match):
        return tuple(match)
    raise ConfigError(f"chat rule match must be a string or list of strings: {match!r}")


def make_scripted_backend(
    spec: Union[dict, str, os.PathLike],
    vocab: Optional[Vocabulary] = None,
) -> ScriptedBackend:
    """Build a ScriptedBackend from a fixture table or a path to one.

    Fixture schema::

        {"chat": [{"match": "substring" | [..], "reply": "..."}],
         "default_reply": "[]",
         "logits": [{"at_state": "EVENT_CHOICE", "favor": ["..."]} |
                    {"target": "..."}]}

    Raises FixtureConflictError when an earlier chat rule's pattern set is
    a subset of a later one's, which would make the later rule unreachable.
    """
    if isinstance(spec, (str, os.PathLike)):
        try:
            with open(spec, "r", encoding="utf-8") as fh:
                spec = json.load(fh)
        except OSError as exc:
            raise IoFailureError(f"cannot read fixture file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise IoFailureError(f"fixture file is not valid JSON: {exc}") from None
    if not isinstance(spec, dict):
        raise ConfigError("fixture spec must be a JSON object")

    chat_rules = []
    for entry in spec.get("chat", []):
        if not isinstance(entry, dict) or "reply" not in entry or "match" not in entry:
            raise ConfigError(f"chat rule needs match and reply: {entry!r}")
        chat_rules.append(
            _ChatRule(patterns=_normalize_patterns(entry["match"]), reply=str(entry["reply"]))
        )
    for i, earlier in enumerate(chat_rules):
        for later in chat_rules[i + 1 :]:
            if set(earlier.patterns) <= set(later.patterns):
                raise FixtureConflictError(
                    f"chat rule {earlier.patterns!r} shadows {later.patterns!r}"
                )

    logit_rules = []
    for entry in spec.get("logits", []):
        if not isinstance(entry, dict):
            raise ConfigError(f"logit rule must be an object: {entry!r}")
        if "target" in entry:
            if not isinstance(entry["target"], str):
                raise ConfigError("logit rule target must be a string")
        elif "at_state" in entry:
            favored = entry.get("favor", [])
            if not isinstance(favored, list) or not all(isinstance(f, str) for f in favored):
                raise ConfigError("logit rule favor must be a list of strings")
        else:
            raise ConfigError(f"logit rule needs target or at_state: {entry!r}")
        logit_rules.append(entry)

    default_reply = spec.get("default_reply", "[]")
    if not isinstance(default_reply, str):
        raise ConfigError("default_reply must be a string")

    return ScriptedBackend(
        chat_rules=chat_rules,
        logit_rules=logit_rules,
        default_reply=default_reply,
        vocab=vocab,
    )


class RandomLogitBackend:
    """Seeded pseudo-random logits; same (seed, prompt) always yields the
    same vector. Useful for fuzzing the constrained decoder."""

    def __init__(self, vocab_size: int, seed: int = 0, max_context: Optional[int] = None):
        self.vocab_size = vocab_size
        self.seed = seed
        self.descriptor = BackendDescriptor(
            kind=BackendKind.SCRIPTED,
            name=f"random-{seed}",
            supports_chat=False,
            supports_logits=True,
            max_context=max_context,
        )

    def next_token_logits(
        self,
        prompt_tokens: Sequence[int],
        state_tag: Optional[str] = None,
    ) -> np.ndarray:
        key = zlib.crc32(np.asarray(prompt_tokens, dtype=np.int64).tobytes())
        rng = np.random.default_rng([self.seed, key, len(prompt_tokens)])
        return rng.uniform(-6.0, 6.0, size=self.vocab_size)


class LocalLogitBackend:
    """Adapter around any in-process callable that scores next tokens."""

    def __init__(
        self,
        fn: Callable[[Sequence[int]], np.ndarray],
        vocab_size: int,
        name: str = "local",
        max_context: Optional[int] = None,
    ):
        self._fn = fn
        self.vocab_size = vocab_size
        self.descriptor = BackendDescriptor(
            kind=BackendKind.LOCAL_LOGIT,
            name=name,
            supports_chat=False,
            supports_logits=True,
            max_context=max_context,
        )

    def next_token_logits(
        self,
        prompt_tokens: Sequence[int],
        state_tag: Optional[str] = None,
    ) -> np.ndarray:
        return np.asarray(self._fn(prompt_tokens), dtype=np.float64)


# --- remote chat ------------------------------------------------------------

DEFAULT_AUTH_ENV = "DREAMGROUND_API_TOKEN"


class RemoteChatBackend:
    """Chat-completions client with bounded retry and exponential backoff.

    Transient failures (connection errors, timeouts, 429, 5xx) are retried
    up to ``max_attempts`` total tries with jittered exponential backoff;
    other HTTP errors fail immediately. The auth token, if any, comes from
    the environment variable named by ``auth_env``.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff_base: float = 1.0,
        auth_env: str = DEFAULT_AUTH_ENV,
        max_concurrency: int = 8,
        client: Optional[httpx.Client] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.auth_env = auth_env
        self._client = client if client is not None else httpx.Client(timeout=timeout)
        self._semaphore = threading.Semaphore(max_concurrency)
        self._lock = threading.Lock()
        self.stats = {"requests": 0, "retries": 0}
        self.descriptor = BackendDescriptor(
            kind=BackendKind.REMOTE_CHAT,
            name=model,
            supports_chat=True,
            supports_logits=False,
        )

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.auth_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, request: ChatRequest) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.sampling.temperature,
            "top_p": request.sampling.top_p,
            "max_tokens": request.sampling.max_new_tokens,
        }
        if request.sampling.seed is not None:
            payload["seed"] = request.sampling.seed

        url = f"{self.base_url}/chat/completions"
        backoff = self.backoff_base
        last_error = "no attempts made"
        timed_out = False
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(backoff + random.uniform(0, backoff / 2))
                backoff *= 2
                with self._lock:
                    self.stats["retries"] += 1
            with self._lock:
                self.stats["requests"] += 1
            try:
                with self._semaphore:
                    response = self._client.post(url, json=payload, headers=self._headers())
            except httpx.TimeoutException as exc:
                timed_out, last_error = True, f"timeout: {exc}"
                continue
            except httpx.HTTPError as exc:
                timed_out, last_error = False, f"transport error: {exc}"
                continue

            if response.status_code == 429 or response.status_code >= 500:
                timed_out, last_error = False, f"HTTP {response.status_code}"
                continue
            if response.status_code != 200:
                raise BackendFailureError(
                    f"chat endpoint returned HTTP {response.status_code}: "
                    f"{response.text[:200]}"
                )
            try:
                return response.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise BackendFailureError(
                    f"malformed chat completion body: {exc}"
                ) from None

        if timed_out:
            raise BackendTimeoutError(
                f"chat request timed out after {self.max_attempts} attempts"
            )
        raise BackendFailureError(
            f"chat request failed after {self.max_attempts} attempts ({last_error})"
        )
