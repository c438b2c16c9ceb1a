"""Chat and embedding providers, scripted mocks, and call budgets.

Two provider families exist behind small protocols: live HTTP clients for an
OpenAI-style endpoint, and offline deterministic mocks used by the test suite
and the reproducible pipeline runs.  Mock chat providers replay a scenario
file record by record in call order; mock embedding providers derive vectors
from the input text alone.  Both are safe to share across worker threads.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np


class ProviderError(Exception):
    """Base class for provider failures."""


class TransportFailure(ProviderError):
    """Network-level failure after exhausting the retry policy."""


class ProtocolViolation(ProviderError):
    """The remote endpoint answered with an unusable payload."""


class BudgetExceeded(ProviderError):
    """A call was attempted past the configured call budget."""


class MockExhausted(ProviderError):
    """A scripted provider or executor ran out of replay records."""


class EmptyText(ValueError):
    """Embedding input was empty or whitespace-only."""


class DegenerateVector(ValueError):
    """A vector with (near-)zero norm cannot be normalized."""


# Retry policy for live transports: transient transport errors only,
# never protocol violations.
RETRY_BACKOFF_S = (1.0, 2.0, 4.0)


@dataclass(frozen=True)
class ToolSchema:
    """Declaration of a single tool the model may call.

    The agent loop only ever exposes one tool (``run_code``) with a single
    string argument, so this stays deliberately minimal.
    """

    name: str
    description: str
    argument: str


RUN_CODE_TOOL = ToolSchema(
    name="run_code",
    description=(
        "Execute a complete, self-contained Python script in a sandbox and "
        "return its stdout, stderr and exit status. The script must print "
        "'RESULT:<number>' on success."
    ),
    argument="code",
)


@dataclass(frozen=True)
class ToolCall:
    """A tool invocation emitted by the model: name plus raw argument text."""

    name: str
    argument_text: str

    def decode_code(self) -> str:
        """Extract the script body from the argument payload.

        Arguments are usually a JSON object ``{"code": "..."}``; raw
        non-JSON text is accepted as the script itself.
        """
        try:
            payload = json.loads(self.argument_text)
        except (json.JSONDecodeError, ValueError):
            return self.argument_text
        if isinstance(payload, dict) and isinstance(payload.get("code"), str):
            return payload["code"]
        if isinstance(payload, str):
            return payload
        return self.argument_text


@dataclass(frozen=True)
class ChatRequest:
    """One chat completion request.

    ``system_text`` may be empty for single-blob prompts.  Multi-turn
    conversations are folded into ``user_text`` by the caller; the provider
    interface itself is stateless.
    """

    system_text: str
    user_text: str
    temperature: float = 0.0
    max_output_length: int = 4096
    tool_schemas: tuple[ToolSchema, ...] = ()

    def __post_init__(self) -> None:
        if not self.user_text:
            raise ValueError("user_text must be non-empty")
        if self.max_output_length <= 0:
            raise ValueError("max_output_length must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class ChatResponse:
    """Model output: free text plus at most one tool call."""

    text: str
    tool_call: ToolCall | None = None
    finish_reason: str = "stop"


@dataclass(frozen=True)
class EmbeddingVector:
    """A fixed-dimension float vector, unit-normalized unless stated."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) == 0:
            raise ValueError("embedding must have at least one dimension")

    @property
    def dimension(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    @staticmethod
    def from_array(arr: Sequence[float] | np.ndarray, normalize: bool = True) -> "EmbeddingVector":
        vec = np.asarray(arr, dtype=np.float64)
        if vec.ndim != 1 or vec.size == 0:
            raise ValueError("embedding source must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(vec)):
            raise ValueError("embedding contains non-finite values")
        if normalize:
            norm = float(np.linalg.norm(vec))
            if norm < 1e-12:
                raise DegenerateVector("cannot normalize a zero vector")
            vec = vec / norm
        return EmbeddingVector(tuple(float(x) for x in vec))


class ChatProvider(Protocol):
    def chat_complete(self, request: ChatRequest) -> ChatResponse: ...


class EmbeddingProvider(Protocol):
    def embed_text(self, text: str) -> EmbeddingVector: ...


class CallBudget:
    """Thread-safe cap on the number of provider calls.

    ``limit=None`` disables the cap.  ``consume`` raises BudgetExceeded when
    the counter would pass the limit, leaving the counter unchanged.
    """

    def __init__(self, limit: int | None):
        if limit is not None and limit < 0:
            raise ValueError("budget limit must be >= 0 or None")
        self.limit = limit
        self.used = 0
        self._lock = threading.Lock()

    def consume(self, count: int = 1) -> None:
        with self._lock:
            if self.limit is not None and self.used + count > self.limit:
                raise BudgetExceeded(
                    f"call budget of {self.limit} exceeded (used {self.used}, requested {count})"
                )
            self.used += count


def _load_scenario_records(path: str | os.PathLike[str]) -> list[dict]:
    """Read a scenario file: a JSON list, or JSONL with one record per line."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read()
    stripped = raw.lstrip()
    if not stripped:
        return []
    if stripped.startswith("["):
        data = json.loads(raw)
        if not isinstance(data, list):
            raise ValueError(f"scenario file {path} must hold a list of records")
        records = data
    else:
        records = [json.loads(line) for line in raw.splitlines() if line.strip()]
    for rec in records:
        if not isinstance(rec, dict):
            raise ValueError(f"scenario file {path} holds a non-object record")
    return records


def _record_to_response(rec: dict) -> ChatResponse:
    text = rec.get("text", "")
    if not isinstance(text, str):
        raise ValueError("scenario record 'text' must be a string")
    tool_call = None
    raw_call = rec.get("tool_call")
    if raw_call is not None:
        if not isinstance(raw_call, dict) or "name" not in raw_call:
            raise ValueError("scenario record 'tool_call' must be an object with 'name'")
        if "arguments" in raw_call:
            argument_text = raw_call["arguments"]
            if not isinstance(argument_text, str):
                argument_text = json.dumps(argument_text)
        elif "code" in raw_call:
            argument_text = json.dumps({"code": raw_call["code"]})
        else:
            argument_text = "{}"
        tool_call = ToolCall(name=str(raw_call["name"]), argument_text=argument_text)
    finish = rec.get("finish_reason", "tool_call" if tool_call else "stop")
    return ChatResponse(text=text, tool_call=tool_call, finish_reason=str(finish))


class ScriptedChatProvider:
    """Replays chat responses from a scenario in strict call order.

    Replay is positional, not keyed on the prompt: the n-th call gets the
    n-th record no matter what was asked.  This keeps fixtures auditable and
    makes drift in the calling sequence fail loudly via MockExhausted.
    """

    def __init__(
        self,
        scenario: str | os.PathLike[str] | Sequence[dict],
        name: str = "scenario",
        budget: CallBudget | None = None,
    ):
        if isinstance(scenario, (str, os.PathLike)):
            self.name = os.fspath(scenario)
            records = _load_scenario_records(scenario)
        else:
            self.name = name
            records = [dict(rec) for rec in scenario]
        self._responses = [_record_to_response(rec) for rec in records]
        self._cursor = 0
        self._budget = budget
        self._lock = threading.Lock()

    @property
    def remaining(self) -> int:
        with self._lock:
            return len(self._responses) - self._cursor

    @property
    def calls_made(self) -> int:
        with self._lock:
            return self._cursor

    def chat_complete(self, request: ChatRequest) -> ChatResponse:
        if self._budget is not None:
            self._budget.consume()
        with self._lock:
            if self._cursor >= len(self._responses):
                raise MockExhausted(
                    f"scripted chat '{self.name}' exhausted after {self._cursor} calls"
                )
            response = self._responses[self._cursor]
            self._cursor += 1
        return response


class MockEmbeddingProvider:
    """Deterministic offline embeddings.

    Known texts map to explicit vectors; unknown texts fall back to a vector
    seeded from the sha256 of the text.  Identical text always embeds to the
    identical vector, across processes and platforms.
    """

    def __init__(
        self,
        dimension: int = 16,
        vector_map: dict[str, Sequence[float]] | None = None,
        normalize: bool = True,
        budget: CallBudget | None = None,
    ):
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.normalize = normalize
        self._map = {k: tuple(float(x) for x in v) for k, v in (vector_map or {}).items()}
        for key, vec in self._map.items():
            if len(vec) != dimension:
                raise ValueError(f"mapped vector for {key!r} has dimension {len(vec)}, want {dimension}")
        self._budget = budget

    @staticmethod
    def from_file(path: str | os.PathLike[str], normalize: bool = True) -> "MockEmbeddingProvider":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return MockEmbeddingProvider(
            dimension=int(data["dimension"]),
            vector_map=data.get("vectors", {}),
            normalize=normalize,
        )

    def embed_text(self, text: str) -> EmbeddingVector:
        if self._budget is not None:
            self._budget.consume()
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
        mapped = self._map.get(text)
        if mapped is not None:
            return EmbeddingVector.from_array(mapped, normalize=self.normalize)
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "big")
        rng = np.random.default_rng(seed)
        vec = rng.standard_normal(self.dimension)
        return EmbeddingVector.from_array(vec, normalize=self.normalize)


def _request_with_retries(send, describe: str, sleep=time.sleep):
    """Run ``send`` with the transport retry policy: 3 retries, 1s/2s/4s.

    Only transport-level errors retry; anything else propagates immediately.
    """
    import requests

    last_error: Exception | None = None
    for attempt in range(len(RETRY_BACKOFF_S) + 1):
        try:
            return send()
        except (requests.ConnectionError, requests.Timeout) as exc:
            last_error = exc
            if attempt < len(RETRY_BACKOFF_S):
                sleep(RETRY_BACKOFF_S[attempt])
    raise TransportFailure(f"{describe} failed after {len(RETRY_BACKOFF_S)} retries: {last_error}")


def _api_key_from_env(env_var: str) -> str:
    # Credentials come from the environment only and are never logged.
    key = os.environ.get(env_var, "")
    if not key:
        raise ProviderError(f"environment variable {env_var} is not set")
    return key


@dataclass
class HttpChatProvider:
    """Live chat client for an OpenAI-style /chat/completions endpoint."""

    base_url: str
    model: str
    api_key_env: str = "ARCHSKILLS_API_KEY"
    timeout_s: float = 120.0
    budget: CallBudget | None = None
    _sleep: object = field(default=time.sleep, repr=False)

    def chat_complete(self, request: ChatRequest) -> ChatResponse:
        import requests

        if self.budget is not None:
            self.budget.consume()
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": request.user_text})
        payload: dict = {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_length,
        }
        if request.tool_schemas:
            payload["tools"] = [
                {
                    "type": "function",
                    "function": {
                        "name": schema.name,
                        "description": schema.description,
                        "parameters": {
                            "type": "object",
                            "properties": {schema.argument: {"type": "string"}},
                            "required": [schema.argument],
                        },
                    },
                }
                for schema in request.tool_schemas
            ]

        def send():
            resp = requests.post(
                self.base_url.rstrip("/") + "/chat/completions",
                json=payload,
                headers={"Authorization": f"Bearer {_api_key_from_env(self.api_key_env)}"},
                timeout=self.timeout_s,
            )
            resp.raise_for_status()
            return resp

        resp = _request_with_retries(send, "chat completion", sleep=self._sleep)
        try:
            body = resp.json()
            choice = body["choices"][0]
            message = choice["message"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolViolation(f"malformed chat completion payload: {exc}") from exc
        text = message.get("content") or ""
        tool_call = None
        raw_calls = message.get("tool_calls") or []
        if raw_calls:
            fn = raw_calls[0].get("function", {})
            tool_call = ToolCall(
                name=str(fn.get("name", "")),
                argument_text=str(fn.get("arguments", "{}")),
            )
        finish = str(choice.get("finish_reason", "stop"))
        return ChatResponse(text=text, tool_call=tool_call, finish_reason=finish)


@dataclass
class HttpEmbeddingProvider:
    """Live embedding client for an OpenAI-style /embeddings endpoint."""

    base_url: str
    model: str
    api_key_env: str = "ARCHSKILLS_API_KEY"
    timeout_s: float = 60.0
    normalize: bool = True
    budget: CallBudget | None = None
    _sleep: object = field(default=time.sleep, repr=False)

    def embed_text(self, text: str) -> EmbeddingVector:
        import requests

        if self.budget is not None:
            self.budget.consume()
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")

        def send():
            resp = requests.post(
                self.base_url.rstrip("/") + "/embeddings",
                json={"model": self.model, "input": text},
                headers={"Authorization": f"Bearer {_api_key_from_env(self.api_key_env)}"},
                timeout=self.timeout_s,
            )
            resp.raise_for_status()
            return resp

        resp = _request_with_retries(send, "embedding", sleep=self._sleep)
        try:
            values = resp.json()["data"][0]["embedding"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolViolation(f"malformed embedding payload: {exc}") from exc
        return EmbeddingVector.from_array(values, normalize=self.normalize)
