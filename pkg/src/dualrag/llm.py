"""Chat-completion backends and prompt templates."""

from __future__ import annotations

import json
import logging
import re
import time
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping, Protocol, runtime_checkable

import httpx

from .exceptions import (
    BudgetExceeded,
    FormatError,
    MissingSlot,
    ProtocolError,
    TransportError,
    UnscriptedRequest,
)

logger = logging.getLogger(__name__)

ROLES = ("reasoner", "entity_identifier", "knowledge_summarizer", "answerer", "judge")
SLOTS = (
    "few_shots",
    "knowledge",
    "question",
    "reasoning_history",
    "entity",
    "retrieved_docs",
    "prediction",
    "golden_answer",
)
_SLOT_RE = re.compile(r"\{(" + "|".join(SLOTS) + r")\}")
QUESTION_HEADER = "## Question currently being solved"


@dataclass(frozen=True)
class PromptTemplate:
    role: str
    body: str
    defaults: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown prompt role {self.role!r}")

    @property
    def slots(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for m in _SLOT_RE.finditer(self.body):
            seen.setdefault(m.group(1))
        return tuple(seen)

    def render(self, **bindings: str) -> str:
        return render_prompt(self, bindings)


def render_prompt(template: PromptTemplate, bindings: Mapping[str, str]) -> str:
    """Substitute every slot of ``template`` in a single pass.

    Bound values are inserted verbatim and never re-scanned, so text that
    happens to contain ``{question}`` cannot trigger a second substitution.
    Template defaults (the shipped few-shot blocks) are used for slots the
    caller leaves unbound.
    """
    values = {**template.defaults, **bindings}
    for slot in template.slots:
        if slot not in values or values[slot] is None:
            raise MissingSlot(slot)
    return _SLOT_RE.sub(lambda m: str(values[m.group(1)]), template.body)


def _read_asset(*parts: str) -> str | None:
    node = resources.files("dualrag").joinpath("prompts", *parts)
    if not node.is_file():
        return None
    return node.read_text(encoding="utf-8").strip()


@lru_cache(maxsize=None)
def get_template(role: str) -> PromptTemplate:
    """The shipped template for ``role`` with its few-shot block pre-bound."""
    body = _read_asset(f"{role}.txt")
    if body is None:
        raise ValueError(f"unknown prompt role {role!r}")
    shots = _read_asset("few_shots", f"{role}.txt")
    return PromptTemplate(role, body, {"few_shots": shots} if shots is not None else {})


def load_template(path: str | Path, role: str, few_shots: str | None = None) -> PromptTemplate:
    body = Path(path).read_text(encoding="utf-8").strip()
    return PromptTemplate(role, body, {"few_shots": few_shots} if few_shots is not None else {})


def make_tag(role: str, question_id: str, iteration: int, *extra: str) -> str:
    return "/".join([role, str(question_id), str(iteration), *extra])


@dataclass(frozen=True)
class ChatRequest:
    rendered_prompt: str
    tag: str
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    @property
    def role(self) -> str:
        return self.tag.split("/", 1)[0]


@runtime_checkable
class ChatBackend(Protocol):
    def complete(self, request: ChatRequest) -> str: ...

    def health_check(self) -> bool: ...


class ScriptedBackend:
    """Replays canned responses keyed by request tag.

    Lookups never consume the script, so the same tag always yields the same
    text and one instance can be shared between threads.
    """

    def __init__(self, script: Mapping[str, str]):
        self._script = dict(script)

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "ScriptedBackend":
        script: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                    script[row["tag"]] = row["response"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise FormatError(f"{path}:{lineno}: bad fixture line ({exc})") from exc
        return cls(script)

    @property
    def tags(self) -> list[str]:
        return list(self._script)

    def complete(self, request: ChatRequest) -> str:
        try:
            return self._script[request.tag]
        except KeyError:
            raise UnscriptedRequest(request.tag) from None

    def health_check(self) -> bool:
        return True


def scripted_complete(script: Mapping[str, str], request: ChatRequest) -> str:
    return ScriptedBackend(script).complete(request)


def split_prompt(prompt: str) -> tuple[str, str]:
    """Split a rendered prompt into (preamble, question block)."""
    idx = prompt.rfind(QUESTION_HEADER)
    if idx <= 0:
        return "", prompt
    return prompt[:idx].rstrip(), prompt[idx:]


class HTTPChatBackend:
    """Client for an OpenAI-compatible ``/chat/completions`` endpoint.

    Transport failures and 5xx/429 responses are retried ``max_retries``
    times with exponential backoff; anything else that is not a well-formed
    completion raises :class:`ProtocolError`.
    """

    def __init__(
        self,
        base_url: str,
        model: str = "default",
        api_key: str | None = None,
        timeout: float = 60.0,
        max_retries: int = 2,
        backoff: float = 0.5,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = client or httpx.Client(timeout=timeout, headers=headers)

    def close(self):
        self._client.close()

    def build_payload(self, request: ChatRequest) -> dict:
        system, user = split_prompt(request.rendered_prompt)
        messages = []
        if system:
            messages.append({"role": "system", "content": system})
        messages.append({"role": "user", "content": user})
        return {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }

    def complete(self, request: ChatRequest) -> str:
        payload = self.build_payload(request)
        url = f"{self.base_url}/chat/completions"
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(url, json=payload)
            except httpx.TransportError as exc:
                last_error = TransportError(f"{url}: {exc}")
                logger.warning("%s attempt %d failed: %s", request.tag, attempt + 1, exc)
                continue
            if resp.status_code >= 500 or resp.status_code == 429:
                last_error = ProtocolError(f"{url}: HTTP {resp.status_code}")
                logger.warning("%s attempt %d got HTTP %d", request.tag, attempt + 1, resp.status_code)
                continue
            if resp.status_code >= 400:
                raise ProtocolError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
            return _extract_content(resp)
        raise BudgetExceeded(
            f"{request.tag}: giving up after {self.max_retries} retries ({last_error})"
        )

    def health_check(self) -> bool:
        try:
            resp = self._client.get(f"{self.base_url}/models")
        except httpx.TransportError:
            return False
        return resp.status_code < 400


def _extract_content(resp: httpx.Response) -> str:
    try:
        body = resp.json()
        content = body["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"malformed completion response: {resp.text[:200]!r}") from exc
    if not isinstance(content, str):
        raise ProtocolError("completion content is not a string")
    return content


def http_complete(endpoint: Mapping, request: ChatRequest) -> str:
    return HTTPChatBackend(**endpoint).complete(request)


class RecordingBackend:
    """Wraps a backend and keeps the ordered list of tags it was asked for."""

    def __init__(self, backend: ChatBackend):
        self.backend = backend
        self.log: list[str] = []

    def complete(self, request: ChatRequest) -> str:
        self.log.append(request.tag)
        return self.backend.complete(request)

    def health_check(self) -> bool:
        return self.backend.health_check()
