"""Chat-completion gateway with record/replay cassettes, prompt templates and tag parsing."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Sequence

import httpx

log = logging.getLogger(__name__)

API_KEY_ENV = "LAYOUTFORGE_API_KEY"
DEFAULT_TIMEOUT = 60.0
TEMPLATE_IDS = (
    "arl_define", "arl_constraint", "arl_validation", "rrg_describe", "rrg_critique",
    "fast_poses", "fast_relations", "fast_repair", "judge_pos_ali",
)
_PLACEHOLDER = re.compile(r"<[a-z][a-z_]*>")
ROLES = ("system", "user", "assistant")


class LLMError(Exception):
    pass


class CassetteMiss(LLMError):
    def __init__(self, fingerprint: str):
        self.fingerprint = fingerprint
        super().__init__(f"cassette miss: {fingerprint}")


class CassetteError(LLMError):
    pass


class ProviderError(LLMError):
    def __init__(self, status: int, body: str = ""):
        self.status = status
        super().__init__(f"provider error: HTTP {status}: {body[:200]}")


class LLMTimeout(LLMError):
    pass


class TemplateError(LLMError, KeyError):
    def __str__(self):
        return str(self.args[0])


class TagNotFound(LLMError, ValueError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[tuple[str, str], ...]
    model_id: str
    temperature: float = 0.0
    max_tokens: int = 4096

    def __post_init__(self):
        msgs = tuple((str(r), str(t)) for r, t in self.messages)
        object.__setattr__(self, "messages", msgs)
        if any(r not in ROLES for r, _ in msgs):
            raise ValueError(f"roles must be in {ROLES}")
        if not any(r == "user" for r, _ in msgs):
            raise ValueError("a chat request needs at least one user message")

    @property
    def fingerprint(self) -> str:
        payload = json.dumps([self.model_id, [list(m) for m in self.messages]], ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:32]

    @property
    def prompt(self) -> str:
        return "\n\n".join(t for r, t in self.messages if r == "user")


class Cassette:
    """Append-only fingerprint -> response store backed by a JSONL file."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.entries: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            for lineno, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    self._insert(rec)
                except (json.JSONDecodeError, KeyError) as e:
                    raise CassetteError(f"{self.path}:{lineno}: bad cassette record: {e}") from None

    def __contains__(self, fingerprint: str) -> bool:
        return fingerprint in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, fingerprint: str) -> dict:
        try:
            return self.entries[fingerprint]
        except KeyError:
            raise CassetteMiss(fingerprint) from None

    def _insert(self, rec: dict) -> None:
        fp = rec["fingerprint"]
        old = self.entries.get(fp)
        if old is not None:
            if old["request"] != rec["request"]:
                raise CassetteError(f"fingerprint collision on {fp}")
            raise CassetteError(f"cassette is append-only; {fp} already recorded")
        self.entries[fp] = rec

    def record(self, req: ChatRequest, response: str, provider: str) -> dict:
        rec = {
            "fingerprint": req.fingerprint,
            "model_id": req.model_id,
            "request": [list(m) for m in req.messages],
            "response": response,
            "provider": provider,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        with self._lock:
            self._insert(rec)
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        return rec

    def write_subset(self, fingerprints: Sequence[str], path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for fp in dict.fromkeys(fingerprints):
                if fp in self.entries:
                    fh.write(json.dumps(self.entries[fp], ensure_ascii=False) + "\n")


# ---------------------------------------------------------------- providers


class HttpProvider:
    """OpenAI-style chat-completions endpoint."""

    name = "http"

    def __init__(self, endpoint: str, api_key_env: str = API_KEY_ENV, timeout: float = DEFAULT_TIMEOUT,
                 client: httpx.Client | None = None):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.timeout = timeout
        self._client = client

    def __call__(self, req: ChatRequest) -> str:
        key = os.environ.get(self.api_key_env)
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        body = {
            "model": req.model_id,
            "messages": [{"role": r, "content": t} for r, t in req.messages],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        client = self._client or httpx.Client(timeout=self.timeout)
        try:
            resp = client.post(self.endpoint, json=body, headers=headers)
        except httpx.TimeoutException as e:
            raise LLMTimeout(f"timeout after {self.timeout}s: {e}") from None
        except httpx.HTTPError as e:
            raise LLMError(f"transport error: {e}") from None
        finally:
            if self._client is None:
                client.close()
        if not 200 <= resp.status_code < 300:
            raise ProviderError(resp.status_code, resp.text)
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise LLMError(f"unexpected provider payload: {e}") from None


# ---------------------------------------------------------------- gateway modes


@dataclass(frozen=True)
class Live:
    endpoint: str
    api_key_env: str = API_KEY_ENV


@dataclass(frozen=True)
class Replay:
    cassette: str | Path


@dataclass(frozen=True)
class Record:
    cassette: str | Path
    provider: Callable[[ChatRequest], str] | Live


@dataclass(frozen=True)
class Mock:
    policy: str | Callable[[ChatRequest], str] = "heuristic"


GatewayMode = Live | Replay | Record | Mock


@dataclass
class Gateway:
    mode: GatewayMode
    model_id: str = "gpt-4o"
    temperature: float = 0.0
    max_tokens: int = 4096
    timeout: float = DEFAULT_TIMEOUT
    fingerprints: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.cassette: Cassette | None = None
        self._provider: Callable[[ChatRequest], str] | None = None
        self._provider_name = "none"
        m = self.mode
        if isinstance(m, Replay):
            if not Path(m.cassette).exists():
                raise CassetteError(f"cassette not found: {m.cassette}")
            self.cassette = Cassette(m.cassette)
        elif isinstance(m, Record):
            self.cassette = Cassette(m.cassette)
            self._provider, self._provider_name = self._make_provider(m.provider)
        elif isinstance(m, Live):
            self.cassette = Cassette()
            self._provider, self._provider_name = self._make_provider(m)
        elif isinstance(m, Mock):
            self.cassette = Cassette()
            self._provider, self._provider_name = self._make_provider(m)
        else:
            raise TypeError(f"unknown gateway mode {m!r}")
        self._lock = threading.Lock()

    def _make_provider(self, spec):
        if isinstance(spec, Live):
            return HttpProvider(spec.endpoint, spec.api_key_env, self.timeout), "http"
        if isinstance(spec, Mock):
            spec = spec.policy
        if isinstance(spec, str):
            from .mock import get_policy

            return get_policy(spec), f"mock:{spec}"
        return spec, getattr(spec, "name", "mock:custom")

    def complete(self, req: ChatRequest) -> str:
        fp = req.fingerprint
        with self._lock:
            self.fingerprints.append(fp)
        if fp in self.cassette:
            return self.cassette.get(fp)["response"]
        if isinstance(self.mode, Replay):
            raise CassetteMiss(fp)
        text = self._provider(req)
        if fp not in self.cassette:
            self.cassette.record(req, text, self._provider_name)
        return text

    def request(self, prompt: str, system: str | None = None) -> ChatRequest:
        msgs = ([("system", system)] if system else []) + [("user", prompt)]
        return ChatRequest(tuple(msgs), self.model_id, self.temperature, self.max_tokens)

    def ask(self, prompt: str, system: str | None = None) -> str:
        return self.complete(self.request(prompt, system))


# ---------------------------------------------------------------- templates and tags


def load_template(template_id: str) -> str:
    if template_id not in TEMPLATE_IDS:
        raise TemplateError(f"unknown template {template_id!r}")
    return resources.files("layoutforge").joinpath("templates", f"{template_id}.txt").read_text(encoding="utf-8")


def fill_template(text: str, substitutions: Mapping[str, str]) -> str:
    for ph in _PLACEHOLDER.findall(text):
        if ph not in substitutions:
            raise TemplateError(f"{ph} unbound")
    return _PLACEHOLDER.sub(lambda m: str(substitutions[m.group(0)]), text)


def render_template(template_id: str, substitutions: Mapping[str, str]) -> str:
    return fill_template(load_template(template_id), substitutions)


def template_placeholders(template_id: str) -> list[str]:
    return list(dict.fromkeys(_PLACEHOLDER.findall(load_template(template_id))))


def parse_tagged_block(text: str, tag: str) -> str:
    """Text between the first two occurrences of ``tag`` (the same token opens and closes)."""
    first = text.find(tag)
    second = text.find(tag, first + len(tag)) if first >= 0 else -1
    if second < 0:
        raise TagNotFound(f"tag not found: {tag}")
    return text[first + len(tag):second].strip()


def wrap_block(body: str, tag: str) -> str:
    return f"{tag}\n{body}\n{tag}"
