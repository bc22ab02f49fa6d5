"""Provider boundary: chat completion, image generation, structured output.

Providers are small adapters behind two call shapes (``complete`` for chat,
``generate`` for images) so any vendor can be swapped via config. The
scripted mock providers are fully deterministic, which is what makes
end-to-end generation runs byte-reproducible in tests.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional

import httpx

from .errors import (NoObjectFound, ParseError, ProviderRefusal,
                     RetriesExhausted, SchemaViolation, TransportError)
from .models import (ConversationHistory, GenerationConfig, Message,
                     Violation)
from .prompts import KIND_MARKERS, PromptKind, RenderedPrompt
from .schemas import validate_against


@dataclass(frozen=True)
class ChatParams:
    temperature: float = 1.0
    max_output_tokens: int = 4096
    model_id: str = "default"

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class ProviderResponse:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self):
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be >= 0")


@dataclass(frozen=True)
class RetryAttempt:
    attempt_number: int
    failure_kind: str  # transport | malformed_output | validation
    detail: str

    def to_dict(self) -> dict:
        return {"attempt_number": self.attempt_number,
                "failure_kind": self.failure_kind, "detail": self.detail}


@dataclass(frozen=True)
class RetryReport:
    attempts: tuple[RetryAttempt, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "attempts", tuple(self.attempts))

    def to_dict(self) -> dict:
        return {"attempts": [a.to_dict() for a in self.attempts]}


# --- token counting ------------------------------------------------------

def heuristic_message_tokens(message: Message) -> int:
    """Default per-message estimate: one token per four characters."""
    return math.ceil(len(message.content) / 4)


def count_tokens(history: ConversationHistory,
                 counter: Callable[[Message], int] = heuristic_message_tokens,
                 ) -> int:
    """Sum the counter over messages; additive by construction."""
    return sum(counter(m) for m in history.messages)


# --- structured output extraction ----------------------------------------

def extract_structured(text: str, schema_id: str):
    """Pull the structured object out of a model response.

    Prefers the first fenced code block (that is what the prompts ask for);
    falls back to the first balanced ``{...}`` span. The parsed object is
    validated against the named schema before being returned.
    """
    span = _fenced_block(text)
    if span is None:
        span = _balanced_braces(text)
    try:
        obj = json.loads(span)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, e.pos) from None
    validate_against(obj, schema_id)
    return obj


def _fenced_block(text: str) -> Optional[str]:
    start = text.find("```")
    if start < 0:
        return None
    body_start = text.find("\n", start)
    if body_start < 0:
        return None
    end = text.find("```", body_start)
    if end < 0:
        return None
    return text[body_start + 1:end].strip()


def _balanced_braces(text: str) -> str:
    start = text.find("{")
    if start < 0:
        raise NoObjectFound("no fenced block or object literal in response")
    depth = 0
    in_string = False
    escaped = False
    for pos in range(start, len(text)):
        ch = text[pos]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start:pos + 1]
    raise ParseError("object is never closed", len(text))


# --- retry loop ----------------------------------------------------------

def generate_validated(provider, history: ConversationHistory,
                       params: ChatParams, schema_id: str,
                       validator: Optional[Callable[[dict], list[Violation]]],
                       max_retries: int):
    """Call the provider until output parses, validates, or retries run out.

    Returns ``(object, response, report)`` where the report lists every
    failed attempt. Raises :class:`RetriesExhausted` carrying the full
    report after ``max_retries`` failures.
    """
    if max_retries < 1:
        raise ValueError("max_retries must be >= 1")
    attempts: list[RetryAttempt] = []
    for attempt in range(1, max_retries + 1):
        try:
            response = provider.complete(history, params)
        except (TransportError, ProviderRefusal) as e:
            attempts.append(RetryAttempt(attempt, "transport", str(e)))
            continue
        try:
            obj = extract_structured(response.text, schema_id)
        except (NoObjectFound, ParseError, SchemaViolation) as e:
            attempts.append(RetryAttempt(attempt, "malformed_output", str(e)))
            continue
        violations = validator(obj) if validator else []
        if violations:
            attempts.append(RetryAttempt(
                attempt, "validation",
                "; ".join(str(v) for v in violations)))
            continue
        return obj, response, RetryReport(tuple(attempts))
    raise RetriesExhausted(RetryReport(tuple(attempts)))


# --- scripted mock providers ----------------------------------------------

#: Response text the scripted entries use to force a malformed-output failure.
FAIL = "FAIL"

_CHARACTER_NAMES = ("Aster Vane", "Brisa Thorn", "Corin Ash", "Dara Quill",
                    "Elio Marsh", "Fenna Holt", "Garen Pike", "Hale Winters")
_SCENE_NAMES = ("Observatory", "Harbor Market", "Glass Garden",
                "Old Archive", "Signal Tower", "Moth Bridge", "Salt Flats",
                "Larkspur Inn")


def detect_prompt_kind(text: str) -> Optional[PromptKind]:
    """Recognise which default template produced a prompt, if any."""
    for kind, marker in KIND_MARKERS.items():
        if marker in text:
            return kind
    return None


class MockChatProvider:
    """Deterministic chat provider for tests and offline runs.

    Consumes scripted entries first: each request takes the first entry whose
    ``match`` equals the detected prompt kind; ``respond`` is the reply text,
    or :data:`FAIL` to force an unparseable reply. With no matching entry the
    provider synthesises a valid reply for the detected kind, so arbitrarily
    long runs need no hand-written script. Output depends only on the kind
    and a per-kind call counter, never on the history, which keeps runs
    reproducible and lets history-pathway tests diff the two engine modes.
    """

    def __init__(self, cfg: GenerationConfig,
                 script: Optional[list[dict]] = None,
                 choices_per_opportunity: int = 2,
                 filler_sentences: int = 0):
        self.cfg = cfg
        self.script = list(script or [])
        self.choices_per_opportunity = choices_per_opportunity
        self.filler_sentences = filler_sentences
        self._lock = threading.Lock()
        self._calls_by_kind: dict[PromptKind, int] = {}

    @classmethod
    def from_script_file(cls, cfg: GenerationConfig, path,
                         **kwargs) -> "MockChatProvider":
        with open(path, encoding="utf-8") as f:
            return cls(cfg, script=json.load(f), **kwargs)

    def complete(self, history: ConversationHistory,
                 params: ChatParams) -> ProviderResponse:
        if not history.messages:
            raise ValueError("history must be nonempty")
        last = history.messages[-1]
        if last.role != "user":
            raise ValueError("last message must have role user")
        kind = detect_prompt_kind(last.content)
        with self._lock:
            entry = self._pop_script_entry(kind)
            seq = self._calls_by_kind.get(kind, 0)
            self._calls_by_kind[kind] = seq + 1
        if entry is not None:
            if entry.get("fail") == "transport":
                raise TransportError(entry.get("detail", "scripted failure"))
            text = entry["respond"]
        else:
            text = self._synthesize(kind, seq)
        return ProviderResponse(
            text=text,
            input_tokens=count_tokens(history),
            output_tokens=math.ceil(len(text) / 4))

    def _pop_script_entry(self, kind: Optional[PromptKind]) -> Optional[dict]:
        kind_name = kind.name if kind else None
        for i, entry in enumerate(self.script):
            if entry.get("match") == kind_name or entry.get("match") == "*":
                return self.script.pop(i)
        return None

    def _synthesize(self, kind: Optional[PromptKind], seq: int) -> str:
        if kind is None:
            return "I do not recognise this request."
        if kind is PromptKind.PLOT:
            body = self._plot_payload()
        else:
            body = self._chunk_payload(kind, seq)
        return "```\n" + json.dumps(body, indent=2) + "\n```"

    def _plot_payload(self) -> dict:
        cfg = self.cfg
        characters = [{
            "name": _CHARACTER_NAMES[i % len(_CHARACTER_NAMES)],
            "age": str(20 + i),
            "gender": ("female", "male", "nonbinary")[i % 3],
            "species": "human",
            "physical_appearance": f"Distinctive traveller number {i + 1}.",
            "role_description": f"Companion {i + 1} on the journey.",
        } for i in range(cfg.num_main_characters)]
        scenes = [{
            "name": _SCENE_NAMES[i % len(_SCENE_NAMES)],
            "location": f"District {i + 1}",
            "description": f"A memorable place, number {i + 1}.",
        } for i in range(cfg.num_main_scenes)]
        endings = [{
            "label": f"Ending {i + 1}",
            "description": f"The journey resolves along path {i + 1}.",
        } for i in range(cfg.num_endings)]
        return {
            "title": "The Shattered Meridian",
            "genre": cfg.game_genre,
            "themes": list(cfg.themes),
            "synopsis": "A courier uncovers a map that redraws the world.",
            "chapter_synopses": [
                f"Chapter {i + 1}: the map reveals its layer {i + 1}."
                for i in range(cfg.num_chapters)],
            "beginning": "Rain taps the windows of the Larkspur Inn.",
            "main_characters": characters,
            "main_scenes": scenes,
            "endings": endings,
        }

    def _chunk_payload(self, kind: PromptKind, seq: int) -> dict:
        speaker = _CHARACTER_NAMES[seq % min(len(_CHARACTER_NAMES),
                                             self.cfg.num_main_characters)]
        scene = _SCENE_NAMES[seq % min(len(_SCENE_NAMES),
                                       self.cfg.num_main_scenes)]
        filler = " ".join(
            f"The road stretches on, mile {i + 1} of many."
            for i in range(self.filler_sentences))
        narratives = [
            {"speaker": "narrator",
             "text": (f"[{kind.value} #{seq}] The story presses forward. "
                      + filler).strip(),
             "scene": scene},
            {"speaker": speaker,
             "text": f"We cannot stop now. [{kind.value} #{seq}]",
             "scene": scene},
        ]
        if kind in (PromptKind.CHUNK_UNTIL_CHOICE,
                    PromptKind.CHUNK_WITH_CHOICE):
            choices = [{"text": f"Option {i + 1} at {kind.value} #{seq}"}
                       for i in range(self.choices_per_opportunity)]
        else:
            choices = []
        return {
            "story_so_far": f"Summary through {kind.value} #{seq}.",
            "narratives": narratives,
            "choices": choices,
        }


class MockImageProvider:
    """Returns a deterministic 1x1 PNG whose pixel derives from the prompt."""

    def generate(self, prompt: RenderedPrompt) -> bytes:
        from PIL import Image

        digest = hashlib.sha256(prompt.text.encode("utf-8")).digest()
        img = Image.new("RGB", (1, 1), tuple(digest[:3]))
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return buf.getvalue()


# --- HTTP providers -------------------------------------------------------

class RateLimiter:
    """Token bucket: at most ``requests_per_minute`` acquisitions a minute."""

    def __init__(self, requests_per_minute: Optional[int] = None):
        self.rpm = requests_per_minute
        self._lock = threading.Lock()
        self._tokens = float(requests_per_minute or 0)
        self._last = time.monotonic()

    def acquire(self):
        if not self.rpm:
            return
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.rpm,
                                   self._tokens + (now - self._last)
                                   * self.rpm / 60.0)
                self._last = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                wait = (1 - self._tokens) * 60.0 / self.rpm
            time.sleep(wait)


class HttpChatProvider:
    """Chat-completions adapter speaking the common JSON wire shape."""

    def __init__(self, base_url: Optional[str] = None,
                 api_key: Optional[str] = None,
                 requests_per_minute: Optional[int] = None,
                 timeout: float = 120.0):
        self.base_url = (base_url or os.environ.get("BRANCHFORGE_LLM_URL")
                         or "").rstrip("/")
        if not self.base_url:
            raise ValueError("chat provider needs a base URL "
                             "(BRANCHFORGE_LLM_URL)")
        self.api_key = api_key or os.environ.get("BRANCHFORGE_LLM_KEY", "")
        self.limiter = RateLimiter(requests_per_minute)
        self.timeout = timeout

    def complete(self, history: ConversationHistory,
                 params: ChatParams) -> ProviderResponse:
        if not history.messages or history.messages[-1].role != "user":
            raise ValueError("history must be nonempty and end with role user")
        self.limiter.acquire()
        payload = {
            "model": params.model_id,
            "temperature": params.temperature,
            "max_tokens": params.max_output_tokens,
            "messages": [{"role": m.role, "content": m.content}
                         for m in history.messages],
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = httpx.post(f"{self.base_url}/v1/chat/completions",
                              json=payload, headers=headers,
                              timeout=self.timeout)
        except httpx.HTTPError as e:
            raise TransportError(str(e)) from e
        if resp.status_code != 200:
            raise ProviderRefusal(resp.status_code, resp.text[:500])
        body = resp.json()
        usage = body.get("usage", {})
        return ProviderResponse(
            text=body["choices"][0]["message"]["content"],
            input_tokens=usage.get("prompt_tokens", 0),
            output_tokens=usage.get("completion_tokens", 0))


class HttpImageProvider:
    """Image-generation adapter returning raw image bytes."""

    def __init__(self, base_url: Optional[str] = None,
                 api_key: Optional[str] = None,
                 requests_per_minute: Optional[int] = None,
                 timeout: float = 300.0):
        self.base_url = (base_url or os.environ.get("BRANCHFORGE_IMG_URL")
                         or "").rstrip("/")
        if not self.base_url:
            raise ValueError("image provider needs a base URL "
                             "(BRANCHFORGE_IMG_URL)")
        self.api_key = api_key or os.environ.get("BRANCHFORGE_IMG_KEY", "")
        self.limiter = RateLimiter(requests_per_minute)
        self.timeout = timeout

    def generate(self, prompt: RenderedPrompt) -> bytes:
        import base64

        self.limiter.acquire()
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = httpx.post(f"{self.base_url}/v1/images/generations",
                              json={"prompt": prompt.text},
                              headers=headers, timeout=self.timeout)
        except httpx.HTTPError as e:
            raise TransportError(str(e)) from e
        if resp.status_code != 200:
            raise ProviderRefusal(resp.status_code, resp.text[:500])
        body = resp.json()
        return base64.b64decode(body["data"][0]["b64_json"])
