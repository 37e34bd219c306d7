"""Schema-constrained history extraction: prompt builders, a pluggable
generation backend, and strict response parsing."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Protocol, runtime_checkable

import httpx

from .corpus import PatientRecord

SCHEMA_KEYS = ("incision_types", "contraindications", "previous_delivery_modes")

# The narrative is always introduced by this delimiter and nothing follows it,
# which lets offline backends recover the note from the prompt.
NOTE_DELIMITER = "Note:\n"

_SCHEMA_LINE = (
    '{"incision_types": [...] or null, '
    '"contraindications": [...] or null, '
    '"previous_delivery_modes": [...] or null}'
)

_SHORT_TEMPLATE = f"""You extract facts from an obstetric history and physical note.

Targets:
- incision_types: uterine incision type from any prior cesarean.
- contraindications: conditions arguing against a trial of labor after cesarean.
- previous_delivery_modes: how each prior delivery occurred.

Rules:
- Copy verbatim sentences from the note only. No paraphrase. No inference.
- If a target is absent or uncertain, use null.

Reply with exactly one JSON object of this shape:
{_SCHEMA_LINE}

{NOTE_DELIMITER}"""

_LONG_TEMPLATE = f"""You extract facts from an obstetric history and physical note.

Work through the targets one at a time.

Step 1 - incision_types: find sentences stating the uterine incision type from
any prior cesarean. Acceptable mentions include phrases such as "low transverse
cesarean section", "classical incision", or "Pfannenstiel". Copy the sentence
verbatim. Do not paraphrase.

Step 2 - contraindications: find sentences naming conditions that argue against
a trial of labor after cesarean. Acceptable mentions include phrases such as
"prior uterine rupture" or "placenta previa". Copy the sentence verbatim. Do
not paraphrase.

Step 3 - previous_delivery_modes: find sentences stating how each prior
delivery occurred. Acceptable mentions include phrases such as "spontaneous
vaginal delivery" or "repeat cesarean". Copy the sentence verbatim. Do not
paraphrase.

Rules, which apply to every step:
- Verbatim sentences only. Never rephrase, summarize, or infer.
- Every string you output must appear word for word in the note.
- If a target is absent or you are uncertain, use null rather than guessing.

Reply with exactly one JSON object of this shape:
{_SCHEMA_LINE}

Remember: verbatim sentences only; absent or uncertain means null.

{NOTE_DELIMITER}"""

REPAIR_SUFFIX = (
    "\n\nYour previous reply did not match the required schema. Reply again "
    "with only the JSON object, nothing else."
)


class PromptVariant(str, Enum):
    SHORT = "short"
    LONG = "long"


class ExtractionError(Exception):
    """Base class for extraction failures."""


class SchemaViolation(ExtractionError):
    """Response text does not contain a valid object of the expected shape."""


class UnparseableResponseError(ExtractionError):
    def __init__(self, record_id: str, raw_response: str, reason: str) -> None:
        super().__init__(f"record {record_id!r}: unparseable response after retry: {reason}")
        self.record_id = record_id
        self.raw_response = raw_response


class ContextLengthError(ExtractionError):
    def __init__(self, record_id: str, prompt_len: int, limit: int) -> None:
        super().__init__(
            f"record {record_id!r}: prompt of {prompt_len} chars exceeds backend limit {limit}"
        )
        self.record_id = record_id


@dataclass(frozen=True)
class PromptConfig:
    variant: PromptVariant
    model_name: str
    decode_temperature: float = 0.0
    max_output_tokens: int = 512

    def __post_init__(self) -> None:
        if not 0.0 <= self.decode_temperature <= 1.0:
            raise ValueError("decode_temperature must be in [0, 1]")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")

    @property
    def label(self) -> str:
        """Model-prompt cell label used by audit aggregation."""
        return f"{self.model_name}:{self.variant.value}"


@dataclass(frozen=True)
class ExtractionResult:
    incision_types: Optional[tuple[str, ...]]
    contraindications: Optional[tuple[str, ...]]
    previous_delivery_modes: Optional[tuple[str, ...]]
    raw_response: str = ""
    prompt_variant: PromptVariant = PromptVariant.SHORT

    def __post_init__(self) -> None:
        for key in SCHEMA_KEYS:
            value = getattr(self, key)
            if value is None:
                continue
            if not value or any(not isinstance(s, str) or not s for s in value):
                raise ValueError(f"{key} must be null or a non-empty list of non-empty strings")

    def field_items(self) -> list[tuple[str, str]]:
        """Flatten to (field, string) pairs in schema order."""
        out: list[tuple[str, str]] = []
        for key in SCHEMA_KEYS:
            for s in getattr(self, key) or ():
                out.append((key, s))
        return out

    @property
    def is_empty(self) -> bool:
        """All three fields null; the trigger for consulting a fallback config."""
        return all(getattr(self, key) is None for key in SCHEMA_KEYS)


@runtime_checkable
class GenerationBackend(Protocol):
    model_name: str

    def complete(self, prompt: str) -> str: ...


def build_prompt(variant: PromptVariant, narrative: str) -> str:
    if not narrative:
        raise ValueError("narrative must be non-empty")
    template = _SHORT_TEMPLATE if variant is PromptVariant.SHORT else _LONG_TEMPLATE
    return template + narrative


def strip_code_fences(text: str) -> str:
    """Drop a leading/trailing triple-backtick fence if present."""
    stripped = text.strip()
    if stripped.startswith("```"):
        first_break = stripped.find("\n")
        if first_break != -1 and stripped.endswith("```"):
            stripped = stripped[first_break + 1 : -3].strip()
    return stripped


def _first_balanced_object(text: str) -> str:
    """Return the first top-level {...} span, honoring JSON string literals."""
    start = text.find("{")
    if start == -1:
        raise SchemaViolation("no JSON object in response")
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    raise SchemaViolation("unbalanced JSON object in response")


def parse_response(raw: str, variant: PromptVariant) -> ExtractionResult:
    """Validate a model reply against the three-field schema.

    Empty lists collapse to null; anything else malformed raises
    SchemaViolation.
    """
    try:
        obj = json.loads(_first_balanced_object(strip_code_fences(raw)))
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise SchemaViolation("top-level value is not an object")
    missing = [k for k in SCHEMA_KEYS if k not in obj]
    if missing:
        raise SchemaViolation(f"missing keys: {', '.join(missing)}")

    fields: dict[str, Optional[tuple[str, ...]]] = {}
    for key in SCHEMA_KEYS:
        value = obj[key]
        if value is None:
            fields[key] = None
        elif isinstance(value, list):
            if any(not isinstance(s, str) or not s.strip() for s in value):
                raise SchemaViolation(f"{key} contains a non-string or blank element")
            fields[key] = tuple(value) or None
        else:
            raise SchemaViolation(f"{key} is neither a list nor null")
    return ExtractionResult(raw_response=raw, prompt_variant=variant, **fields)


def extract(
    record: PatientRecord, backend: GenerationBackend, config: PromptConfig
) -> ExtractionResult:
    """One backend call plus at most one structured re-ask, then fail closed."""
    prompt = build_prompt(config.variant, record.narrative)
    limit = getattr(backend, "context_limit", None)
    if limit is not None and len(prompt) > limit:
        raise ContextLengthError(record.record_id, len(prompt), limit)

    raw = backend.complete(prompt)
    try:
        return parse_response(raw, config.variant)
    except SchemaViolation:
        pass
    raw = backend.complete(prompt + REPAIR_SUFFIX)
    try:
        return parse_response(raw, config.variant)
    except SchemaViolation as exc:
        raise UnparseableResponseError(record.record_id, raw, str(exc)) from exc


class ChatCompletionBackend:
    """HTTP backend speaking the common chat-completion wire format."""

    def __init__(
        self,
        base_url: str,
        model_name: str,
        *,
        token_env: str = "COUNSELFRAME_API_TOKEN",
        temperature: float = 0.0,
        max_output_tokens: int = 512,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff_seconds: float = 1.0,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.model_name = model_name
        self.token = os.environ.get(token_env, "")
        self.temperature = temperature
        self.max_output_tokens = max_output_tokens
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_seconds = backoff_seconds

    def complete(self, prompt: str) -> str:
        payload = {
            "model": self.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_output_tokens,
        }
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_seconds * (2 ** (attempt - 1)))
            try:
                response = httpx.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers=headers,
                    timeout=self.timeout,
                )
                if response.status_code >= 500:
                    last_error = ExtractionError(f"server error {response.status_code}")
                    continue
                response.raise_for_status()
                return response.json()["choices"][0]["message"]["content"]
            except httpx.TransportError as exc:
                last_error = exc
        raise ExtractionError(f"backend unreachable after {self.max_attempts} attempts") from last_error
