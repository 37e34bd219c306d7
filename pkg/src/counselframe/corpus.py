"""Note ingestion, custom PHI scrubbing, and counseling-section segmentation."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence


class DeliveryGroup(str, Enum):
    VBAC = "VBAC"
    RCS = "RCS"


class DeliveryMode(str, Enum):
    CESAREAN = "cesarean"
    VAGINAL = "vaginal"
    UNKNOWN = "unknown"


class IncisionType(str, Enum):
    LOW_TRANSVERSE = "low_transverse"
    CLASSICAL = "classical"
    T_SHAPED = "t_shaped"
    J_SHAPED = "j_shaped"
    UNKNOWN = "unknown"


class CorpusError(Exception):
    """Raised when the notes or history files fail validation."""


@dataclass(frozen=True)
class PatientRecord:
    record_id: str
    narrative: str
    group: DeliveryGroup
    prior_cesarean: bool
    age: Optional[float] = None
    bmi: Optional[float] = None
    delivery_date: Optional[date] = None

    def exclusion_reason(self) -> Optional[str]:
        """Why this record falls outside the analyzable cohort, or None.

        Excluded records are kept in the corpus so exclusion counts stay
        reportable.
        """
        if not self.prior_cesarean:
            return "no prior cesarean"
        return None


@dataclass(frozen=True)
class PregnancyHistoryEntry:
    record_id: str
    mode: DeliveryMode
    incision_type: IncisionType = IncisionType.UNKNOWN
    delivery_date: Optional[date] = None


@dataclass(frozen=True)
class Segment:
    note_id: str
    index: int
    text: str
    start: int
    end: int
    section_header: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("segment text must be non-empty after trimming")


def _parse_date(value: object, where: str) -> Optional[date]:
    if value is None:
        return None
    try:
        return date.fromisoformat(str(value))
    except ValueError as exc:
        raise CorpusError(f"{where}: invalid ISO date {value!r}") from exc


def _parse_note_line(obj: dict, where: str) -> PatientRecord:
    try:
        record_id = str(obj["record_id"])
        narrative = obj["narrative"]
        group = DeliveryGroup(obj["group"])
        prior_cesarean = bool(obj["prior_cesarean"])
    except KeyError as exc:
        raise CorpusError(f"{where}: missing key {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise CorpusError(f"{where}: {exc}") from exc
    if not isinstance(narrative, str) or not narrative.strip():
        raise CorpusError(f"{where}: narrative must be a non-empty string")
    age = obj.get("age")
    bmi = obj.get("bmi")
    return PatientRecord(
        record_id=record_id,
        narrative=narrative,
        group=group,
        prior_cesarean=prior_cesarean,
        age=float(age) if age is not None else None,
        bmi=float(bmi) if bmi is not None else None,
        delivery_date=_parse_date(obj.get("delivery_date"), where),
    )


def _parse_history_line(obj: dict, where: str) -> PregnancyHistoryEntry:
    try:
        record_id = str(obj["record_id"])
        mode = DeliveryMode(obj["mode"])
    except KeyError as exc:
        raise CorpusError(f"{where}: missing key {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise CorpusError(f"{where}: {exc}") from exc
    raw_incision = obj.get("incision_type")
    # Cesarean entries always carry an incision type; unknown, never absent.
    incision = IncisionType(raw_incision) if raw_incision is not None else IncisionType.UNKNOWN
    return PregnancyHistoryEntry(
        record_id=record_id,
        mode=mode,
        incision_type=incision,
        delivery_date=_parse_date(obj.get("delivery_date"), where),
    )


def _iter_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path.name}:{lineno}: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"{path.name}:{lineno}: expected an object per line")
            yield lineno, obj


def load_corpus(
    notes_path: str | Path, history_path: str | Path
) -> tuple[list[PatientRecord], list[PregnancyHistoryEntry]]:
    """Load the line-delimited notes and pregnancy-history files.

    Rejects duplicate record ids and history rows that reference no note.
    An empty notes file yields an empty corpus.
    """
    notes_path = Path(notes_path)
    history_path = Path(history_path)
    records: list[PatientRecord] = []
    seen: set[str] = set()
    for lineno, obj in _iter_jsonl(notes_path):
        record = _parse_note_line(obj, f"{notes_path.name}:{lineno}")
        if record.record_id in seen:
            raise CorpusError(
                f"{notes_path.name}:{lineno}: duplicate record_id {record.record_id!r}"
            )
        seen.add(record.record_id)
        records.append(record)

    entries: list[PregnancyHistoryEntry] = []
    for lineno, obj in _iter_jsonl(history_path):
        entry = _parse_history_line(obj, f"{history_path.name}:{lineno}")
        if entry.record_id not in seen:
            raise CorpusError(
                f"{history_path.name}:{lineno}: history row references unknown "
                f"record_id {entry.record_id!r}"
            )
        entries.append(entry)
    return records, entries


# --- custom PHI scrubbing ----------------------------------------------------

@dataclass(frozen=True)
class ScrubSpan:
    """One replacement: [start, end) in the original text."""

    start: int
    end: int
    original: str
    placeholder: str


_MONTH = (
    r"(?:Jan(?:uary)?|Feb(?:ruary)?|Mar(?:ch)?|Apr(?:il)?|May|Jun(?:e)?|Jul(?:y)?"
    r"|Aug(?:ust)?|Sep(?:tember)?|Oct(?:ober)?|Nov(?:ember)?|Dec(?:ember)?)"
)
_NUMERIC_DATE = r"\b\d{1,2}[/-]\d{1,2}[/-]\d{2,4}\b"
_ISO_DATE = r"\b\d{4}-\d{2}-\d{2}\b"
_WORD_DATE = rf"\b{_MONTH}\.?\s+\d{{1,2}}(?:,?\s+\d{{4}})?\b"
_DATE = rf"(?:{_ISO_DATE}|{_NUMERIC_DATE}|{_WORD_DATE})"

# Rules apply in order; dates scrub before initials so a date fragment is never
# left behind for the initial rule to mangle.
_PHI_RULES: list[tuple[re.Pattern[str], str]] = [
    # Provider credential attached to a name placeholder: "NAME, MD" -> "NAME".
    (re.compile(r"NAME\s*,?\s*(?:MD|APRN|CNM)\b\.?"), "NAME"),
    # Date in a date-of-birth context keeps the DOB placeholder.
    (re.compile(rf"(?<=\bDOB[: ])\s*{_DATE}"), " DOB"),
    (re.compile(rf"(?i:(?<=date of birth[: ]))\s*{_DATE}"), " DOB"),
    (re.compile(_DATE), "DATE"),
    # Single-letter initial: "J." but not inside acronyms like "U.S.".
    (re.compile(r"(?<![A-Za-z.])[A-Z]\.(?=\s|$)"), "INITIAL"),
]


def scrub_custom_phi(text: str) -> tuple[str, list[ScrubSpan]]:
    """Replace provider credentials, dates, and initials with fixed placeholders.

    Pure transformation: everything outside the returned spans is byte-identical
    to the input, and scrubbing is idempotent.
    """
    accepted: list[ScrubSpan] = []

    def overlaps(start: int, end: int) -> bool:
        return any(s.start < end and start < s.end for s in accepted)

    for pattern, placeholder in _PHI_RULES:
        for match in pattern.finditer(text):
            start, end = match.span()
            original = match.group()
            # DOB rules keep one leading space out of the replacement.
            repl = placeholder
            if placeholder == " DOB":
                repl = "DOB"
                stripped = original.lstrip()
                start += len(original) - len(stripped)
                original = stripped
            if not overlaps(start, end):
                accepted.append(ScrubSpan(start, end, original, repl))

    accepted.sort(key=lambda s: s.start)
    out: list[str] = []
    cursor = 0
    for span in accepted:
        out.append(text[cursor : span.start])
        out.append(span.placeholder)
        cursor = span.end
    out.append(text[cursor:])
    return "".join(out), accepted


# --- counseling segmentation -------------------------------------------------

DEFAULT_HEADER_PATTERNS: tuple[str, ...] = (
    "assessment and plan",
    "assessment/plan",
    "plan",
)

# A region runs from a matched counseling header to the next header-looking
# line (all-caps, or a short colon-terminated line) or end of note.
_GENERIC_HEADER = re.compile(
    r"^[ \t]*(?:[A-Z][A-Z0-9 /&-]{1,40}:?|[A-Za-z][A-Za-z0-9 /&-]{0,40}:)[ \t]*$",
    re.MULTILINE,
)

_SENTENCE_BREAK = re.compile(r"(?<=[.?!])\s+(?=[A-Z0-9])")


@dataclass(frozen=True)
class SegmenterConfig:
    header_patterns: Sequence[str] = DEFAULT_HEADER_PATTERNS

    def header_regex(self) -> re.Pattern[str]:
        alts = sorted(self.header_patterns, key=len, reverse=True)
        joined = "|".join(re.escape(p) for p in alts)
        return re.compile(rf"^[ \t]*(?:{joined})[ \t]*:?[ \t]*$", re.IGNORECASE | re.MULTILINE)


def _counseling_regions(
    narrative: str, config: SegmenterConfig
) -> list[tuple[str, int, int]]:
    """(matched header text, region start, region end) in document order."""
    header_re = config.header_regex()
    regions: list[tuple[str, int, int]] = []
    for match in header_re.finditer(narrative):
        start = match.end()
        nxt = _GENERIC_HEADER.search(narrative, pos=start)
        end = nxt.start() if nxt else len(narrative)
        regions.append((match.group().strip(), start, end))
    return regions


def split_sentences(text: str, offset: int = 0) -> list[tuple[int, int]]:
    """Spans of trimmed sentences, using terminal punctuation followed by
    whitespace and a capital or digit as the boundary."""
    spans: list[tuple[int, int]] = []
    cursor = 0
    boundaries = [m.start() for m in _SENTENCE_BREAK.finditer(text)]
    for stop in boundaries + [len(text)]:
        chunk = text[cursor:stop]
        stripped = chunk.strip()
        if stripped:
            lead = len(chunk) - len(chunk.lstrip())
            begin = cursor + lead
            spans.append((offset + begin, offset + begin + len(stripped)))
        cursor = stop
    return spans


def segment_counseling(
    record: PatientRecord, config: SegmenterConfig | None = None
) -> list[Segment]:
    """Sentence-level segments of the counseling regions of a note.

    Deterministic for a fixed config; a note without a matching header yields
    an empty list. Segment indices are strictly increasing across regions.
    """
    config = config or SegmenterConfig()
    narrative = record.narrative
    segments: list[Segment] = []
    index = 0
    for header, start, end in _counseling_regions(narrative, config):
        for s, e in split_sentences(narrative[start:end], offset=start):
            segments.append(
                Segment(
                    note_id=record.record_id,
                    index=index,
                    text=narrative[s:e],
                    start=s,
                    end=e,
                    section_header=header,
                )
            )
            index += 1
    return segments
