"""Zero-shot framing classification of counseling segments."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

from .corpus import DeliveryGroup, Segment
from .extraction import (
    GenerationBackend,
    SchemaViolation,
    _first_balanced_object,
    strip_code_fences,
)

import json


class FramingCategory(str, Enum):
    RISK_FOCUSED = "RiskFocused"
    BENEFIT_FOCUSED = "BenefitFocused"
    DIRECTIVE = "Directive"
    SHARED_DECISION_MAKING = "SharedDecisionMaking"
    BALANCED_INFORMATION = "BalancedInformation"
    STATISTICAL_EVIDENCE = "StatisticalEvidence"
    REASSURING = "Reassuring"
    NOT_COUNSELING = "NotCounseling"

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]


_DISPLAY_NAMES = {
    FramingCategory.RISK_FOCUSED: "Risk-Focused",
    FramingCategory.BENEFIT_FOCUSED: "Benefit-Focused",
    FramingCategory.DIRECTIVE: "Directive",
    FramingCategory.SHARED_DECISION_MAKING: "Shared Decision-Making",
    FramingCategory.BALANCED_INFORMATION: "Balanced Information",
    FramingCategory.STATISTICAL_EVIDENCE: "Statistical Evidence",
    FramingCategory.REASSURING: "Reassuring",
    FramingCategory.NOT_COUNSELING: "Not Counseling",
}

COUNSELING_CATEGORIES = tuple(
    c for c in FramingCategory if c is not FramingCategory.NOT_COUNSELING
)

_CANONICAL = {c.value.casefold(): c for c in FramingCategory}

# Our own category glosses; the answer must be the canonical token.
_DEFINITIONS = """Categories:
- RiskFocused: emphasizes dangers, complications, or adverse outcomes of a delivery option.
- BenefitFocused: emphasizes advantages or favorable outcomes of a delivery option.
- Directive: steers the patient toward one option or records a recommendation.
- SharedDecisionMaking: frames the choice as joint and invites the patient's preferences.
- BalancedInformation: lays out risks and benefits of the options evenhandedly.
- StatisticalEvidence: cites numeric rates, probabilities, or calculator output.
- Reassuring: offers comfort or confidence without arguing for an option.
- NotCounseling: documentation unrelated to counseling about delivery options."""

# The excerpt is always introduced by this delimiter and nothing follows it.
EXCERPT_DELIMITER = "Excerpt:\n"

_PROMPT_TEMPLATE = f"""You label one excerpt from an obstetric note.

{_DEFINITIONS}

Pick the single best-fitting label for the excerpt. Reply with exactly one
JSON object of this shape, where category is one of the tokens above and
rationale is one or two sentences grounded in the excerpt:
{{"category": "...", "rationale": "..."}}

{EXCERPT_DELIMITER}"""

# Stable identifier for this template wording.
PROMPT_TEMPLATE_HASH = hashlib.sha256(_PROMPT_TEMPLATE.encode("utf-8")).hexdigest()[:12]

REPAIR_SUFFIX = (
    "\n\nYour previous reply was not one JSON object with a valid category "
    "token. Reply again with only the JSON object."
)


@dataclass(frozen=True)
class FramingConfig:
    model_name: str
    decode_temperature: float = 0.0
    max_output_tokens: int = 256


@dataclass(frozen=True)
class FramingLabel:
    """A classified segment; ``error`` marks a reject kept out of statistics."""

    segment: Segment
    group: DeliveryGroup
    category: Optional[FramingCategory]
    rationale: str
    model_name: str
    prompt_hash: str = PROMPT_TEMPLATE_HASH
    error: Optional[str] = None

    def __post_init__(self) -> None:
        if self.error is None:
            if self.category is None:
                raise ValueError("non-reject labels need a category")
            if not self.rationale.strip():
                raise ValueError("non-reject labels need a rationale")
        elif self.category is not None:
            raise ValueError("rejects carry no category")

    @property
    def is_reject(self) -> bool:
        return self.error is not None

    @property
    def is_counseling(self) -> bool:
        return self.category in COUNSELING_CATEGORIES


def build_framing_prompt(segment: Segment) -> str:
    if not segment.text.strip():
        raise ValueError("segment text must be non-empty")
    return _PROMPT_TEMPLATE + segment.text


def parse_framing_response(raw: str) -> tuple[FramingCategory, str]:
    try:
        obj = json.loads(_first_balanced_object(strip_code_fences(raw)))
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"invalid JSON: {exc}") from exc
    if not isinstance(obj, dict) or "category" not in obj or "rationale" not in obj:
        raise SchemaViolation("reply must be an object with category and rationale")
    raw_category = obj["category"]
    rationale = obj["rationale"]
    if not isinstance(raw_category, str) or not isinstance(rationale, str):
        raise SchemaViolation("category and rationale must be strings")
    category = _CANONICAL.get(raw_category.strip().casefold())
    if category is None:
        raise SchemaViolation(f"unknown category {raw_category!r}")
    if not rationale.strip():
        raise SchemaViolation("rationale is empty")
    return category, rationale


def classify_segment(
    segment: Segment,
    group: DeliveryGroup,
    backend: GenerationBackend,
    config: FramingConfig,
) -> FramingLabel:
    """Classify with one re-ask; a second schema failure yields a reject
    label rather than an exception, so a run can finish and report it."""
    prompt = build_framing_prompt(segment)
    raw = backend.complete(prompt)
    try:
        category, rationale = parse_framing_response(raw)
    except SchemaViolation:
        raw = backend.complete(prompt + REPAIR_SUFFIX)
        try:
            category, rationale = parse_framing_response(raw)
        except SchemaViolation as exc:
            return FramingLabel(
                segment=segment,
                group=group,
                category=None,
                rationale="",
                model_name=config.model_name,
                error=str(exc),
            )
    return FramingLabel(
        segment=segment,
        group=group,
        category=category,
        rationale=rationale,
        model_name=config.model_name,
    )


@dataclass(frozen=True)
class CoverageStats:
    """Counseling-relevant coverage per delivery group."""

    total: dict[DeliveryGroup, int]
    counseling: dict[DeliveryGroup, int]
    rejects: dict[DeliveryGroup, int]

    def fraction(self, group: DeliveryGroup) -> float:
        total = self.total.get(group, 0)
        return self.counseling.get(group, 0) / total if total else 0.0


def filter_counseling(labels: Iterable[FramingLabel]) -> tuple[list[FramingLabel], CoverageStats]:
    """Drop NotCounseling and rejected labels; report per-group coverage."""
    labels = list(labels)
    total = {g: 0 for g in DeliveryGroup}
    counseling = {g: 0 for g in DeliveryGroup}
    rejects = {g: 0 for g in DeliveryGroup}
    kept: list[FramingLabel] = []
    for label in labels:
        total[label.group] += 1
        if label.is_reject:
            rejects[label.group] += 1
        elif label.is_counseling:
            counseling[label.group] += 1
            kept.append(label)
    return kept, CoverageStats(total=total, counseling=counseling, rejects=rejects)
