"""Verbatim grounding audit: text normalization, substring verification,
per-patient flag logs, and review-category aggregation."""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field as dc_field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .extraction import SCHEMA_KEYS, ExtractionResult

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_WS_RUN = re.compile(r"\s+")


def normalize(text: str) -> str:
    """Case-fold, drop ASCII punctuation, collapse whitespace, trim.

    The step order matters: punctuation is removed before whitespace
    collapse, so "C/S." becomes "cs" rather than "c s".
    """
    folded = text.casefold()
    depunct = folded.translate(_PUNCT_TABLE)
    return _WS_RUN.sub(" ", depunct).strip()


class ReviewCategory(str, Enum):
    PARAPHRASE_ACCURATE = "ParaphraseAccurate"
    TYPO_IN_ORIGINAL = "TypoInOriginal"
    TYPO_IN_GENERATED = "TypoInGenerated"
    UNSUPPORTED_ADDITION = "UnsupportedAddition"
    HALLUCINATION = "Hallucination"
    PARTIAL_HALLUCINATION = "PartialHallucination"


class OutcomeGroup(str, Enum):
    VERBATIM_MATCH = "VerbatimMatch"
    NO_HALLUCINATION_VARIANT = "NoHallucinationVariant"
    HALLUCINATION_VARIANT = "HallucinationVariant"


# Review decisions collapse onto the two non-verbatim outcome groups.
REVIEW_TO_GROUP: Mapping[ReviewCategory, OutcomeGroup] = {
    ReviewCategory.PARAPHRASE_ACCURATE: OutcomeGroup.NO_HALLUCINATION_VARIANT,
    ReviewCategory.TYPO_IN_ORIGINAL: OutcomeGroup.NO_HALLUCINATION_VARIANT,
    ReviewCategory.TYPO_IN_GENERATED: OutcomeGroup.NO_HALLUCINATION_VARIANT,
    ReviewCategory.UNSUPPORTED_ADDITION: OutcomeGroup.HALLUCINATION_VARIANT,
    ReviewCategory.HALLUCINATION: OutcomeGroup.HALLUCINATION_VARIANT,
    ReviewCategory.PARTIAL_HALLUCINATION: OutcomeGroup.HALLUCINATION_VARIANT,
}

FLAG_LOG_KEYS = {
    "incision_types": "hallucinated_incision_types",
    "contraindications": "hallucinated_contraindications",
    "previous_delivery_modes": "hallucinated_previous_delivery_modes",
}


class UnresolvedReviewError(ValueError):
    def __init__(self, audit_ids: list[str]) -> None:
        super().__init__(
            "flagged items awaiting review: " + ", ".join(sorted(audit_ids))
        )
        self.audit_ids = list(audit_ids)


@dataclass
class AuditRecord:
    """One extracted string checked against its source note.

    ``config_label`` names the model-prompt configuration that produced the
    extraction, so aggregation can report per-configuration cells.
    """

    record_id: str
    field: str
    item_index: int
    extracted: str
    verbatim_match: bool
    config_label: str = "default"
    review_category: Optional[ReviewCategory] = None

    def __post_init__(self) -> None:
        if self.field not in SCHEMA_KEYS:
            raise ValueError(f"unknown extraction field {self.field!r}")
        if self.verbatim_match and self.review_category is not None:
            raise ValueError("verbatim matches carry no review category")

    @property
    def audit_id(self) -> str:
        return f"{self.config_label}/{self.record_id}/{self.field}/{self.item_index}"

    @property
    def flagged(self) -> bool:
        return not self.verbatim_match

    @property
    def outcome_group(self) -> Optional[OutcomeGroup]:
        """None while a flagged item awaits its review decision."""
        if self.verbatim_match:
            return OutcomeGroup.VERBATIM_MATCH
        if self.review_category is None:
            return None
        return REVIEW_TO_GROUP[self.review_category]

    def resolve(self, decision: ReviewCategory) -> None:
        if self.verbatim_match:
            raise ValueError(f"{self.audit_id} matched verbatim; nothing to review")
        self.review_category = decision


def verify_verbatim(
    result: ExtractionResult,
    narrative: str,
    record_id: str,
    config_label: str = "default",
) -> list[AuditRecord]:
    """One AuditRecord per extracted element; null fields contribute none."""
    normalized_note = normalize(narrative)
    records: list[AuditRecord] = []
    for field_name in SCHEMA_KEYS:
        values = getattr(result, field_name)
        if values is None:
            continue
        for i, extracted in enumerate(values):
            records.append(
                AuditRecord(
                    record_id=record_id,
                    field=field_name,
                    item_index=i,
                    extracted=extracted,
                    verbatim_match=normalize(extracted) in normalized_note,
                    config_label=config_label,
                )
            )
    return records


def flag_log_payload(records: Iterable[AuditRecord]) -> dict[str, list[str]]:
    records = list(records)
    ids = {r.record_id for r in records}
    if len(ids) > 1:
        raise ValueError(f"flag log mixes records: {', '.join(sorted(ids))}")
    payload = {key: [] for key in FLAG_LOG_KEYS.values()}
    for r in records:
        if r.flagged:
            payload[FLAG_LOG_KEYS[r.field]].append(r.extracted)
    return payload


def write_flag_log(records: Iterable[AuditRecord], path: Path) -> dict[str, list[str]]:
    payload = flag_log_payload(records)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return payload


@dataclass
class AuditCell:
    """Outcome distribution for one (model-prompt, field) cell."""

    config_label: str
    field: str
    n_total: int
    group_counts: dict[OutcomeGroup, int]
    fine_counts: dict[ReviewCategory, int] = dc_field(default_factory=dict)

    @property
    def n_flagged(self) -> int:
        return self.n_total - self.group_counts.get(OutcomeGroup.VERBATIM_MATCH, 0)

    @property
    def group_percentages(self) -> dict[OutcomeGroup, float]:
        return {
            g: 100.0 * self.group_counts.get(g, 0) / self.n_total for g in OutcomeGroup
        }

    @property
    def fine_percentages(self) -> dict[ReviewCategory, float]:
        flagged = self.n_flagged
        return {
            c: (100.0 * self.fine_counts.get(c, 0) / flagged if flagged else 0.0)
            for c in ReviewCategory
        }


def aggregate_audit(records: Iterable[AuditRecord]) -> dict[tuple[str, str], AuditCell]:
    """Roll audits up into (model-prompt, field) cells.

    Every flagged record must carry its review decision first; unresolved
    ones abort with their ids.
    """
    records = list(records)
    unresolved = [r.audit_id for r in records if r.outcome_group is None]
    if unresolved:
        raise UnresolvedReviewError(unresolved)

    cells: dict[tuple[str, str], AuditCell] = {}
    for r in records:
        key = (r.config_label, r.field)
        cell = cells.get(key)
        if cell is None:
            cell = cells[key] = AuditCell(
                config_label=r.config_label,
                field=r.field,
                n_total=0,
                group_counts={g: 0 for g in OutcomeGroup},
                fine_counts={c: 0 for c in ReviewCategory},
            )
        cell.n_total += 1
        cell.group_counts[r.outcome_group] += 1
        if r.review_category is not None:
            cell.fine_counts[r.review_category] += 1
    return cells
