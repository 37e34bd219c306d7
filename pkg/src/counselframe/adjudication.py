"""Human-in-the-loop adjudication: review tasks over an append-only event
log, synonym mapping of evidence, and cohort finalization."""

from __future__ import annotations

import difflib
import fcntl
import hashlib
import json
import threading
import time
from dataclasses import dataclass, field as dc_field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .corpus import DeliveryGroup, PatientRecord, split_sentences
from .eligibility import EligibilityCategory, EligibilityOutcome
from .grounding import AuditRecord, OutcomeGroup, ReviewCategory, normalize

EVENT_LOG_VERSION = 1

CANONICAL_CONCEPTS = (
    "low_transverse_evidence",
    "classical_family_evidence",
    "vaginal_birth_evidence",
    "vbac_contraindication_evidence",
    "non_informative",
)

_DEFAULT_ENTRIES = {
    "pfannenstiel": "low_transverse_evidence",
    "ltcs": "low_transverse_evidence",
    "low transverse": "low_transverse_evidence",
    "kerr": "low_transverse_evidence",
    "classical": "classical_family_evidence",
    "vertical": "classical_family_evidence",
    "tshaped": "classical_family_evidence",
    "jshaped": "classical_family_evidence",
    "t incision": "classical_family_evidence",
    "svd": "vaginal_birth_evidence",
    "nsvd": "vaginal_birth_evidence",
    "vaginal delivery": "vaginal_birth_evidence",
    "vbac": "vaginal_birth_evidence",
    "placenta previa": "vbac_contraindication_evidence",
    "prior uterine rupture": "vbac_contraindication_evidence",
    "unremarkable": "non_informative",
}

# Surgical-history phrases that must reach a human, never an automatic rule.
_DEFAULT_AMBIGUOUS = ("myomectomy", "uterine reconstruction", "unknown uterine scar")


class AdjudicationError(Exception):
    pass


class GroundingIntegrityError(AdjudicationError):
    """Evidence cites a string judged to be a hallucination variant."""


class AmbiguousHistoryError(AdjudicationError):
    def __init__(self, record_id: str, markers: Sequence[str]) -> None:
        super().__init__(
            f"record {record_id!r} needs expert review: {', '.join(sorted(markers))}"
        )
        self.record_id = record_id
        self.markers = tuple(markers)


class UnadjudicatedError(AdjudicationError):
    def __init__(self, record_ids: Sequence[str]) -> None:
        super().__init__(
            "records awaiting adjudication: " + ", ".join(sorted(record_ids))
        )
        self.record_ids = tuple(sorted(record_ids))


@dataclass(frozen=True)
class ConceptMap:
    """Normalized surface forms to canonical evidence concepts.

    Keys are stored normalized; lookup scans an evidence string for any
    contained key. ``ambiguous_markers`` name histories that always force
    expert review.
    """

    entries: Mapping[str, str] = dc_field(default_factory=lambda: dict(_DEFAULT_ENTRIES))
    ambiguous_markers: tuple[str, ...] = _DEFAULT_AMBIGUOUS

    def __post_init__(self) -> None:
        unknown = {c for c in self.entries.values() if c not in CANONICAL_CONCEPTS}
        if unknown:
            raise ValueError(f"unknown concepts: {', '.join(sorted(unknown))}")
        unreachable = set(CANONICAL_CONCEPTS) - set(self.entries.values())
        if unreachable:
            raise ValueError(f"unreachable concepts: {', '.join(sorted(unreachable))}")
        for key in self.entries:
            if normalize(key) != key:
                raise ValueError(f"surface form {key!r} is not normalized")

    @property
    def version(self) -> str:
        payload = json.dumps(
            {"entries": dict(sorted(self.entries.items())), "ambiguous": sorted(self.ambiguous_markers)},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]

    def concepts(self, text: str) -> frozenset[str]:
        """All canonical concepts whose surface forms occur in the text."""
        hay = f" {normalize(text)} "
        return frozenset(
            concept
            for surface, concept in self.entries.items()
            if f" {surface} " in hay or surface in hay.strip().split()
        )

    def ambiguity(self, text: str) -> tuple[str, ...]:
        hay = normalize(text)
        return tuple(m for m in self.ambiguous_markers if normalize(m) in hay)

    @classmethod
    def from_file(cls, path: Path) -> "ConceptMap":
        data = json.loads(path.read_text(encoding="utf-8"))
        return cls(
            entries={normalize(k): v for k, v in data.get("entries", {}).items()},
            ambiguous_markers=tuple(data.get("ambiguous_markers", _DEFAULT_AMBIGUOUS)),
        )


class TaskKind(str, Enum):
    FLAG_REVIEW = "flag_review"
    ELIGIBILITY_REVIEW = "eligibility_review"


class TaskStatus(str, Enum):
    PENDING = "pending"
    RESOLVED = "resolved"


class FinalStatus(str, Enum):
    CONFIRMED_ELIGIBLE = "ConfirmedEligible"
    EXCLUDED = "Excluded"


@dataclass(frozen=True)
class ReviewTask:
    task_id: str
    kind: TaskKind
    record_id: str
    extracted: str
    field: str
    item_index: int
    config_label: str
    context: str
    status: TaskStatus = TaskStatus.PENDING
    decision: Optional[str] = None
    reviewer_note: str = ""

    def __post_init__(self) -> None:
        if (self.status is TaskStatus.RESOLVED) != (self.decision is not None):
            raise ValueError("resolved exactly when a decision is present")


@dataclass(frozen=True)
class BasisItem:
    source: str  # structured_rule | verified_extraction | manual_decision
    reference: str
    detail: str


@dataclass(frozen=True)
class FinalEligibility:
    record_id: str
    final_status: FinalStatus
    basis: tuple[BasisItem, ...]
    reason_codes: tuple[str, ...] = ()
    concept_map_version: str = ""

    def __post_init__(self) -> None:
        if self.final_status is FinalStatus.EXCLUDED and not self.reason_codes:
            raise ValueError("exclusion requires at least one reason code")


def context_window(narrative: str, extracted: str, n_sentences: int = 2) -> str:
    """The ±n sentence window around the closest fuzzy match, or the note
    head when the note has no sentences."""
    spans = split_sentences(narrative)
    if not spans:
        return narrative[:240]
    target = normalize(extracted)
    best_i = 0
    best_ratio = -1.0
    for i, (start, end) in enumerate(spans):
        ratio = difflib.SequenceMatcher(None, target, normalize(narrative[start:end])).ratio()
        if ratio > best_ratio:
            best_ratio = ratio
            best_i = i
    window = spans[max(0, best_i - n_sentences) : best_i + n_sentences + 1]
    return " ".join(narrative[start:end] for start, end in window)


def flag_task_id(audit: AuditRecord) -> str:
    return f"flag/{audit.audit_id}"


def eligibility_task_id(record_id: str) -> str:
    return f"elig/{record_id}"


class ReviewStore:
    """Append-only JSONL event log; current state is a fold over events.

    Writes take a process lock on the log file, so one store instance per
    process writes at a time; concurrent resolutions of the same task both
    append and the later event wins.
    """

    def __init__(self, log_path: Path, clock: Callable[[], float] = time.time) -> None:
        self.log_path = Path(log_path)
        self._clock = clock
        self._write_lock = threading.Lock()
        self._events: list[dict] = []
        self._tasks: dict[str, ReviewTask] = {}
        self._finals: dict[str, FinalEligibility] = {}
        if self.log_path.exists():
            self._replay()

    # -- event plumbing -------------------------------------------------

    def _replay(self) -> None:
        with self.log_path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    event = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise AdjudicationError(
                        f"{self.log_path}:{lineno}: corrupt event: {exc}"
                    ) from exc
                if event.get("v") != EVENT_LOG_VERSION:
                    raise AdjudicationError(
                        f"{self.log_path}:{lineno}: unsupported log version {event.get('v')!r}"
                    )
                self._apply(event)
                self._events.append(event)

    def _append(self, event_type: str, payload: dict) -> dict:
        event = {
            "v": EVENT_LOG_VERSION,
            "seq": len(self._events) + 1,
            "ts": self._clock(),
            "event": event_type,
            **payload,
        }
        with self._write_lock:
            with self.log_path.open("a", encoding="utf-8") as fh:
                fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
                try:
                    fh.write(json.dumps(event, sort_keys=True) + "\n")
                    fh.flush()
                finally:
                    fcntl.flock(fh.fileno(), fcntl.LOCK_UN)
            self._apply(event)
            self._events.append(event)
        return event

    def _apply(self, event: dict) -> None:
        kind = event["event"]
        if kind == "task_created":
            t = event["task"]
            task = ReviewTask(
                task_id=t["task_id"],
                kind=TaskKind(t["kind"]),
                record_id=t["record_id"],
                extracted=t["extracted"],
                field=t["field"],
                item_index=t["item_index"],
                config_label=t["config_label"],
                context=t["context"],
            )
            self._tasks.setdefault(task.task_id, task)
        elif kind == "task_resolved":
            task = self._tasks.get(event["task_id"])
            if task is not None:
                self._tasks[task.task_id] = replace(
                    task,
                    status=TaskStatus.RESOLVED,
                    decision=event["decision"],
                    reviewer_note=event.get("reviewer_note", ""),
                )
        elif kind == "adjudication_recorded":
            final = FinalEligibility(
                record_id=event["record_id"],
                final_status=FinalStatus(event["final_status"]),
                basis=tuple(BasisItem(**b) for b in event["basis"]),
                reason_codes=tuple(event.get("reason_codes", ())),
                concept_map_version=event.get("concept_map_version", ""),
            )
            self._finals[final.record_id] = final
        else:
            raise AdjudicationError(f"unknown event type {kind!r}")

    # -- tasks ----------------------------------------------------------

    def enqueue_flags(
        self, audits: Iterable[AuditRecord], narratives: Mapping[str, str]
    ) -> list[ReviewTask]:
        """One pending task per flagged audit; already-tasked audits are
        returned as-is, never duplicated."""
        out: list[ReviewTask] = []
        for audit in audits:
            if not audit.flagged:
                continue
            task_id = flag_task_id(audit)
            existing = self._tasks.get(task_id)
            if existing is not None:
                out.append(existing)
                continue
            context = context_window(narratives.get(audit.record_id, ""), audit.extracted)
            self._append(
                "task_created",
                {
                    "task": {
                        "task_id": task_id,
                        "kind": TaskKind.FLAG_REVIEW.value,
                        "record_id": audit.record_id,
                        "extracted": audit.extracted,
                        "field": audit.field,
                        "item_index": audit.item_index,
                        "config_label": audit.config_label,
                        "context": context,
                    }
                },
            )
            out.append(self._tasks[task_id])
        return out

    def enqueue_eligibility_review(self, record_id: str, reason: str, context: str) -> ReviewTask:
        task_id = eligibility_task_id(record_id)
        if task_id in self._tasks:
            return self._tasks[task_id]
        self._append(
            "task_created",
            {
                "task": {
                    "task_id": task_id,
                    "kind": TaskKind.ELIGIBILITY_REVIEW.value,
                    "record_id": record_id,
                    "extracted": reason,
                    "field": "",
                    "item_index": 0,
                    "config_label": "",
                    "context": context,
                }
            },
        )
        return self._tasks[task_id]

    def tasks(
        self,
        status: Optional[TaskStatus] = None,
        kind: Optional[TaskKind] = None,
        field: Optional[str] = None,
        config_label: Optional[str] = None,
        record_id: Optional[str] = None,
    ) -> list[ReviewTask]:
        out = [
            t
            for t in self._tasks.values()
            if (status is None or t.status is status)
            and (kind is None or t.kind is kind)
            and (field is None or t.field == field)
            and (config_label is None or t.config_label == config_label)
            and (record_id is None or t.record_id == record_id)
        ]
        return sorted(out, key=lambda t: t.task_id)

    def get_task(self, task_id: str) -> ReviewTask:
        try:
            return self._tasks[task_id]
        except KeyError:
            raise AdjudicationError(f"unknown task {task_id!r}") from None

    def resolve_task(self, task_id: str, decision: str, reviewer_note: str = "") -> ReviewTask:
        """Resolve (or re-resolve) a task; every decision stays in the log."""
        task = self.get_task(task_id)
        allowed = ReviewCategory if task.kind is TaskKind.FLAG_REVIEW else FinalStatus
        try:
            allowed(decision)
        except ValueError:
            raise AdjudicationError(
                f"invalid decision {decision!r} for a {task.kind.value} task"
            ) from None
        self._append(
            "task_resolved",
            {"task_id": task_id, "decision": decision, "reviewer_note": reviewer_note},
        )
        return self._tasks[task_id]

    def history(self, task_id: str) -> list[dict]:
        self.get_task(task_id)
        return [
            e
            for e in self._events
            if e.get("task_id") == task_id
            or (e["event"] == "task_created" and e["task"]["task_id"] == task_id)
        ]

    # -- adjudication state ---------------------------------------------

    def record_adjudication(self, final: FinalEligibility) -> None:
        self._append(
            "adjudication_recorded",
            {
                "record_id": final.record_id,
                "final_status": final.final_status.value,
                "basis": [vars(b) for b in final.basis],
                "reason_codes": list(final.reason_codes),
                "concept_map_version": final.concept_map_version,
            },
        )

    def finals(self) -> dict[str, FinalEligibility]:
        return dict(self._finals)

    def pending_count(self) -> int:
        return sum(1 for t in self._tasks.values() if t.status is TaskStatus.PENDING)

    def events(self) -> list[dict]:
        return list(self._events)


def apply_decisions(audits: Iterable[AuditRecord], store: ReviewStore) -> list[AuditRecord]:
    """Copy resolved flag-review decisions back onto audit records."""
    audits = list(audits)
    by_id = {flag_task_id(a): a for a in audits}
    for task in store.tasks(status=TaskStatus.RESOLVED, kind=TaskKind.FLAG_REVIEW):
        audit = by_id.get(task.task_id)
        if audit is not None and audit.flagged:
            audit.review_category = ReviewCategory(task.decision)
    return audits


def adjudicate_eligibility(
    record_id: str,
    structured_category: EligibilityCategory,
    audits: Sequence[AuditRecord],
    concept_map: ConceptMap,
    manual_decision: Optional[FinalStatus] = None,
    manual_reference: str = "",
) -> FinalEligibility:
    """Decide final eligibility for one potentially eligible patient.

    Precedence on conflict: manual decision, then structured data, then
    extracted evidence. Exclusionary concepts beat supportive ones.
    """
    if structured_category is not EligibilityCategory.POTENTIALLY_ELIGIBLE:
        raise AdjudicationError(
            f"record {record_id!r} is {structured_category.value}, not adjudicable"
        )
    for audit in audits:
        if audit.outcome_group is OutcomeGroup.HALLUCINATION_VARIANT:
            raise GroundingIntegrityError(
                f"record {record_id!r}: evidence {audit.extracted!r} is unsupported"
            )
        if audit.outcome_group is None:
            raise GroundingIntegrityError(
                f"record {record_id!r}: evidence {audit.extracted!r} awaits review"
            )

    version = concept_map.version
    if manual_decision is not None:
        basis = (
            BasisItem(
                source="manual_decision",
                reference=manual_reference or eligibility_task_id(record_id),
                detail=manual_decision.value,
            ),
        )
        if manual_decision is FinalStatus.EXCLUDED:
            return FinalEligibility(
                record_id, manual_decision, basis, ("expert_exclusion",), version
            )
        return FinalEligibility(record_id, manual_decision, basis, (), version)

    markers: list[str] = []
    supportive: list[BasisItem] = []
    exclusionary: list[BasisItem] = []
    reasons: list[str] = []
    for audit in audits:
        markers.extend(concept_map.ambiguity(audit.extracted))
        found = concept_map.concepts(audit.extracted)
        item = BasisItem(
            source="verified_extraction",
            reference=audit.audit_id,
            detail=audit.extracted,
        )
        if found & {"classical_family_evidence", "vbac_contraindication_evidence"}:
            exclusionary.append(item)
            reasons.extend(
                sorted(found & {"classical_family_evidence", "vbac_contraindication_evidence"})
            )
        elif found & {"low_transverse_evidence", "vaginal_birth_evidence"}:
            supportive.append(item)
    if markers:
        raise AmbiguousHistoryError(record_id, markers)

    if exclusionary:
        return FinalEligibility(
            record_id,
            FinalStatus.EXCLUDED,
            tuple(exclusionary),
            tuple(dict.fromkeys(reasons)),
            version,
        )
    if supportive:
        return FinalEligibility(
            record_id, FinalStatus.CONFIRMED_ELIGIBLE, tuple(supportive), (), version
        )
    return FinalEligibility(
        record_id,
        FinalStatus.EXCLUDED,
        (),
        ("insufficient documented evidence",),
        version,
    )


@dataclass(frozen=True)
class CohortManifest:
    record_ids: tuple[str, ...]
    n_vbac: int
    n_structural_eligible: int
    n_confirmed: int
    n_excluded: int

    @property
    def total(self) -> int:
        return self.n_vbac + self.n_structural_eligible + self.n_confirmed


def finalize_cohort(
    records: Sequence[PatientRecord],
    outcomes: Sequence[EligibilityOutcome],
    finals: Mapping[str, FinalEligibility],
) -> CohortManifest:
    """Analytic cohort = every VBAC patient, plus RCS patients who are
    structurally eligible or confirmed on review."""
    by_id = {r.record_id: r for r in records}
    included: list[str] = []
    n_vbac = n_structural = n_confirmed = n_excluded = 0
    missing: list[str] = []

    for record in records:
        if record.group is DeliveryGroup.VBAC:
            included.append(record.record_id)
            n_vbac += 1

    for outcome in outcomes:
        record = by_id.get(outcome.record_id)
        if record is None or record.group is not DeliveryGroup.RCS:
            continue
        if outcome.category is EligibilityCategory.ELIGIBLE:
            included.append(outcome.record_id)
            n_structural += 1
        elif outcome.category is EligibilityCategory.POTENTIALLY_ELIGIBLE:
            final = finals.get(outcome.record_id)
            if final is None:
                missing.append(outcome.record_id)
            elif final.final_status is FinalStatus.CONFIRMED_ELIGIBLE:
                included.append(outcome.record_id)
                n_confirmed += 1
            else:
                n_excluded += 1

    if missing:
        raise UnadjudicatedError(missing)
    return CohortManifest(
        record_ids=tuple(sorted(included)),
        n_vbac=n_vbac,
        n_structural_eligible=n_structural,
        n_confirmed=n_confirmed,
        n_excluded=n_excluded,
    )
