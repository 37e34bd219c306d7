"""Guideline rule engine: five-category trial-of-labor eligibility from
structured pregnancy history."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from typing import Iterable, Optional, Sequence

from .corpus import DeliveryMode, IncisionType, PatientRecord, PregnancyHistoryEntry

# 18 months expressed as a fixed day threshold (365.25 * 1.5, rounded) so
# interval comparisons are reproducible.
INTERVAL_THRESHOLD_DAYS = 548

CLASSICAL_FAMILY = frozenset(
    {IncisionType.CLASSICAL, IncisionType.T_SHAPED, IncisionType.J_SHAPED}
)


class EligibilityCategory(str, Enum):
    ELIGIBLE = "Eligible"
    POTENTIALLY_ELIGIBLE = "PotentiallyEligible"
    LIMITED_ELIGIBILITY = "LimitedEligibility"
    CONTRAINDICATED = "Contraindicated"
    UNKNOWN = "Unknown"


class IntervalOrderingError(ValueError):
    """Current delivery predates the most recent prior delivery."""


@dataclass(frozen=True)
class EligibilityInputs:
    """Structured facts the classifier sees for one patient.

    ``has_successful_vbac`` is the post-cesarean vaginal birth flag; it also
    implies ``has_prior_vaginal_birth``.
    """

    n_prior_cesareans: int
    incision_types: tuple[IncisionType, ...]
    has_prior_vaginal_birth: bool
    has_successful_vbac: bool = False
    interdelivery_interval_days: Optional[int] = None
    has_history_data: bool = True

    def __post_init__(self) -> None:
        if self.n_prior_cesareans < 0:
            raise ValueError("n_prior_cesareans must be >= 0")
        if self.interdelivery_interval_days is not None and self.interdelivery_interval_days < 0:
            raise ValueError("interdelivery interval must be non-negative")
        if not self.has_history_data and (self.n_prior_cesareans or self.incision_types):
            raise ValueError("inputs without history data cannot carry history facts")
        if self.has_successful_vbac and not self.has_prior_vaginal_birth:
            raise ValueError("successful VBAC implies a prior vaginal birth")

    @property
    def n_unknown_incisions(self) -> int:
        known = sum(1 for i in self.incision_types if i is not IncisionType.UNKNOWN)
        # Undocumented cesareans beyond the recorded incisions count as unknown.
        return len(self.incision_types) - known + max(
            0, self.n_prior_cesareans - len(self.incision_types)
        )

    @property
    def all_low_transverse(self) -> bool:
        return (
            self.n_prior_cesareans >= 1
            and len(self.incision_types) >= self.n_prior_cesareans
            and all(i is IncisionType.LOW_TRANSVERSE for i in self.incision_types)
        )

    @property
    def interval_at_least_threshold(self) -> bool:
        # Unknown interval classifies as satisfying the threshold; callers
        # record the uncertainty separately.
        return (
            self.interdelivery_interval_days is None
            or self.interdelivery_interval_days >= INTERVAL_THRESHOLD_DAYS
        )


def compute_interdelivery_interval(current_delivery: date, last_prior_delivery: date) -> int:
    """Exact day count between the current and most recent prior delivery."""
    days = (current_delivery - last_prior_delivery).days
    if days < 0:
        raise IntervalOrderingError(
            f"current delivery {current_delivery} precedes prior delivery {last_prior_delivery}"
        )
    return days


def derive_inputs(
    record: PatientRecord, history: Sequence[PregnancyHistoryEntry]
) -> EligibilityInputs:
    """Fold a patient's prior-delivery rows into classifier inputs.

    History rows are the deliveries before the current one; the current
    delivery date, when present on the record, anchors the interval.
    """
    entries = [e for e in history if e.record_id == record.record_id]
    if not entries:
        return EligibilityInputs(
            n_prior_cesareans=0,
            incision_types=(),
            has_prior_vaginal_birth=False,
            has_history_data=False,
        )

    cesareans = [e for e in entries if e.mode is DeliveryMode.CESAREAN]
    vaginal = [e for e in entries if e.mode is DeliveryMode.VAGINAL]

    # Successful VBAC = a vaginal birth dated after some cesarean.
    dated_cs = [e.delivery_date for e in cesareans if e.delivery_date is not None]
    successful_vbac = bool(
        dated_cs
        and any(
            v.delivery_date is not None and v.delivery_date > min(dated_cs) for v in vaginal
        )
    )

    interval: Optional[int] = None
    dated = [e.delivery_date for e in entries if e.delivery_date is not None]
    if dated and record.delivery_date is not None:
        interval = compute_interdelivery_interval(record.delivery_date, max(dated))

    return EligibilityInputs(
        n_prior_cesareans=len(cesareans),
        incision_types=tuple(e.incision_type for e in cesareans),
        has_prior_vaginal_birth=bool(vaginal),
        has_successful_vbac=successful_vbac,
        interdelivery_interval_days=interval,
    )


def classify_structured(inputs: EligibilityInputs) -> EligibilityCategory:
    """Apply the guideline rules in fixed order; total over valid inputs."""
    if not inputs.has_history_data or inputs.n_prior_cesareans == 0:
        # No cesarean history to assess.
        return EligibilityCategory.UNKNOWN

    if any(i in CLASSICAL_FAMILY for i in inputs.incision_types):
        return EligibilityCategory.CONTRAINDICATED

    short_interval = (
        inputs.interdelivery_interval_days is not None
        and inputs.interdelivery_interval_days < INTERVAL_THRESHOLD_DAYS
    )
    if (inputs.n_prior_cesareans > 2 and not inputs.has_successful_vbac) or short_interval:
        return EligibilityCategory.LIMITED_ELIGIBILITY

    # Interval is >= threshold or unknown from here on.
    if inputs.n_prior_cesareans <= 2 and inputs.all_low_transverse:
        return EligibilityCategory.ELIGIBLE
    if inputs.n_prior_cesareans > 2 and inputs.has_successful_vbac:
        return EligibilityCategory.ELIGIBLE
    if inputs.n_unknown_incisions > 0 and inputs.has_prior_vaginal_birth:
        # Undocumented incision with a prior vaginal birth, which strongly
        # suggests a low-transverse scar.
        return EligibilityCategory.ELIGIBLE

    return EligibilityCategory.POTENTIALLY_ELIGIBLE


@dataclass(frozen=True)
class EligibilityOutcome:
    record_id: str
    category: EligibilityCategory
    inputs: EligibilityInputs

    @property
    def interval_unknown(self) -> bool:
        return (
            self.inputs.has_history_data
            and self.inputs.interdelivery_interval_days is None
        )


def classify_patient(
    record: PatientRecord, history: Sequence[PregnancyHistoryEntry]
) -> EligibilityOutcome:
    inputs = derive_inputs(record, history)
    return EligibilityOutcome(record.record_id, classify_structured(inputs), inputs)


# Condition rows of the cross-tab, in report order.
CONDITION_ROWS = (
    "1 prior CS",
    "2 prior CS",
    ">=3 prior CS",
    "Low-transverse incision",
    "Unknown incision",
    "Low-transverse + unknown",
    "Classical/T/J incision",
    "Interdelivery interval <18 mo",
    "Interdelivery interval >=18 mo",
)


def _incision_row(inputs: EligibilityInputs) -> str:
    if any(i in CLASSICAL_FAMILY for i in inputs.incision_types):
        return "Classical/T/J incision"
    n_unknown = inputs.n_unknown_incisions
    n_lt = sum(1 for i in inputs.incision_types if i is IncisionType.LOW_TRANSVERSE)
    if n_unknown and n_lt:
        return "Low-transverse + unknown"
    if n_unknown:
        return "Unknown incision"
    return "Low-transverse incision"


@dataclass
class CohortSummary:
    counts: dict[EligibilityCategory, int]
    percentages: dict[EligibilityCategory, float]
    condition_crosstab: dict[str, dict[EligibilityCategory, int]]
    n_interval_unknown: int
    total: int


def summarize_cohort(outcomes: Iterable[EligibilityOutcome]) -> CohortSummary:
    """Category distribution plus the condition-by-category cross-tab.

    The cross-tab covers the four assessable categories; interval-unknown
    patients sit in the >=18 mo row (that is how they classify) and are
    tallied separately.
    """
    outcomes = list(outcomes)
    seen: set[str] = set()
    for o in outcomes:
        if o.record_id in seen:
            raise ValueError(f"multiple categories for record {o.record_id!r}")
        seen.add(o.record_id)

    counts = Counter(o.category for o in outcomes)
    total = len(outcomes)
    percentages = {
        cat: (100.0 * counts.get(cat, 0) / total if total else 0.0)
        for cat in EligibilityCategory
    }

    crosstab_cats = [c for c in EligibilityCategory if c is not EligibilityCategory.UNKNOWN]
    crosstab: dict[str, dict[EligibilityCategory, int]] = {
        row: {c: 0 for c in crosstab_cats} for row in CONDITION_ROWS
    }
    n_interval_unknown = 0
    for o in outcomes:
        if o.category is EligibilityCategory.UNKNOWN:
            continue
        if o.interval_unknown:
            n_interval_unknown += 1
        n = o.inputs.n_prior_cesareans
        cs_row = "1 prior CS" if n == 1 else "2 prior CS" if n == 2 else ">=3 prior CS"
        crosstab[cs_row][o.category] += 1
        crosstab[_incision_row(o.inputs)][o.category] += 1
        interval_row = (
            "Interdelivery interval >=18 mo"
            if o.inputs.interval_at_least_threshold
            else "Interdelivery interval <18 mo"
        )
        crosstab[interval_row][o.category] += 1

    return CohortSummary(
        counts={c: counts.get(c, 0) for c in EligibilityCategory},
        percentages=percentages,
        condition_crosstab=crosstab,
        n_interval_unknown=n_interval_unknown,
        total=total,
    )
