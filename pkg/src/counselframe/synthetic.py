"""Seeded synthetic corpus with a ground-truth sidecar, plus deterministic
offline backends that echo planted evidence.

Everything here exists so the pipeline can run hermetically end to end;
nothing in this module touches a network.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field as dc_field
from datetime import date, timedelta
from pathlib import Path
from typing import Mapping, Optional

from .adjudication import ReviewStore, TaskKind, TaskStatus
from .corpus import DeliveryGroup, split_sentences
from .eligibility import EligibilityCategory
from .extraction import NOTE_DELIMITER, REPAIR_SUFFIX, SCHEMA_KEYS, ExtractionResult
from .framing import EXCERPT_DELIMITER, FramingCategory
from .framing import REPAIR_SUFFIX as FRAMING_REPAIR_SUFFIX

SIDECAR_VERSION = 1

# What the extraction echo recognizes, per output field.
INCISION_MARKERS = (
    "low transverse",
    "pfannenstiel",
    "classical",
    "t-shaped",
    "j-shaped",
    "hysterotomy",
    "vertical uterine",
)
CONTRAINDICATION_MARKERS = ("placenta previa", "uterine rupture", "myomectomy")
MODE_MARKERS = ("vaginal delivery", "cesarean section", "hx of cesarean")

# The echo's one fabrication: emitted whenever a note documents no incision.
UNSUPPORTED_INCISION = "incision type not specified"

_HX_WORD = re.compile(r"\b[Hh]x\b")


def paraphrase_hx(sentence: str) -> str:
    """The deterministic paraphrase the echo applies: hx becomes history."""
    return _HX_WORD.sub(
        lambda m: "History" if m.group(0)[0] == "H" else "history", sentence
    )


FRAMING_CUES: dict[FramingCategory, tuple[str, ...]] = {
    FramingCategory.RISK_FOCUSED: (
        "Risks of repeat cesarean include bleeding, infection, and injury to nearby organs.",
        "Risks of TOLAC include rupture of the uterine scar with possible harm to the baby.",
        "We reviewed the risks of attempting a trial of labor, including the possibility of emergency cesarean.",
    ),
    FramingCategory.BENEFIT_FOCUSED: (
        "Benefits of a successful VBAC include a shorter recovery and avoiding major surgery.",
        "Benefits of a scheduled cesarean include a planned timeline and avoiding labor.",
    ),
    FramingCategory.DIRECTIVE: (
        "I recommend proceeding with a scheduled repeat cesarean delivery.",
        "I recommend a trial of labor given her favorable history.",
    ),
    FramingCategory.SHARED_DECISION_MAKING: (
        "We discussed both options at length and she will weigh her preferences before we decide together.",
        "Counseled that the choice between TOLAC and repeat cesarean is hers, and we will decide together at her next visit.",
    ),
    FramingCategory.BALANCED_INFORMATION: (
        "We reviewed the risks and benefits of both TOLAC and repeat cesarean in detail.",
        "Discussed the risks and benefits of both delivery approaches without favoring either.",
    ),
    FramingCategory.STATISTICAL_EVIDENCE: (
        "The MFMU calculator estimates a 72% chance of successful VBAC.",
        "Her predicted VBAC success probability is 68% by the calculator.",
    ),
    FramingCategory.REASSURING: (
        "I reassured her that our team will support whichever plan she chooses.",
        "She was reassured that close monitoring will continue throughout labor.",
    ),
    FramingCategory.NOT_COUNSELING: (
        "Discharge home with routine follow-up.",
        "Return precautions reviewed and follow-up scheduled in clinic.",
        "Continue prenatal vitamins daily.",
    ),
}

# Checked in order; first hit wins. "risks and benefits" must precede the
# bare "risks of" / "benefits of" checks.
_CUE_MARKERS: tuple[tuple[str, FramingCategory], ...] = (
    ("risks and benefits", FramingCategory.BALANCED_INFORMATION),
    ("calculator", FramingCategory.STATISTICAL_EVIDENCE),
    ("%", FramingCategory.STATISTICAL_EVIDENCE),
    ("risks of", FramingCategory.RISK_FOCUSED),
    ("risk of", FramingCategory.RISK_FOCUSED),
    ("benefits of", FramingCategory.BENEFIT_FOCUSED),
    ("recommend", FramingCategory.DIRECTIVE),
    ("decide together", FramingCategory.SHARED_DECISION_MAKING),
    ("reassur", FramingCategory.REASSURING),
)


def classify_cue(text: str) -> FramingCategory:
    """Keyword routing shared by the generator and the framing echo."""
    lowered = text.casefold()
    for marker, category in _CUE_MARKERS:
        if marker in lowered:
            return category
    return FramingCategory.NOT_COUNSELING


class MockExtractionBackend:
    """Echoes note sentences that mention a recognized phrase.

    Two deliberate, deterministic deviations model the failure modes the
    audit must catch: "hx" is paraphrased to "history", and a note without
    incision evidence yields an invented "incision type not specified".
    """

    model_name = "echo-extract"

    def complete(self, prompt: str) -> str:
        narrative = prompt.split(NOTE_DELIMITER, 1)[1]
        if narrative.endswith(REPAIR_SUFFIX):
            narrative = narrative[: -len(REPAIR_SUFFIX)]
        fields: dict[str, list[str]] = {key: [] for key in SCHEMA_KEYS}
        for start, end in split_sentences(narrative):
            sentence = narrative[start:end]
            lowered = sentence.casefold()
            echoed = paraphrase_hx(sentence)
            if any(m in lowered for m in INCISION_MARKERS):
                fields["incision_types"].append(echoed)
            if any(m in lowered for m in CONTRAINDICATION_MARKERS):
                fields["contraindications"].append(echoed)
            if any(m in lowered for m in MODE_MARKERS):
                fields["previous_delivery_modes"].append(echoed)
        if not fields["incision_types"]:
            fields["incision_types"].append(UNSUPPORTED_INCISION)
        return json.dumps({key: fields[key] or None for key in SCHEMA_KEYS})


class MockFramingBackend:
    """Labels an excerpt by the same cue markers the generator plants."""

    model_name = "echo-frame"

    def complete(self, prompt: str) -> str:
        excerpt = prompt.split(EXCERPT_DELIMITER, 1)[1]
        if excerpt.endswith(FRAMING_REPAIR_SUFFIX):
            excerpt = excerpt[: -len(FRAMING_REPAIR_SUFFIX)]
        category = classify_cue(excerpt)
        return json.dumps(
            {
                "category": category.value,
                "rationale": f"The excerpt fits the {category.display_name} pattern.",
            }
        )


_DEFAULT_ELIGIBILITY_MIX: dict[EligibilityCategory, float] = {
    EligibilityCategory.ELIGIBLE: 0.30,
    EligibilityCategory.POTENTIALLY_ELIGIBLE: 0.35,
    EligibilityCategory.LIMITED_ELIGIBILITY: 0.15,
    EligibilityCategory.CONTRAINDICATED: 0.10,
    EligibilityCategory.UNKNOWN: 0.10,
}

_DEFAULT_FRAMING_MIX: dict[DeliveryGroup, dict[FramingCategory, float]] = {
    DeliveryGroup.RCS: {
        FramingCategory.RISK_FOCUSED: 0.50,
        FramingCategory.BALANCED_INFORMATION: 0.05,
        FramingCategory.BENEFIT_FOCUSED: 0.03,
        FramingCategory.DIRECTIVE: 0.08,
        FramingCategory.REASSURING: 0.03,
        FramingCategory.SHARED_DECISION_MAKING: 0.05,
        FramingCategory.STATISTICAL_EVIDENCE: 0.06,
        FramingCategory.NOT_COUNSELING: 0.20,
    },
    DeliveryGroup.VBAC: {
        FramingCategory.RISK_FOCUSED: 0.38,
        FramingCategory.BALANCED_INFORMATION: 0.07,
        FramingCategory.BENEFIT_FOCUSED: 0.09,
        FramingCategory.DIRECTIVE: 0.04,
        FramingCategory.REASSURING: 0.05,
        FramingCategory.SHARED_DECISION_MAKING: 0.11,
        FramingCategory.STATISTICAL_EVIDENCE: 0.08,
        FramingCategory.NOT_COUNSELING: 0.18,
    },
}

# Potentially eligible sub-plots, cycled so small corpora still cover all.
_PE_SCENARIOS = (
    "confirm_low_transverse",
    "exclude_classical",
    "insufficient",
    "confirm_vaginal",
    "exclude_contraindication",
)

_EVIDENCE = {
    "eligible_lt": "Prior low transverse cesarean section documented in the operative record.",
    "eligible_lt_alt": "Records confirm a low transverse hysterotomy at the prior delivery.",
    "pe_confirm": "Operative note describes a Pfannenstiel skin incision with low transverse hysterotomy.",
    "pe_vaginal": "She had a spontaneous vaginal delivery prior to her first cesarean.",
    "pe_classical": "Operative report documents a classical vertical uterine incision.",
    "pe_contra": "History significant for placenta previa in the prior pregnancy.",
    "contra_note": "Prior classical cesarean section noted at an outside hospital.",
    "mode_clean": "Prior delivery was by cesarean section at term.",
    "mode_hx": "Hx of cesarean section with an uncomplicated postoperative course.",
    "unknown_note": "Patient reports one prior cesarean; outside records have been requested.",
}


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    n_vbac: int = 20
    n_rcs: int = 40
    seed: int = 7
    eligibility_mix: Mapping[EligibilityCategory, float] = dc_field(
        default_factory=lambda: dict(_DEFAULT_ELIGIBILITY_MIX)
    )
    framing_mix: Mapping[DeliveryGroup, Mapping[FramingCategory, float]] = dc_field(
        default_factory=lambda: {g: dict(m) for g, m in _DEFAULT_FRAMING_MIX.items()}
    )

    def __post_init__(self) -> None:
        if self.n_vbac < 0 or self.n_rcs < 0:
            raise ValueError("patient counts must be non-negative")


@dataclass(frozen=True)
class GeneratedCorpus:
    notes_path: Path
    history_path: Path
    sidecar_path: Path


def _allocate(n: int, weights: Mapping[EligibilityCategory, float]) -> dict[EligibilityCategory, int]:
    """Largest-remainder apportionment in fixed category order."""
    order = [c for c in EligibilityCategory if weights.get(c, 0.0) > 0]
    total_weight = sum(weights[c] for c in order)
    if n and (not order or total_weight <= 0):
        raise ValueError("eligibility mix has no positive weights")
    shares = {c: n * weights[c] / total_weight for c in order} if order else {}
    counts = {c: int(shares[c]) for c in order}
    leftover = n - sum(counts.values())
    for c in sorted(order, key=lambda c: shares[c] - counts[c], reverse=True)[:leftover]:
        counts[c] += 1
    return counts


def _demographics(rng: random.Random) -> str:
    visit = date(2021, 1, 1) + timedelta(days=rng.randrange(0, 300))
    dob = date(1985, 1, 1) + timedelta(days=rng.randrange(0, 4000))
    return (
        f"Seen by NAME, MD in labor triage on "
        f"{visit.month:02d}/{visit.day:02d}/{visit.year}. "
        f"DOB: {dob.month:02d}/{dob.day:02d}/{dob.year}."
    )


def _note_text(demographics: str, history_sentences: list[str], plan_sentences: list[str]) -> str:
    # The intro sentence keeps the section label out of the first evidence
    # sentence when the note is split on sentence boundaries.
    history_block = " ".join(["The following obstetric history was obtained."] + history_sentences)
    plan_block = " ".join(plan_sentences)
    return (
        "OB ADMISSION NOTE\n\n"
        f"{demographics}\n\n"
        "HISTORY:\n"
        f"{history_block}\n\n"
        "ASSESSMENT AND PLAN:\n"
        f"{plan_block}\n"
    )


def _plan_for(group: DeliveryGroup, spec: SyntheticCorpusSpec, rng: random.Random) -> list[dict]:
    mix = spec.framing_mix[group]
    categories = [c for c in FramingCategory if mix.get(c, 0.0) > 0]
    weights = [mix[c] for c in categories]
    n_cues = rng.randrange(3, 8)
    cues: list[dict] = []
    for category in rng.choices(categories, weights=weights, k=n_cues):
        text = rng.choice(FRAMING_CUES[category])
        cues.append({"category": category.value, "text": text})
    closer = FRAMING_CUES[FramingCategory.NOT_COUNSELING][0]
    cues.append({"category": FramingCategory.NOT_COUNSELING.value, "text": closer})
    return cues


def _history_rows(
    record_id: str,
    category: EligibilityCategory,
    delivery: date,
    rng: random.Random,
) -> list[dict]:
    def row(mode: str, incision: Optional[str], when: Optional[date]) -> dict:
        out: dict = {"record_id": record_id, "mode": mode}
        if incision is not None:
            out["incision_type"] = incision
        if when is not None:
            out["delivery_date"] = when.isoformat()
        return out

    if category is EligibilityCategory.UNKNOWN:
        return []
    long_gap = delivery - timedelta(days=rng.randrange(600, 1400))
    if category is EligibilityCategory.ELIGIBLE:
        n = rng.choice((1, 2))
        rows = [row("cesarean", "low_transverse", long_gap)]
        if n == 2:
            rows.append(row("cesarean", "low_transverse", long_gap - timedelta(days=420)))
        return rows
    if category is EligibilityCategory.POTENTIALLY_ELIGIBLE:
        if rng.random() < 0.5:
            return [row("cesarean", None, long_gap)]
        return [
            row("cesarean", "low_transverse", long_gap),
            row("cesarean", None, long_gap - timedelta(days=420)),
        ]
    if category is EligibilityCategory.LIMITED_ELIGIBILITY:
        if rng.random() < 0.5:
            short_gap = delivery - timedelta(days=rng.randrange(120, 500))
            return [row("cesarean", "low_transverse", short_gap)]
        return [
            row("cesarean", "low_transverse", long_gap),
            row("cesarean", "low_transverse", long_gap - timedelta(days=420)),
            row("cesarean", "low_transverse", long_gap - timedelta(days=840)),
        ]
    # Contraindicated: a classical scar, interval immaterial.
    return [row("cesarean", "classical", long_gap)]


def _pe_story(scenario: str) -> tuple[list[str], list[dict], list[dict], Optional[str]]:
    """History sentences, verbatim plants, expected flags, and the expected
    final status for one potentially eligible sub-plot."""
    clean = _EVIDENCE["mode_clean"]
    plants = [{"field": "previous_delivery_modes", "text": clean}]
    sentences = [clean]
    flags: list[dict] = []
    if scenario == "confirm_low_transverse":
        sentences = [_EVIDENCE["pe_confirm"], _EVIDENCE["mode_hx"], clean]
        plants = [
            {"field": "incision_types", "text": _EVIDENCE["pe_confirm"]},
            {"field": "previous_delivery_modes", "text": clean},
        ]
        flags = [
            {
                "field": "previous_delivery_modes",
                "extracted": paraphrase_hx(_EVIDENCE["mode_hx"]),
                "review_category": "ParaphraseAccurate",
            }
        ]
        return sentences, plants, flags, "ConfirmedEligible"
    if scenario == "exclude_classical":
        sentences = [_EVIDENCE["pe_classical"], _EVIDENCE["mode_hx"], clean]
        plants = [
            {"field": "incision_types", "text": _EVIDENCE["pe_classical"]},
            {"field": "previous_delivery_modes", "text": clean},
        ]
        flags = [
            {
                "field": "previous_delivery_modes",
                "extracted": paraphrase_hx(_EVIDENCE["mode_hx"]),
                "review_category": "ParaphraseAccurate",
            }
        ]
        return sentences, plants, flags, "Excluded"
    unsupported = {
        "field": "incision_types",
        "extracted": UNSUPPORTED_INCISION,
        "review_category": "UnsupportedAddition",
    }
    if scenario == "confirm_vaginal":
        sentences = [_EVIDENCE["pe_vaginal"], clean]
        plants = [
            {"field": "previous_delivery_modes", "text": _EVIDENCE["pe_vaginal"]},
            {"field": "previous_delivery_modes", "text": clean},
        ]
        return sentences, plants, [unsupported], "ConfirmedEligible"
    if scenario == "exclude_contraindication":
        sentences = [_EVIDENCE["pe_contra"], clean]
        plants = [
            {"field": "contraindications", "text": _EVIDENCE["pe_contra"]},
            {"field": "previous_delivery_modes", "text": clean},
        ]
        return sentences, plants, [unsupported], "Excluded"
    # insufficient: a cesarean is documented but nothing about the scar.
    return sentences, plants, [unsupported], "Excluded"


def _history_sentences(category: EligibilityCategory, rng: random.Random) -> tuple[list[str], list[dict]]:
    if category is EligibilityCategory.ELIGIBLE:
        lead = rng.choice((_EVIDENCE["eligible_lt"], _EVIDENCE["eligible_lt_alt"]))
        return [lead], [{"field": "incision_types", "text": lead}]
    if category is EligibilityCategory.CONTRAINDICATED:
        return [_EVIDENCE["contra_note"]], [
            {"field": "incision_types", "text": _EVIDENCE["contra_note"]}
        ]
    if category is EligibilityCategory.UNKNOWN:
        return [_EVIDENCE["unknown_note"]], []
    return [_EVIDENCE["mode_clean"]], [
        {"field": "previous_delivery_modes", "text": _EVIDENCE["mode_clean"]}
    ]


def generate_synthetic_corpus(spec: SyntheticCorpusSpec, out_dir: Path) -> GeneratedCorpus:
    """Write notes.jsonl, history.jsonl, and ground_truth.json.

    Deterministic for a given spec: the single seeded generator is consumed
    in a fixed patient order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = random.Random(spec.seed)

    note_lines: list[str] = []
    history_lines: list[str] = []
    patients: dict[str, dict] = {}
    pe_cycle = 0

    plan: list[tuple[str, DeliveryGroup, EligibilityCategory]] = []
    for i in range(spec.n_vbac):
        plan.append((f"vbac{i + 1:04d}", DeliveryGroup.VBAC, EligibilityCategory.ELIGIBLE))
    rcs_counts = _allocate(spec.n_rcs, spec.eligibility_mix)
    i = 0
    for category in EligibilityCategory:
        for _ in range(rcs_counts.get(category, 0)):
            i += 1
            plan.append((f"rcs{i:04d}", DeliveryGroup.RCS, category))

    for record_id, group, category in plan:
        delivery = date(2021, 3, 1) + timedelta(days=rng.randrange(0, 240))
        truth: dict = {
            "group": group.value,
            "eligibility_category": category.value,
            "scenario": None,
            "planted_evidence": [],
            "expected_flags": [],
            "expected_adjudication": None,
        }

        if group is DeliveryGroup.RCS and category is EligibilityCategory.POTENTIALLY_ELIGIBLE:
            scenario = _PE_SCENARIOS[pe_cycle % len(_PE_SCENARIOS)]
            pe_cycle += 1
            sentences, plants, flags, final = _pe_story(scenario)
            truth.update(
                scenario=scenario,
                planted_evidence=plants,
                expected_flags=flags,
                expected_adjudication=final,
            )
        else:
            sentences, plants = _history_sentences(category, rng)
            truth["planted_evidence"] = plants

        cues = _plan_for(group, spec, rng)
        truth["framing_cues"] = cues

        note_lines.append(
            json.dumps(
                {
                    "record_id": record_id,
                    "narrative": _note_text(
                        _demographics(rng), sentences, [c["text"] for c in cues]
                    ),
                    "group": group.value,
                    "prior_cesarean": True,
                    "age": 22 + rng.randrange(0, 18),
                    "bmi": round(20 + rng.random() * 18, 1),
                    "delivery_date": delivery.isoformat(),
                },
                sort_keys=True,
            )
        )
        for row in _history_rows(record_id, category, delivery, rng):
            history_lines.append(json.dumps(row, sort_keys=True))
        patients[record_id] = truth

    notes_path = out_dir / "notes.jsonl"
    history_path = out_dir / "history.jsonl"
    sidecar_path = out_dir / "ground_truth.json"
    notes_path.write_text("".join(line + "\n" for line in note_lines), encoding="utf-8")
    history_path.write_text("".join(line + "\n" for line in history_lines), encoding="utf-8")
    sidecar_path.write_text(
        json.dumps(
            {"version": SIDECAR_VERSION, "seed": spec.seed, "patients": patients},
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    return GeneratedCorpus(notes_path, history_path, sidecar_path)


def load_sidecar(path: Path) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("version") != SIDECAR_VERSION:
        raise ValueError(f"unsupported sidecar version {data.get('version')!r}")
    return data


def auto_resolve_tasks(store: ReviewStore, sidecar: dict) -> int:
    """Resolve every pending task from the sidecar's recorded truth.

    Strict by design: a pending task the sidecar cannot explain raises, so
    this policy can never paper over unexpected pipeline behavior.
    """
    resolved = 0
    for task in store.tasks(status=TaskStatus.PENDING):
        patient = sidecar["patients"].get(task.record_id)
        if patient is None:
            raise ValueError(f"sidecar has no patient {task.record_id!r}")
        if task.kind is TaskKind.FLAG_REVIEW:
            match = next(
                (
                    f
                    for f in patient["expected_flags"]
                    if f["field"] == task.field and f["extracted"] == task.extracted
                ),
                None,
            )
            if match is None:
                raise ValueError(
                    f"sidecar does not explain flag {task.task_id!r} ({task.extracted!r})"
                )
            decision = match["review_category"]
        else:
            decision = patient.get("expected_adjudication")
            if decision is None:
                raise ValueError(f"sidecar has no adjudication for {task.record_id!r}")
        store.resolve_task(task.task_id, decision, reviewer_note="auto-resolved from sidecar")
        resolved += 1
    return resolved


def missing_planted_evidence(
    sidecar: dict, extractions: Mapping[str, ExtractionResult]
) -> list[tuple[str, str, str]]:
    """Planted (record, field, text) triples absent from the extraction
    output, checked only for records that were actually extracted."""
    misses: list[tuple[str, str, str]] = []
    for record_id, result in extractions.items():
        truth = sidecar["patients"].get(record_id, {})
        for plant in truth.get("planted_evidence", []):
            values = getattr(result, plant["field"]) or ()
            if plant["text"] not in values:
                misses.append((record_id, plant["field"], plant["text"]))
    return misses
