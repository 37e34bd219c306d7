"""Stage orchestration: resumable, file-driven execution from ingest to
statistics.

Every stage reads only the persisted outputs of earlier stages and writes
its own interchange files under the output directory, so any stage can be
re-run (or reimplemented) independently and a run can resume where it
stopped.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Callable, Optional

from . import adjudication as adj
from . import corpus, eligibility, extraction, framing, grounding, stats, synthetic

STAGES = (
    "ingest",
    "scrub",
    "eligibility",
    "extract",
    "audit",
    "review",
    "finalize",
    "segment",
    "frame",
    "stats",
)

MANIFEST_NAME = "manifest.json"


class PipelineError(Exception):
    exit_code = 3


class ConfigError(PipelineError):
    exit_code = 2


class StageFailure(PipelineError):
    exit_code = 3


class PendingReviewBlock(PipelineError):
    exit_code = 4


@dataclass(frozen=True)
class PipelineConfig:
    notes_path: Path
    history_path: Path
    out_dir: Path
    backend: str = "mock"  # mock | http
    endpoint: str = ""
    extract_model: str = "echo-extract"
    frame_model: str = "echo-frame"
    token_env: str = "COUNSELFRAME_API_TOKEN"
    parallelism: int = 4
    temperature: float = 0.0
    prompt_variant: str = "short"
    header_patterns: tuple[str, ...] = corpus.DEFAULT_HEADER_PATTERNS
    concept_map_path: Optional[Path] = None
    sidecar_path: Optional[Path] = None
    review_policy: str = "manual"  # manual | auto
    seed: int = 7

    def validate(self) -> None:
        if self.backend not in ("mock", "http"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.prompt_variant not in ("short", "long"):
            raise ConfigError(f"unknown prompt variant {self.prompt_variant!r}")
        if self.review_policy not in ("manual", "auto"):
            raise ConfigError(f"unknown review policy {self.review_policy!r}")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be at least 1")
        if self.backend == "http":
            if not self.endpoint:
                raise ConfigError("http backend needs an endpoint")
            if not os.environ.get(self.token_env):
                raise ConfigError(f"http backend needs a token in ${self.token_env}")
        if self.review_policy == "auto":
            if self.sidecar_path is None:
                raise ConfigError("auto review policy requires a ground-truth sidecar")
            if not Path(self.sidecar_path).exists():
                raise ConfigError(f"sidecar not found: {self.sidecar_path}")
        for path_name in ("notes_path", "history_path"):
            path = Path(getattr(self, path_name))
            if not path.exists():
                raise ConfigError(f"{path_name.replace('_path', '')} file not found: {path}")

    def to_dict(self) -> dict:
        return {
            "notes_path": str(self.notes_path),
            "history_path": str(self.history_path),
            "out_dir": str(self.out_dir),
            "backend": self.backend,
            "endpoint": self.endpoint,
            "extract_model": self.extract_model,
            "frame_model": self.frame_model,
            "token_env": self.token_env,
            "parallelism": self.parallelism,
            "temperature": self.temperature,
            "prompt_variant": self.prompt_variant,
            "header_patterns": list(self.header_patterns),
            "concept_map_path": str(self.concept_map_path) if self.concept_map_path else None,
            "sidecar_path": str(self.sidecar_path) if self.sidecar_path else None,
            "review_policy": self.review_policy,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        return cls(
            notes_path=Path(data["notes_path"]),
            history_path=Path(data["history_path"]),
            out_dir=Path(data["out_dir"]),
            backend=data.get("backend", "mock"),
            endpoint=data.get("endpoint", ""),
            extract_model=data.get("extract_model", "echo-extract"),
            frame_model=data.get("frame_model", "echo-frame"),
            token_env=data.get("token_env", "COUNSELFRAME_API_TOKEN"),
            parallelism=int(data.get("parallelism", 4)),
            temperature=float(data.get("temperature", 0.0)),
            prompt_variant=data.get("prompt_variant", "short"),
            header_patterns=tuple(data.get("header_patterns", corpus.DEFAULT_HEADER_PATTERNS)),
            concept_map_path=Path(data["concept_map_path"]) if data.get("concept_map_path") else None,
            sidecar_path=Path(data["sidecar_path"]) if data.get("sidecar_path") else None,
            review_policy=data.get("review_policy", "manual"),
            seed=int(data.get("seed", 7)),
        )

    @property
    def content_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    @property
    def config_label(self) -> str:
        return f"{self.extract_model}:{self.prompt_variant}"


def _write_json(path: Path, obj: object) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows), encoding="utf-8"
    )


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


class Pipeline:
    def __init__(self, config: PipelineConfig):
        config.validate()
        self.config = config
        self.out_dir = Path(config.out_dir)
        self.stage_dir = self.out_dir / "stages"
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.stage_dir.mkdir(parents=True, exist_ok=True)
        _write_json(
            self.out_dir / "config.json",
            {"config": config.to_dict(), "content_hash": config.content_hash},
        )
        # A frozen clock keeps hermetic runs reproducible event for event.
        self._clock: Callable[[], float] = (
            (lambda: 0.0) if config.backend == "mock" else time.time
        )

    # -- manifest -------------------------------------------------------

    def _manifest_path(self) -> Path:
        return self.out_dir / MANIFEST_NAME

    def load_manifest(self) -> dict:
        path = self._manifest_path()
        if path.exists():
            manifest = _read_json(path)
            if manifest.get("config_hash") != self.config.content_hash:
                raise ConfigError(
                    "output directory was produced by a different configuration; "
                    "use a fresh directory or rerun with force"
                )
            return manifest
        return {"config_hash": self.config.content_hash, "stages": {}}

    def _record_stage(self, manifest: dict, name: str, outputs: list[Path], summary: dict) -> None:
        manifest["stages"][name] = {
            "status": "complete",
            "outputs": sorted(str(p.relative_to(self.out_dir)) for p in outputs),
            "summary": summary,
        }
        _write_json(self._manifest_path(), manifest)

    def run(self, force: bool = False) -> dict:
        if force and self._manifest_path().exists():
            self._manifest_path().unlink()
        manifest = self.load_manifest()
        for name in STAGES:
            entry = manifest["stages"].get(name)
            if entry is not None and entry.get("status") == "complete" and not force:
                continue
            self.run_stage(name, manifest)
        return manifest

    def run_stage(self, name: str, manifest: Optional[dict] = None) -> dict:
        if name not in STAGES:
            raise ConfigError(f"unknown stage {name!r}")
        manifest = manifest if manifest is not None else self.load_manifest()
        for prerequisite in STAGES[: STAGES.index(name)]:
            if manifest["stages"].get(prerequisite, {}).get("status") != "complete":
                raise StageFailure(f"stage {name!r} needs {prerequisite!r} to complete first")
        outputs, summary = getattr(self, f"_stage_{name}")()
        self._record_stage(manifest, name, outputs, summary)
        return manifest

    # -- backends and shared state --------------------------------------

    def _extraction_backend(self) -> extraction.GenerationBackend:
        if self.config.backend == "mock":
            return synthetic.MockExtractionBackend()
        return extraction.ChatCompletionBackend(
            self.config.endpoint,
            self.config.extract_model,
            token_env=self.config.token_env,
            temperature=self.config.temperature,
        )

    def _framing_backend(self) -> extraction.GenerationBackend:
        if self.config.backend == "mock":
            return synthetic.MockFramingBackend()
        return extraction.ChatCompletionBackend(
            self.config.endpoint,
            self.config.frame_model,
            token_env=self.config.token_env,
            temperature=self.config.temperature,
        )

    def review_store(self) -> adj.ReviewStore:
        path = self.stage_dir / "review" / "events.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        return adj.ReviewStore(path, clock=self._clock)

    def _concept_map(self) -> adj.ConceptMap:
        if self.config.concept_map_path is not None:
            return adj.ConceptMap.from_file(Path(self.config.concept_map_path))
        return adj.ConceptMap()

    # -- stage bodies ---------------------------------------------------

    def _stage_ingest(self) -> tuple[list[Path], dict]:
        records, entries = corpus.load_corpus(
            Path(self.config.notes_path), Path(self.config.history_path)
        )
        record_rows = []
        excluded = []
        for r in records:
            reason = r.exclusion_reason()
            if reason:
                excluded.append(r.record_id)
            record_rows.append(
                {
                    "record_id": r.record_id,
                    "narrative": r.narrative,
                    "group": r.group.value,
                    "prior_cesarean": r.prior_cesarean,
                    "age": r.age,
                    "bmi": r.bmi,
                    "delivery_date": r.delivery_date.isoformat() if r.delivery_date else None,
                    "excluded_reason": reason,
                }
            )
        history_rows = [
            {
                "record_id": e.record_id,
                "mode": e.mode.value,
                "incision_type": e.incision_type.value,
                "delivery_date": e.delivery_date.isoformat() if e.delivery_date else None,
            }
            for e in entries
        ]
        records_path = self.stage_dir / "records.jsonl"
        history_path = self.stage_dir / "history.jsonl"
        _write_jsonl(records_path, record_rows)
        _write_jsonl(history_path, history_rows)
        summary = {
            "n_records": len(records),
            "n_history_entries": len(entries),
            "n_excluded": len(excluded),
            "excluded_record_ids": sorted(excluded),
        }
        return [records_path, history_path], summary

    def _stage_scrub(self) -> tuple[list[Path], dict]:
        rows = _read_jsonl(self.stage_dir / "records.jsonl")
        out_rows = []
        n_spans = 0
        for row in rows:
            scrubbed, spans = corpus.scrub_custom_phi(row["narrative"])
            n_spans += len(spans)
            out_rows.append(
                {
                    "record_id": row["record_id"],
                    "narrative": scrubbed,
                    "group": row["group"],
                    "prior_cesarean": row["prior_cesarean"],
                    "delivery_date": row["delivery_date"],
                    "excluded_reason": row["excluded_reason"],
                    # Placeholder positions only; originals stay unpersisted.
                    "scrub_spans": [[s.start, s.end, s.placeholder] for s in spans],
                }
            )
        path = self.stage_dir / "scrubbed.jsonl"
        _write_jsonl(path, out_rows)
        return [path], {"n_records": len(out_rows), "n_replacements": n_spans}

    def _scrubbed_records(self) -> list[dict]:
        return _read_jsonl(self.stage_dir / "scrubbed.jsonl")

    def _patient_record(self, row: dict) -> corpus.PatientRecord:
        return corpus.PatientRecord(
            record_id=row["record_id"],
            narrative=row["narrative"],
            group=corpus.DeliveryGroup(row["group"]),
            prior_cesarean=bool(row["prior_cesarean"]),
            delivery_date=date.fromisoformat(row["delivery_date"])
            if row.get("delivery_date")
            else None,
        )

    def _history_entries(self) -> list[corpus.PregnancyHistoryEntry]:
        return [
            corpus.PregnancyHistoryEntry(
                record_id=row["record_id"],
                mode=corpus.DeliveryMode(row["mode"]),
                incision_type=corpus.IncisionType(row.get("incision_type") or "unknown"),
                delivery_date=date.fromisoformat(row["delivery_date"])
                if row.get("delivery_date")
                else None,
            )
            for row in _read_jsonl(self.stage_dir / "history.jsonl")
        ]

    def _stage_eligibility(self) -> tuple[list[Path], dict]:
        entries = self._history_entries()
        rows = []
        rcs_outcomes = []
        for row in self._scrubbed_records():
            if row["excluded_reason"]:
                continue
            record = self._patient_record(row)
            outcome = eligibility.classify_patient(record, entries)
            if record.group is corpus.DeliveryGroup.RCS:
                rcs_outcomes.append(outcome)
            inputs = outcome.inputs
            rows.append(
                {
                    "record_id": outcome.record_id,
                    "group": row["group"],
                    "category": outcome.category.value,
                    "interval_unknown": outcome.interval_unknown,
                    "inputs": {
                        "n_prior_cesareans": inputs.n_prior_cesareans,
                        "incision_types": [i.value for i in inputs.incision_types],
                        "has_prior_vaginal_birth": inputs.has_prior_vaginal_birth,
                        "has_successful_vbac": inputs.has_successful_vbac,
                        "interdelivery_interval_days": inputs.interdelivery_interval_days,
                        "has_history_data": inputs.has_history_data,
                    },
                }
            )
        outcome_path = self.stage_dir / "eligibility.jsonl"
        _write_jsonl(outcome_path, rows)

        summary_obj = eligibility.summarize_cohort(rcs_outcomes)
        summary_path = self.stage_dir / "eligibility_summary.json"
        _write_json(
            summary_path,
            {
                "group": "RCS",
                "total": summary_obj.total,
                "counts": {c.value: n for c, n in summary_obj.counts.items()},
                "percentages": {
                    c.value: stats.round_half_up(p) for c, p in summary_obj.percentages.items()
                },
                "condition_crosstab": {
                    row_name: {c.value: n for c, n in cells.items()}
                    for row_name, cells in summary_obj.condition_crosstab.items()
                },
                "n_interval_unknown": summary_obj.n_interval_unknown,
            },
        )
        stage_summary = {
            "n_classified": len(rows),
            "rcs_counts": {c.value: summary_obj.counts[c] for c in eligibility.EligibilityCategory},
        }
        return [outcome_path, summary_path], stage_summary

    def _eligibility_rows(self) -> list[dict]:
        return _read_jsonl(self.stage_dir / "eligibility.jsonl")

    def _extraction_targets(self) -> list[str]:
        """Potentially eligible RCS patients, the only extraction scope."""
        return sorted(
            row["record_id"]
            for row in self._eligibility_rows()
            if row["group"] == corpus.DeliveryGroup.RCS.value
            and row["category"] == eligibility.EligibilityCategory.POTENTIALLY_ELIGIBLE.value
        )

    def _stage_extract(self) -> tuple[list[Path], dict]:
        targets = set(self._extraction_targets())
        records = [
            self._patient_record(row)
            for row in self._scrubbed_records()
            if row["record_id"] in targets
        ]
        backend = self._extraction_backend()
        config = extraction.PromptConfig(
            variant=extraction.PromptVariant(self.config.prompt_variant),
            model_name=self.config.extract_model,
            decode_temperature=self.config.temperature,
        )
        ext_dir = self.stage_dir / "extractions"
        ext_dir.mkdir(parents=True, exist_ok=True)

        def one(record: corpus.PatientRecord) -> tuple[str, dict]:
            try:
                result = extraction.extract(record, backend, config)
            except extraction.UnparseableResponseError as exc:
                return record.record_id, {
                    "record_id": record.record_id,
                    "model_name": config.model_name,
                    "prompt_variant": config.variant.value,
                    "error": str(exc),
                    "raw_response": exc.raw_response,
                }
            return record.record_id, {
                "record_id": record.record_id,
                "model_name": config.model_name,
                "prompt_variant": config.variant.value,
                "incision_types": list(result.incision_types or []) or None,
                "contraindications": list(result.contraindications or []) or None,
                "previous_delivery_modes": list(result.previous_delivery_modes or []) or None,
                "raw_response": result.raw_response,
            }

        with ThreadPoolExecutor(max_workers=self.config.parallelism) as pool:
            results = dict(pool.map(one, records))

        outputs = []
        n_failed = 0
        for record_id in sorted(results):
            payload = results[record_id]
            if "error" in payload:
                n_failed += 1
            path = ext_dir / f"{record_id}.json"
            _write_json(path, payload)
            outputs.append(path)
        summary = {
            "n_extracted": len(results) - n_failed,
            "n_unparseable": n_failed,
            "model": config.model_name,
            "prompt_variant": config.variant.value,
        }
        return outputs, summary

    def _extraction_payloads(self) -> dict[str, dict]:
        ext_dir = self.stage_dir / "extractions"
        payloads = {}
        if ext_dir.exists():
            for path in sorted(ext_dir.glob("*.json")):
                payload = _read_json(path)
                payloads[payload["record_id"]] = payload
        return payloads

    def _stage_audit(self) -> tuple[list[Path], dict]:
        narratives = {
            row["record_id"]: row["narrative"] for row in self._scrubbed_records()
        }
        audits: list[grounding.AuditRecord] = []
        skipped = []
        flag_dir = self.stage_dir / "flags"
        flag_dir.mkdir(parents=True, exist_ok=True)
        outputs = []
        for record_id, payload in sorted(self._extraction_payloads().items()):
            if "error" in payload:
                skipped.append(record_id)
                continue
            result = extraction.ExtractionResult(
                incision_types=tuple(payload["incision_types"]) if payload["incision_types"] else None,
                contraindications=tuple(payload["contraindications"]) if payload["contraindications"] else None,
                previous_delivery_modes=tuple(payload["previous_delivery_modes"]) if payload["previous_delivery_modes"] else None,
                raw_response=payload["raw_response"],
                prompt_variant=extraction.PromptVariant(payload["prompt_variant"]),
            )
            record_audits = grounding.verify_verbatim(
                result, narratives[record_id], record_id, self.config.config_label
            )
            audits.extend(record_audits)
            flag_path = flag_dir / f"{record_id}.json"
            grounding.write_flag_log(record_audits, flag_path)
            outputs.append(flag_path)

        audit_path = self.stage_dir / "audits.jsonl"
        _write_jsonl(
            audit_path,
            [
                {
                    "record_id": a.record_id,
                    "field": a.field,
                    "item_index": a.item_index,
                    "extracted": a.extracted,
                    "verbatim_match": a.verbatim_match,
                    "config_label": a.config_label,
                    "review_category": None,
                }
                for a in audits
            ],
        )
        outputs.append(audit_path)

        store = self.review_store()
        store.enqueue_flags(audits, narratives)
        outputs.append(store.log_path)
        n_flagged = sum(1 for a in audits if a.flagged)
        summary = {
            "n_audits": len(audits),
            "n_flagged": n_flagged,
            "n_pending_tasks": store.pending_count(),
            "skipped_unparseable": sorted(skipped),
        }
        return outputs, summary

    def _load_audits(self) -> list[grounding.AuditRecord]:
        return [
            grounding.AuditRecord(
                record_id=row["record_id"],
                field=row["field"],
                item_index=row["item_index"],
                extracted=row["extracted"],
                verbatim_match=row["verbatim_match"],
                config_label=row["config_label"],
            )
            for row in _read_jsonl(self.stage_dir / "audits.jsonl")
        ]

    def _stage_review(self) -> tuple[list[Path], dict]:
        store = self.review_store()
        resolved = 0
        if self.config.review_policy == "auto":
            sidecar = synthetic.load_sidecar(Path(self.config.sidecar_path))
            resolved = synthetic.auto_resolve_tasks(store, sidecar)
        pending = store.pending_count()
        if pending:
            raise PendingReviewBlock(
                f"{pending} review task(s) pending; resolve them via the review API "
                "or CLI, then rerun"
            )
        return [store.log_path], {"n_resolved_now": resolved, "n_pending": 0}

    def _stage_finalize(self) -> tuple[list[Path], dict]:
        store = self.review_store()
        audits = adj.apply_decisions(self._load_audits(), store)
        unresolved = [a.audit_id for a in audits if a.outcome_group is None]
        if unresolved:
            raise PendingReviewBlock(
                "unresolved audit flags: " + ", ".join(sorted(unresolved))
            )
        resolved_path = self.stage_dir / "audits_resolved.jsonl"
        _write_jsonl(
            resolved_path,
            [
                {
                    "record_id": a.record_id,
                    "field": a.field,
                    "item_index": a.item_index,
                    "extracted": a.extracted,
                    "verbatim_match": a.verbatim_match,
                    "config_label": a.config_label,
                    "review_category": a.review_category.value if a.review_category else None,
                    "outcome_group": a.outcome_group.value,
                }
                for a in audits
            ],
        )

        concept_map = self._concept_map()
        narratives = {row["record_id"]: row["narrative"] for row in self._scrubbed_records()}
        by_record: dict[str, list[grounding.AuditRecord]] = {}
        for a in audits:
            by_record.setdefault(a.record_id, []).append(a)

        outcomes = []
        for row in self._eligibility_rows():
            inputs = eligibility.EligibilityInputs(
                n_prior_cesareans=row["inputs"]["n_prior_cesareans"],
                incision_types=tuple(
                    corpus.IncisionType(i) for i in row["inputs"]["incision_types"]
                ),
                has_prior_vaginal_birth=row["inputs"]["has_prior_vaginal_birth"],
                has_successful_vbac=row["inputs"]["has_successful_vbac"],
                interdelivery_interval_days=row["inputs"]["interdelivery_interval_days"],
                has_history_data=row["inputs"]["has_history_data"],
            )
            outcomes.append(
                eligibility.EligibilityOutcome(
                    row["record_id"], eligibility.EligibilityCategory(row["category"]), inputs
                )
            )

        def adjudicate_pass() -> tuple[dict[str, adj.FinalEligibility], dict[str, adj.AmbiguousHistoryError]]:
            finals: dict[str, adj.FinalEligibility] = {}
            ambiguous: dict[str, adj.AmbiguousHistoryError] = {}
            for record_id in self._extraction_targets():
                # The grounding gate: unsupported strings never reach
                # adjudication as evidence.
                usable = [
                    a
                    for a in by_record.get(record_id, [])
                    if a.outcome_group is not grounding.OutcomeGroup.HALLUCINATION_VARIANT
                ]
                manual = None
                reference = ""
                task_id = adj.eligibility_task_id(record_id)
                try:
                    task = store.get_task(task_id)
                except adj.AdjudicationError:
                    task = None
                if task is not None and task.status is adj.TaskStatus.RESOLVED:
                    manual = adj.FinalStatus(task.decision)
                    reference = task_id
                try:
                    finals[record_id] = adj.adjudicate_eligibility(
                        record_id,
                        eligibility.EligibilityCategory.POTENTIALLY_ELIGIBLE,
                        usable,
                        concept_map,
                        manual_decision=manual,
                        manual_reference=reference,
                    )
                except adj.AmbiguousHistoryError as exc:
                    ambiguous[record_id] = exc
            return finals, ambiguous

        finals, ambiguous = adjudicate_pass()
        if ambiguous:
            for record_id, exc in sorted(ambiguous.items()):
                store.enqueue_eligibility_review(
                    record_id,
                    reason="; ".join(exc.markers),
                    context=adj.context_window(
                        narratives.get(record_id, ""), exc.markers[0]
                    ),
                )
            if self.config.review_policy == "auto":
                sidecar = synthetic.load_sidecar(Path(self.config.sidecar_path))
                synthetic.auto_resolve_tasks(store, sidecar)
                finals, ambiguous = adjudicate_pass()
            if ambiguous:
                raise PendingReviewBlock(
                    "ambiguous surgical histories need expert review: "
                    + ", ".join(sorted(ambiguous))
                )

        existing = store.finals()
        for record_id in sorted(finals):
            if existing.get(record_id) != finals[record_id]:
                store.record_adjudication(finals[record_id])

        records = [
            self._patient_record(row)
            for row in self._scrubbed_records()
            if not row["excluded_reason"]
        ]
        manifest = adj.finalize_cohort(records, outcomes, finals)
        path = self.stage_dir / "finalize.json"
        _write_json(
            path,
            {
                "cohort_record_ids": list(manifest.record_ids),
                "n_vbac": manifest.n_vbac,
                "n_structural_eligible": manifest.n_structural_eligible,
                "n_confirmed": manifest.n_confirmed,
                "n_excluded": manifest.n_excluded,
                "total": manifest.total,
                "finals": {
                    record_id: {
                        "final_status": final.final_status.value,
                        "reason_codes": list(final.reason_codes),
                        "basis": [vars(b) for b in final.basis],
                        "concept_map_version": final.concept_map_version,
                    }
                    for record_id, final in sorted(finals.items())
                },
            },
        )
        summary = {
            "cohort_total": manifest.total,
            "n_vbac": manifest.n_vbac,
            "n_structural_eligible": manifest.n_structural_eligible,
            "n_confirmed": manifest.n_confirmed,
            "n_excluded": manifest.n_excluded,
        }
        return [path, resolved_path, store.log_path], summary

    def _stage_segment(self) -> tuple[list[Path], dict]:
        cohort = set(_read_json(self.stage_dir / "finalize.json")["cohort_record_ids"])
        seg_config = corpus.SegmenterConfig(header_patterns=self.config.header_patterns)
        rows = []
        for row in self._scrubbed_records():
            if row["record_id"] not in cohort:
                continue
            record = self._patient_record(row)
            for seg in corpus.segment_counseling(record, seg_config):
                rows.append(
                    {
                        "note_id": seg.note_id,
                        "index": seg.index,
                        "text": seg.text,
                        "start": seg.start,
                        "end": seg.end,
                        "section_header": seg.section_header,
                        "group": row["group"],
                    }
                )
        rows.sort(key=lambda r: (r["note_id"], r["index"]))
        path = self.stage_dir / "segments.jsonl"
        _write_jsonl(path, rows)
        per_group = {g.value: 0 for g in corpus.DeliveryGroup}
        for row in rows:
            per_group[row["group"]] += 1
        return [path], {"n_segments": len(rows), "per_group": per_group}

    def _stage_frame(self) -> tuple[list[Path], dict]:
        seg_rows = _read_jsonl(self.stage_dir / "segments.jsonl")
        backend = self._framing_backend()
        config = framing.FramingConfig(
            model_name=self.config.frame_model, decode_temperature=self.config.temperature
        )

        def one(row: dict) -> dict:
            segment = corpus.Segment(
                note_id=row["note_id"],
                index=row["index"],
                text=row["text"],
                start=row["start"],
                end=row["end"],
                section_header=row["section_header"],
            )
            label = framing.classify_segment(
                segment, corpus.DeliveryGroup(row["group"]), backend, config
            )
            return {
                "note_id": row["note_id"],
                "index": row["index"],
                "group": row["group"],
                "category": label.category.value if label.category else None,
                "rationale": label.rationale,
                "model_name": label.model_name,
                "prompt_hash": label.prompt_hash,
                "error": label.error,
            }

        with ThreadPoolExecutor(max_workers=self.config.parallelism) as pool:
            out_rows = list(pool.map(one, seg_rows))
        out_rows.sort(key=lambda r: (r["note_id"], r["index"]))
        path = self.stage_dir / "framing.jsonl"
        _write_jsonl(path, out_rows)
        n_rejects = sum(1 for r in out_rows if r["error"])
        n_not_counseling = sum(
            1 for r in out_rows if r["category"] == framing.FramingCategory.NOT_COUNSELING.value
        )
        summary = {
            "n_labels": len(out_rows),
            "n_rejects": n_rejects,
            "n_not_counseling": n_not_counseling,
            "n_counseling": len(out_rows) - n_rejects - n_not_counseling,
        }
        return [path], summary

    def _stage_stats(self) -> tuple[list[Path], dict]:
        rows = _read_jsonl(self.stage_dir / "framing.jsonl")
        coverage = {
            g.value: {"total": 0, "counseling": 0, "rejects": 0, "not_counseling": 0}
            for g in corpus.DeliveryGroup
        }
        pairs = []
        for row in rows:
            cell = coverage[row["group"]]
            cell["total"] += 1
            if row["error"]:
                cell["rejects"] += 1
            elif row["category"] == framing.FramingCategory.NOT_COUNSELING.value:
                cell["not_counseling"] += 1
            else:
                cell["counseling"] += 1
                pairs.append(
                    (
                        framing.FramingCategory(row["category"]),
                        corpus.DeliveryGroup(row["group"]),
                    )
                )
        for cell in coverage.values():
            cell["counseling_pct"] = (
                stats.round_half_up(100.0 * cell["counseling"] / cell["total"])
                if cell["total"]
                else 0.0
            )
        try:
            built = stats.table_from_pairs(pairs)
            result = stats.chi_square(built.table)
        except stats.StatsError as exc:
            raise StageFailure(f"contingency analysis failed: {exc}") from exc
        table = built.table
        payload = {
            "coverage": coverage,
            "excluded_rows": list(built.excluded_rows),
            "table": {
                "row_labels": list(table.row_labels),
                "col_labels": list(table.col_labels),
                "counts": [list(r) for r in table.counts],
                "row_totals": list(table.row_totals),
                "col_totals": list(table.col_totals),
                "grand_total": table.grand_total,
            },
            "chi_square": {
                "statistic": result.statistic,
                "df": result.df,
                "p_value": result.p_value,
            },
            "residuals": [list(r) for r in result.residuals],
            "significant_cells": [
                {"row": c.row_label, "col": c.col_label, "residual": c.value}
                for c in stats.significant_cells(table)
            ],
            "distribution": stats.distribution(table),
        }
        path = self.stage_dir / "stats.json"
        _write_json(path, payload)
        summary = {
            "chi_square": stats.round_half_up(result.statistic, 2),
            "df": result.df,
            "n_counseling": len(pairs),
        }
        return [path], summary


def generate_corpus(spec: synthetic.SyntheticCorpusSpec, out_dir: Path) -> synthetic.GeneratedCorpus:
    return synthetic.generate_synthetic_corpus(spec, out_dir)
