"""HTTP adjudication service.

Thin façade over the review store: every mutation lands in the event log,
so the service holds no truth of its own and can be restarted freely. The
review UI consumes exactly these endpoints; the CLI drives the same
operations non-interactively.
"""

from __future__ import annotations

import difflib
import json
from pathlib import Path
from typing import Callable, Optional, Sequence

from fastapi import Depends, FastAPI, HTTPException, Query, Request
from pydantic import BaseModel

from . import adjudication as adj
from . import grounding

CATEGORY_DEFINITIONS = {
    grounding.ReviewCategory.PARAPHRASE_ACCURATE: (
        "Faithful restatement of something the note says, in different words."
    ),
    grounding.ReviewCategory.TYPO_IN_ORIGINAL: (
        "The note itself contains the misspelling; the output corrected or echoed it."
    ),
    grounding.ReviewCategory.TYPO_IN_GENERATED: (
        "The output misspells text that is correct in the note."
    ),
    grounding.ReviewCategory.UNSUPPORTED_ADDITION: (
        "A meta-statement or qualifier with no basis in the note."
    ),
    grounding.ReviewCategory.HALLUCINATION: (
        "Clinical content asserted by the output but absent from the note."
    ),
    grounding.ReviewCategory.PARTIAL_HALLUCINATION: (
        "Part of the string is supported; the remainder is invented."
    ),
}

FINAL_DEFINITIONS = {
    adj.FinalStatus.CONFIRMED_ELIGIBLE: "Documented evidence supports VBAC eligibility.",
    adj.FinalStatus.EXCLUDED: "Evidence is exclusionary or insufficient to confirm.",
}


class ResolutionBody(BaseModel):
    decision: str
    reviewer_note: str = ""


def _highlight(context: str, extracted: str) -> Optional[dict]:
    """Best fuzzy locus of the extracted string inside the context window."""
    if not context or not extracted:
        return None
    matcher = difflib.SequenceMatcher(None, context.casefold(), extracted.casefold())
    match = matcher.find_longest_match(0, len(context), 0, len(extracted))
    if match.size == 0:
        return None
    return {"start": match.a, "end": match.a + match.size}


def _candidates(task: adj.ReviewTask) -> list[dict]:
    if task.kind is adj.TaskKind.FLAG_REVIEW:
        return [
            {
                "decision": category.value,
                "definition": CATEGORY_DEFINITIONS[category],
                "outcome_group": grounding.REVIEW_TO_GROUP[category].value,
            }
            for category in grounding.ReviewCategory
        ]
    return [
        {"decision": status.value, "definition": FINAL_DEFINITIONS[status]}
        for status in adj.FinalStatus
    ]


def task_payload(task: adj.ReviewTask, with_detail: bool = False) -> dict:
    payload = {
        "task_id": task.task_id,
        "kind": task.kind.value,
        "record_id": task.record_id,
        "extracted": task.extracted,
        "field": task.field,
        "item_index": task.item_index,
        "config_label": task.config_label,
        "status": task.status.value,
        "decision": task.decision,
        "reviewer_note": task.reviewer_note,
    }
    if with_detail:
        payload["context"] = task.context
        payload["highlight"] = _highlight(task.context, task.extracted)
        payload["candidates"] = _candidates(task)
    return payload


def create_app(
    store: adj.ReviewStore,
    *,
    audits_loader: Optional[Callable[[], Sequence[grounding.AuditRecord]]] = None,
    token: Optional[str] = None,
) -> FastAPI:
    """Build the service around an open review store.

    ``audits_loader`` supplies the audit records backing the aggregate
    endpoints; live decisions from the store are applied on each request.
    A non-empty ``token`` turns on static bearer auth.
    """
    app = FastAPI(title="counselframe review service")

    def check_auth(request: Request) -> None:
        if not token:
            return
        supplied = request.headers.get("authorization", "")
        if supplied != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    def current_audits() -> list[grounding.AuditRecord]:
        if audits_loader is None:
            return []
        return adj.apply_decisions(list(audits_loader()), store)

    @app.get("/health")
    def health(_: None = Depends(check_auth)) -> dict:
        return {
            "status": "ok",
            "n_tasks": len(store.tasks()),
            "n_pending": store.pending_count(),
        }

    @app.get("/tasks")
    def list_tasks(
        status: Optional[str] = None,
        kind: Optional[str] = None,
        field: Optional[str] = None,
        config_label: Optional[str] = None,
        record_id: Optional[str] = None,
        page: int = Query(1, ge=1),
        page_size: int = Query(50, ge=1, le=500),
        _: None = Depends(check_auth),
    ) -> dict:
        try:
            status_filter = adj.TaskStatus(status) if status else None
            kind_filter = adj.TaskKind(kind) if kind else None
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        tasks = store.tasks(
            status=status_filter,
            kind=kind_filter,
            field=field,
            config_label=config_label,
            record_id=record_id,
        )
        start = (page - 1) * page_size
        window = tasks[start : start + page_size]
        return {
            "tasks": [task_payload(t) for t in window],
            "page": page,
            "page_size": page_size,
            "total": len(tasks),
            "n_pending": store.pending_count(),
        }

    def _get_or_404(task_id: str) -> adj.ReviewTask:
        try:
            return store.get_task(task_id)
        except adj.AdjudicationError:
            raise HTTPException(status_code=404, detail=f"unknown task {task_id!r}") from None

    # The history route registers first: task ids contain slashes, so the
    # catch-all path parameter below would swallow the suffix otherwise.
    @app.get("/tasks/{task_id:path}/history")
    def task_history(task_id: str, _: None = Depends(check_auth)) -> dict:
        _get_or_404(task_id)
        return {"task_id": task_id, "events": store.history(task_id)}

    @app.post("/tasks/{task_id:path}/resolution")
    def resolve(task_id: str, body: ResolutionBody, _: None = Depends(check_auth)) -> dict:
        _get_or_404(task_id)
        try:
            task = store.resolve_task(task_id, body.decision, reviewer_note=body.reviewer_note)
        except adj.AdjudicationError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        return task_payload(task, with_detail=True)

    @app.get("/tasks/{task_id:path}")
    def task_detail(task_id: str, _: None = Depends(check_auth)) -> dict:
        return task_payload(_get_or_404(task_id), with_detail=True)

    @app.get("/cohort")
    def cohort(_: None = Depends(check_auth)) -> dict:
        pending = store.tasks(status=adj.TaskStatus.PENDING)
        finals = store.finals()
        confirmed = sum(
            1 for f in finals.values() if f.final_status is adj.FinalStatus.CONFIRMED_ELIGIBLE
        )
        audits = current_audits()
        flagged = [a for a in audits if a.flagged]
        reviewed = [a for a in flagged if a.outcome_group is not None]
        group_counts = {g.value: 0 for g in grounding.OutcomeGroup}
        for a in reviewed:
            group_counts[a.outcome_group.value] += 1
        group_percentages = {
            g: (100.0 * n / len(audits) if audits else 0.0) for g, n in group_counts.items()
        }
        return {
            "pending": {
                "total": len(pending),
                "flag_review": sum(
                    1 for t in pending if t.kind is adj.TaskKind.FLAG_REVIEW
                ),
                "eligibility_review": sum(
                    1 for t in pending if t.kind is adj.TaskKind.ELIGIBILITY_REVIEW
                ),
            },
            "finals": {
                "confirmed": confirmed,
                "excluded": len(finals) - confirmed,
                "by_record": {
                    record_id: final.final_status.value
                    for record_id, final in sorted(finals.items())
                },
            },
            "audit": {
                "n_audits": len(audits),
                "n_flagged": len(flagged),
                "n_reviewed": len(reviewed),
                "group_counts": group_counts,
                "group_percentages": group_percentages,
            },
            "finalize_ready": not pending,
        }

    @app.get("/audit")
    def audit_aggregates(_: None = Depends(check_auth)) -> dict:
        audits = current_audits()
        unreviewed = [a.audit_id for a in audits if a.flagged and a.review_category is None]
        payload: dict = {"n_unreviewed": len(unreviewed), "cells": {}}
        try:
            cells = grounding.aggregate_audit(audits)
        except grounding.UnresolvedReviewError:
            return payload
        for (config_label, field), cell in sorted(cells.items()):
            entry = payload["cells"].setdefault(config_label, {})
            entry[field] = {
                "n_total": cell.n_total,
                "n_flagged": cell.n_flagged,
                "group_counts": {g.value: n for g, n in cell.group_counts.items()},
                "group_percentages": {
                    g.value: p for g, p in cell.group_percentages.items()
                },
                "fine_counts": {c.value: n for c, n in cell.fine_counts.items()},
                "fine_percentages": {
                    c.value: p for c, p in cell.fine_percentages.items()
                },
            }
        return payload

    @app.get("/events")
    def events(after_seq: int = Query(0, ge=0), _: None = Depends(check_auth)) -> dict:
        out = [e for e in store.events() if e["seq"] > after_seq]
        return {"events": out, "last_seq": out[-1]["seq"] if out else after_seq}

    return app


def app_from_out_dir(out_dir: Path, token: Optional[str] = None) -> FastAPI:
    """Service wired to a pipeline output directory's store and audits."""
    out_dir = Path(out_dir)
    log_path = out_dir / "stages" / "review" / "events.jsonl"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    store = adj.ReviewStore(log_path)
    audits_path = out_dir / "stages" / "audits.jsonl"

    def load_audits() -> list[grounding.AuditRecord]:
        audits = []
        if audits_path.exists():
            with audits_path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    row = json.loads(line)
                    audits.append(
                        grounding.AuditRecord(
                            record_id=row["record_id"],
                            field=row["field"],
                            item_index=row["item_index"],
                            extracted=row["extracted"],
                            verbatim_match=row["verbatim_match"],
                            config_label=row["config_label"],
                        )
                    )
        return audits

    return create_app(store, audits_loader=load_audits, token=token)
