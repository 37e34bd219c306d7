from __future__ import annotations

import json
from pathlib import Path

import pytest

from counselframe import stats
from counselframe.corpus import DeliveryGroup

TABLE3_ROWS = (
    "Balanced Information",
    "Benefit-Focused",
    "Directive",
    "Reassuring",
    "Risk-Focused",
    "Shared Decision-Making",
    "Statistical Evidence",
)
TABLE3_COUNTS = (
    (55, 48),
    (15, 25),
    (38, 13),
    (6, 7),
    (1110, 542),
    (34, 52),
    (27, 35),
)


@pytest.fixture
def table3() -> stats.ContingencyTable:
    return stats.ContingencyTable(
        row_labels=TABLE3_ROWS, col_labels=stats.GROUP_COLUMNS, counts=TABLE3_COUNTS
    )


def write_jsonl(path: Path, rows: list[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


def note_row(record_id: str, narrative: str, group: str = "RCS", **extra) -> dict:
    row = {
        "record_id": record_id,
        "narrative": narrative,
        "group": group,
        "prior_cesarean": True,
    }
    row.update(extra)
    return row


def history_row(record_id: str, mode: str, **extra) -> dict:
    row = {"record_id": record_id, "mode": mode}
    row.update(extra)
    return row


@pytest.fixture
def tiny_corpus(tmp_path: Path) -> tuple[Path, Path]:
    """Two RCS patients and one VBAC patient with plan sections."""
    notes = [
        note_row(
            "r1",
            "OB NOTE\n\nHISTORY:\nPrior low transverse cesarean in the record. "
            "Hx of cesarean section.\n\nASSESSMENT AND PLAN:\n"
            "Risks of attempting labor were discussed at length. "
            "We will decide together at the next visit.\n",
            group="RCS",
            delivery_date="2020-06-01",
        ),
        note_row(
            "r2",
            "OB NOTE\n\nHISTORY:\nPrior classical cesarean documented.\n\n"
            "PLAN:\nScheduled repeat cesarean. Risks of surgery reviewed.\n",
            group="RCS",
        ),
        note_row(
            "v1",
            "OB NOTE\n\nASSESSMENT/PLAN:\nBenefits of vaginal delivery discussed. "
            "Patient is reassured by prior success.\n",
            group="VBAC",
        ),
    ]
    history = [
        history_row("r1", "cesarean", incision_type="unknown", delivery_date="2017-03-10"),
        history_row("r2", "cesarean", incision_type="classical"),
        history_row("v1", "cesarean", incision_type="low_transverse", delivery_date="2015-01-01"),
        history_row("v1", "vaginal", delivery_date="2018-05-05"),
    ]
    notes_path = write_jsonl(tmp_path / "notes.jsonl", notes)
    history_path = write_jsonl(tmp_path / "history.jsonl", history)
    return notes_path, history_path


def group_of(name: str) -> DeliveryGroup:
    return DeliveryGroup(name)
