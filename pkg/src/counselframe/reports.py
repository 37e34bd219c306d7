"""Report bundle assembly.

Reports are regenerated wholesale from stage outputs and written with
sorted keys and no timestamps, so two runs over identical inputs produce
byte-identical bundles.
"""

from __future__ import annotations

import json
from pathlib import Path

from . import extraction, grounding, stats, synthetic

REPORT_FILES = (
    "cohort.json",
    "eligibility.json",
    "audit.json",
    "framing.json",
    "contingency.json",
    "contingency.txt",
)


def _write_json(path: Path, obj: object) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def analyze_counts_file(path: Path) -> dict:
    """Full chi-square analysis of a saved contingency table.

    The file holds ``row_labels``, ``col_labels``, and a ``counts`` matrix;
    this is how published tables are re-analyzed without the upstream
    narrative corpus.
    """
    data = _read_json(Path(path))
    table = stats.ContingencyTable(
        row_labels=tuple(data["row_labels"]),
        col_labels=tuple(data["col_labels"]),
        counts=tuple(tuple(int(c) for c in row) for row in data["counts"]),
    )
    return contingency_payload(table)


def contingency_payload(table: stats.ContingencyTable) -> dict:
    result = stats.chi_square(table)
    return {
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
        "expected": [list(r) for r in result.expected],
        "residuals": [list(r) for r in result.residuals],
        "significant_cells": [
            {"row": c.row_label, "col": c.col_label, "residual": stats.round_half_up(c.value, 2)}
            for c in stats.significant_cells(table)
        ],
        "distribution": stats.distribution(table),
    }


def render_contingency_text(payload: dict) -> str:
    """Plain-text table: each cell shows count (adjusted residual)."""
    table = payload["table"]
    residuals = payload["residuals"]
    rows = table["row_labels"]
    cols = table["col_labels"]
    header = [""] + list(cols) + ["Total"]
    body: list[list[str]] = [header]
    for i, row_name in enumerate(rows):
        cells = [
            f"{table['counts'][i][j]} ({stats.round_half_up(residuals[i][j], 2):+.2f})"
            for j in range(len(cols))
        ]
        body.append([row_name] + cells + [str(table["row_totals"][i])])
    body.append(["Total"] + [str(t) for t in table["col_totals"]] + [str(table["grand_total"])])

    widths = [max(len(r[k]) for r in body) for k in range(len(header))]
    lines = [
        "  ".join(cell.ljust(widths[k]) for k, cell in enumerate(row)).rstrip()
        for row in body
    ]
    chi = payload["chi_square"]
    lines.append("")
    lines.append(
        f"chi-square = {stats.round_half_up(chi['statistic'], 2)}, "
        f"df = {chi['df']}, p = {chi['p_value']:.3g}"
    )
    flagged_rows = list(dict.fromkeys(c["row"] for c in payload["significant_cells"]))
    lines.append(f"rows with |adjusted residual| > 2: {', '.join(flagged_rows) or 'none'}")
    return "\n".join(lines) + "\n"


def audit_report(resolved_rows: list[dict]) -> dict:
    """Aggregate audit outcomes per configuration and field."""
    audits = []
    for row in resolved_rows:
        audit = grounding.AuditRecord(
            record_id=row["record_id"],
            field=row["field"],
            item_index=row["item_index"],
            extracted=row["extracted"],
            verbatim_match=row["verbatim_match"],
            config_label=row["config_label"],
        )
        if row.get("review_category"):
            audit.review_category = grounding.ReviewCategory(row["review_category"])
        audits.append(audit)
    cells = grounding.aggregate_audit(audits)
    payload: dict = {}
    for (config_label, field), cell in sorted(cells.items()):
        entry = payload.setdefault(config_label, {})
        entry[field] = {
            "n_total": cell.n_total,
            "n_flagged": cell.n_flagged,
            "group_counts": {g.value: n for g, n in cell.group_counts.items()},
            "group_percentages": {
                g.value: stats.round_half_up(p) for g, p in cell.group_percentages.items()
            },
            "fine_counts": {c.value: n for c, n in cell.fine_counts.items()},
            "fine_percentages": {
                c.value: stats.round_half_up(p) for c, p in cell.fine_percentages.items()
            },
        }
    return payload


def recall_report(sidecar_path: Path, extractions: dict[str, dict]) -> dict:
    """Planted-evidence recall against a ground-truth sidecar."""
    sidecar = synthetic.load_sidecar(sidecar_path)
    by_record: dict[str, extraction.ExtractionResult] = {}
    for record_id, payload in extractions.items():
        if "error" in payload:
            continue
        by_record[record_id] = extraction.ExtractionResult(
            incision_types=tuple(payload["incision_types"]) if payload.get("incision_types") else None,
            contraindications=tuple(payload["contraindications"]) if payload.get("contraindications") else None,
            previous_delivery_modes=tuple(payload["previous_delivery_modes"]) if payload.get("previous_delivery_modes") else None,
        )
    misses = synthetic.missing_planted_evidence(sidecar, by_record)
    n_planted = sum(
        len(p.get("planted_evidence", []))
        for rid, p in sidecar["patients"].items()
        if rid in by_record
    )
    recall = 1.0 if n_planted == 0 else (n_planted - len(misses)) / n_planted
    return {
        "n_records_extracted": len(by_record),
        "n_planted": n_planted,
        "n_missed": len(misses),
        "recall": recall,
        "misses": [
            {"record_id": rid, "field": field, "text": text}
            for rid, field, text in sorted(misses)
        ],
    }


def build_report_bundle(out_dir: Path, sidecar_path: Path | None = None) -> list[Path]:
    """Assemble reports/ from completed stage outputs under ``out_dir``."""
    out_dir = Path(out_dir)
    stage_dir = out_dir / "stages"
    report_dir = out_dir / "reports"
    written: list[Path] = []

    finalize = _read_json(stage_dir / "finalize.json")
    cohort_path = report_dir / "cohort.json"
    _write_json(
        cohort_path,
        {
            "record_ids": finalize["cohort_record_ids"],
            "n_vbac": finalize["n_vbac"],
            "n_structural_eligible": finalize["n_structural_eligible"],
            "n_confirmed": finalize["n_confirmed"],
            "n_excluded": finalize["n_excluded"],
            "total": finalize["total"],
        },
    )
    written.append(cohort_path)

    elig_path = report_dir / "eligibility.json"
    _write_json(elig_path, _read_json(stage_dir / "eligibility_summary.json"))
    written.append(elig_path)

    audit_path = report_dir / "audit.json"
    _write_json(audit_path, audit_report(_read_jsonl(stage_dir / "audits_resolved.jsonl")))
    written.append(audit_path)

    stats_payload = _read_json(stage_dir / "stats.json")
    framing_path = report_dir / "framing.json"
    _write_json(
        framing_path,
        {"coverage": stats_payload["coverage"], "distribution": stats_payload["distribution"]},
    )
    written.append(framing_path)

    table = stats.ContingencyTable(
        row_labels=tuple(stats_payload["table"]["row_labels"]),
        col_labels=tuple(stats_payload["table"]["col_labels"]),
        counts=tuple(tuple(r) for r in stats_payload["table"]["counts"]),
    )
    contingency = contingency_payload(table)
    contingency_json = report_dir / "contingency.json"
    _write_json(contingency_json, contingency)
    written.append(contingency_json)
    contingency_txt = report_dir / "contingency.txt"
    contingency_txt.write_text(render_contingency_text(contingency), encoding="utf-8")
    written.append(contingency_txt)

    if sidecar_path is not None:
        extractions = {}
        ext_dir = stage_dir / "extractions"
        if ext_dir.exists():
            for path in sorted(ext_dir.glob("*.json")):
                payload = _read_json(path)
                extractions[payload["record_id"]] = payload
        recall_path = report_dir / "recall.json"
        _write_json(recall_path, recall_report(Path(sidecar_path), extractions))
        written.append(recall_path)

    return written
