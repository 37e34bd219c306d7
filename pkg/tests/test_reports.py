from __future__ import annotations

import json
from pathlib import Path

import pytest

from counselframe.grounding import UnresolvedReviewError
from counselframe.pipeline import Pipeline, PipelineConfig, generate_corpus
from counselframe.reports import (
    REPORT_FILES,
    analyze_counts_file,
    audit_report,
    build_report_bundle,
    contingency_payload,
    recall_report,
    render_contingency_text,
)
from counselframe.stats import ContingencyTable
from counselframe.synthetic import SyntheticCorpusSpec

from conftest import TABLE3_COUNTS, TABLE3_ROWS


def write_counts_file(path: Path) -> Path:
    path.write_text(
        json.dumps(
            {
                "row_labels": list(TABLE3_ROWS),
                "col_labels": ["RCS", "VBAC"],
                "counts": [list(r) for r in TABLE3_COUNTS],
            }
        ),
        encoding="utf-8",
    )
    return path


class TestCountsFile:
    def test_published_table_reanalyzed(self, tmp_path: Path):
        payload = analyze_counts_file(write_counts_file(tmp_path / "t3.json"))
        assert payload["chi_square"]["df"] == 6
        assert payload["chi_square"]["statistic"] == pytest.approx(62.376964, abs=1e-4)
        assert payload["distribution"]["VBAC"]["Risk-Focused"] == 75.1
        flagged = {c["row"] for c in payload["significant_cells"]}
        assert "Directive" not in flagged
        assert "Risk-Focused" in flagged

    def test_residuals_rounded_in_cells(self, tmp_path: Path):
        payload = analyze_counts_file(write_counts_file(tmp_path / "t3.json"))
        by_row = {
            (c["row"], c["col"]): c["residual"] for c in payload["significant_cells"]
        }
        assert by_row[("Risk-Focused", "RCS")] == 6.37
        assert by_row[("Shared Decision-Making", "RCS")] == -4.84
        assert by_row[("Balanced Information", "RCS")] == -2.31
        assert by_row[("Benefit-Focused", "RCS")] == -3.53
        assert by_row[("Statistical Evidence", "RCS")] == -3.41


class TestPayload:
    def test_expected_and_totals(self, table3):
        payload = contingency_payload(table3)
        assert payload["table"]["grand_total"] == 2007
        total_expected = sum(sum(row) for row in payload["expected"])
        assert total_expected == pytest.approx(2007)
        assert len(payload["residuals"]) == 7


class TestRenderText:
    def test_layout_and_summary_lines(self, table3):
        text = render_contingency_text(contingency_payload(table3))
        assert text.endswith("\n")
        lines = text.splitlines()
        assert lines[0].split() == ["RCS", "VBAC", "Total"]
        risk_line = next(line for line in lines if line.startswith("Risk-Focused"))
        assert "1110 (+6.37)" in risk_line
        assert "542 (-6.37)" in risk_line
        assert "1652" in risk_line
        assert any(line.startswith("Total") and "2007" in line for line in lines)
        assert "chi-square = 62.38, df = 6, p = 1.48e-11" in text
        flag_line = next(line for line in lines if "adjusted residual" in line)
        for name in (
            "Balanced Information",
            "Benefit-Focused",
            "Risk-Focused",
            "Shared Decision-Making",
            "Statistical Evidence",
        ):
            assert flag_line.count(name) == 1
        assert "Directive" not in flag_line

    def test_no_flagged_rows_prints_none(self):
        table = ContingencyTable(("a", "b"), ("RCS", "VBAC"), ((10, 20), (30, 60)))
        text = render_contingency_text(contingency_payload(table))
        assert "rows with |adjusted residual| > 2: none" in text


def resolved_row(
    record_id="r1",
    field="incision_types",
    item_index=0,
    extracted="text",
    verbatim=True,
    config_label="m:short",
    review=None,
):
    return {
        "record_id": record_id,
        "field": field,
        "item_index": item_index,
        "extracted": extracted,
        "verbatim_match": verbatim,
        "config_label": config_label,
        "review_category": review,
    }


class TestAuditReport:
    def test_nested_aggregation(self):
        rows = [
            resolved_row(),
            resolved_row(item_index=1, verbatim=False, review="ParaphraseAccurate"),
            resolved_row(record_id="r2", verbatim=False, review="Hallucination"),
            resolved_row(field="contraindications", config_label="m:long"),
        ]
        report = audit_report(rows)
        assert set(report) == {"m:short", "m:long"}
        cell = report["m:short"]["incision_types"]
        assert cell["n_total"] == 3
        assert cell["n_flagged"] == 2
        assert cell["group_counts"]["VerbatimMatch"] == 1
        assert cell["group_counts"]["NoHallucinationVariant"] == 1
        assert cell["group_counts"]["HallucinationVariant"] == 1
        assert cell["group_percentages"]["VerbatimMatch"] == pytest.approx(33.3)
        assert cell["fine_counts"]["Hallucination"] == 1
        assert cell["fine_percentages"]["Hallucination"] == pytest.approx(50.0)

    def test_unresolved_rows_refused(self):
        with pytest.raises(UnresolvedReviewError):
            audit_report([resolved_row(verbatim=False, review=None)])


class TestRecallReport:
    @pytest.fixture
    def sidecar(self, tmp_path: Path) -> Path:
        path = tmp_path / "ground_truth.json"
        path.write_text(
            json.dumps(
                {
                    "version": 1,
                    "seed": 0,
                    "patients": {
                        "r1": {
                            "planted_evidence": [
                                {"field": "incision_types", "text": "Low transverse documented."},
                                {"field": "contraindications", "text": "No previa."},
                            ]
                        },
                        "r2": {
                            "planted_evidence": [
                                {"field": "incision_types", "text": "Classical scar."}
                            ]
                        },
                    },
                }
            ),
            encoding="utf-8",
        )
        return path

    def test_full_recall(self, sidecar: Path):
        extractions = {
            "r1": {
                "incision_types": ["Low transverse documented."],
                "contraindications": ["No previa."],
                "previous_delivery_modes": None,
            },
            "r2": {
                "incision_types": ["Classical scar."],
                "contraindications": None,
                "previous_delivery_modes": None,
            },
        }
        report = recall_report(sidecar, extractions)
        assert report == {
            "n_records_extracted": 2,
            "n_planted": 3,
            "n_missed": 0,
            "recall": 1.0,
            "misses": [],
        }

    def test_miss_listed_and_recall_drops(self, sidecar: Path):
        extractions = {
            "r1": {
                "incision_types": ["Low transverse documented."],
                "contraindications": None,
                "previous_delivery_modes": None,
            },
            "r2": {
                "incision_types": ["Classical scar."],
                "contraindications": None,
                "previous_delivery_modes": None,
            },
        }
        report = recall_report(sidecar, extractions)
        assert report["n_missed"] == 1
        assert report["recall"] == pytest.approx(2 / 3)
        assert report["misses"] == [
            {"record_id": "r1", "field": "contraindications", "text": "No previa."}
        ]

    def test_error_payloads_out_of_scope(self, sidecar: Path):
        extractions = {
            "r1": {"error": "unparseable", "raw_response": "?"},
            "r2": {
                "incision_types": ["Classical scar."],
                "contraindications": None,
                "previous_delivery_modes": None,
            },
        }
        report = recall_report(sidecar, extractions)
        assert report["n_records_extracted"] == 1
        assert report["n_planted"] == 1
        assert report["recall"] == 1.0

    def test_empty_extractions(self, sidecar: Path):
        report = recall_report(sidecar, {})
        assert report["n_planted"] == 0
        assert report["recall"] == 1.0


@pytest.fixture(scope="module")
def run(tmp_path_factory) -> tuple[Path, Path]:
    corpus_dir = tmp_path_factory.mktemp("corpus")
    generate_corpus(SyntheticCorpusSpec(n_vbac=3, n_rcs=10, seed=5), corpus_dir)
    out_dir = tmp_path_factory.mktemp("run")
    Pipeline(
        PipelineConfig(
            notes_path=corpus_dir / "notes.jsonl",
            history_path=corpus_dir / "history.jsonl",
            out_dir=out_dir,
            sidecar_path=corpus_dir / "ground_truth.json",
            review_policy="auto",
        )
    ).run()
    return out_dir, corpus_dir / "ground_truth.json"


class TestBundle:
    def test_bundle_files(self, run):
        out_dir, sidecar = run
        written = build_report_bundle(out_dir, sidecar_path=sidecar)
        names = [p.name for p in written]
        assert names == list(REPORT_FILES) + ["recall.json"]
        for path in written:
            assert path.exists()
            assert path.parent == out_dir / "reports"

    def test_cohort_report_matches_finalize(self, run):
        out_dir, sidecar = run
        build_report_bundle(out_dir, sidecar_path=sidecar)
        cohort = json.loads((out_dir / "reports" / "cohort.json").read_text())
        finalize = json.loads((out_dir / "stages" / "finalize.json").read_text())
        assert cohort["record_ids"] == finalize["cohort_record_ids"]
        assert cohort["total"] == finalize["total"]

    def test_recall_is_perfect_for_echo_backend(self, run):
        out_dir, sidecar = run
        build_report_bundle(out_dir, sidecar_path=sidecar)
        recall = json.loads((out_dir / "reports" / "recall.json").read_text())
        assert recall["recall"] == 1.0
        assert recall["misses"] == []

    def test_reassembly_is_byte_identical(self, run):
        out_dir, sidecar = run
        build_report_bundle(out_dir, sidecar_path=sidecar)
        first = {
            p.name: p.read_bytes() for p in sorted((out_dir / "reports").iterdir())
        }
        build_report_bundle(out_dir, sidecar_path=sidecar)
        second = {
            p.name: p.read_bytes() for p in sorted((out_dir / "reports").iterdir())
        }
        assert first == second

    def test_without_sidecar_no_recall(self, run, tmp_path):
        out_dir, _ = run
        import shutil

        copy = tmp_path / "copy"
        shutil.copytree(out_dir / "stages", copy / "stages")
        written = build_report_bundle(copy)
        assert [p.name for p in written] == list(REPORT_FILES)
        assert not (copy / "reports" / "recall.json").exists()
