from __future__ import annotations

import json
import string

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from counselframe.extraction import ExtractionResult
from counselframe.grounding import (
    FLAG_LOG_KEYS,
    REVIEW_TO_GROUP,
    AuditRecord,
    OutcomeGroup,
    ReviewCategory,
    UnresolvedReviewError,
    aggregate_audit,
    flag_log_payload,
    normalize,
    verify_verbatim,
    write_flag_log,
)


class TestNormalize:
    def test_worked_example(self):
        assert normalize("Low-Transverse  C/S.") == "lowtransverse cs"

    def test_casefold_and_trim(self):
        assert normalize("  VBAC Candidate ") == "vbac candidate"

    def test_whitespace_collapse(self):
        assert normalize("a\t b\n\nc") == "a b c"

    def test_punctuation_removed_before_collapse(self):
        assert normalize("x - y") == "x y"
        assert normalize("C/S") == "cs"

    @settings(max_examples=200)
    @given(st.text(max_size=120))
    def test_idempotent(self, text):
        assert normalize(normalize(text)) == normalize(text)

    @settings(max_examples=200)
    @given(st.text(max_size=120))
    def test_output_has_no_punctuation_or_runs(self, text):
        out = normalize(text)
        assert not any(c in string.punctuation for c in out)
        assert "  " not in out
        assert out == out.strip()


def result(**kw) -> ExtractionResult:
    base = dict(incision_types=None, contraindications=None, previous_delivery_modes=None)
    base.update(kw)
    return ExtractionResult(**base)


NOTE = (
    "Obstetric history with a prior Low-Transverse  C/S. documented; "
    "hx of cesarean section with an uncomplicated course."
)


class TestVerifyVerbatim:
    def test_null_fields_contribute_nothing(self):
        assert verify_verbatim(result(), NOTE, "r") == []

    def test_substring_after_normalization_matches(self):
        audits = verify_verbatim(
            result(incision_types=("low-transverse c/s",)), NOTE, "r"
        )
        assert len(audits) == 1
        assert audits[0].verbatim_match
        assert audits[0].outcome_group is OutcomeGroup.VERBATIM_MATCH

    def test_absent_string_flagged(self):
        audits = verify_verbatim(
            result(contraindications=("placenta previa",)), NOTE, "r"
        )
        assert audits[0].flagged
        assert audits[0].outcome_group is None

    def test_paraphrase_is_flagged_until_reviewed(self):
        audits = verify_verbatim(
            result(previous_delivery_modes=("history of cesarean section",)), NOTE, "r"
        )
        audit = audits[0]
        assert audit.flagged
        audit.resolve(ReviewCategory.PARAPHRASE_ACCURATE)
        assert audit.outcome_group is OutcomeGroup.NO_HALLUCINATION_VARIANT

    def test_one_record_per_element_in_order(self):
        audits = verify_verbatim(
            result(
                incision_types=("low-transverse c/s", "vertical scar"),
                previous_delivery_modes=("cesarean section",),
            ),
            NOTE,
            "r",
            config_label="m:short",
        )
        assert [a.item_index for a in audits] == [0, 1, 0]
        assert [a.field for a in audits] == [
            "incision_types",
            "incision_types",
            "previous_delivery_modes",
        ]
        assert audits[0].audit_id == "m:short/r/incision_types/0"

    def test_resolve_verbatim_rejected(self):
        audits = verify_verbatim(result(incision_types=("cesarean",)), NOTE, "r")
        assert audits[0].verbatim_match
        with pytest.raises(ValueError, match="verbatim"):
            audits[0].resolve(ReviewCategory.HALLUCINATION)


class TestAuditRecord:
    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError):
            AuditRecord("r", "bogus_field", 0, "x", verbatim_match=True)

    def test_verbatim_cannot_carry_review(self):
        with pytest.raises(ValueError):
            AuditRecord(
                "r",
                "incision_types",
                0,
                "x",
                verbatim_match=True,
                review_category=ReviewCategory.HALLUCINATION,
            )


class TestReviewTaxonomy:
    def test_three_by_three_grouping(self):
        groups = {REVIEW_TO_GROUP[c] for c in ReviewCategory}
        assert groups == {
            OutcomeGroup.NO_HALLUCINATION_VARIANT,
            OutcomeGroup.HALLUCINATION_VARIANT,
        }
        no_h = [c for c in ReviewCategory if REVIEW_TO_GROUP[c] is OutcomeGroup.NO_HALLUCINATION_VARIANT]
        assert set(no_h) == {
            ReviewCategory.PARAPHRASE_ACCURATE,
            ReviewCategory.TYPO_IN_ORIGINAL,
            ReviewCategory.TYPO_IN_GENERATED,
        }


class TestFlagLog:
    def test_exact_three_keys(self, tmp_path):
        audits = verify_verbatim(
            result(incision_types=("not documented",)), NOTE, "r"
        )
        path = tmp_path / "flags.json"
        payload = write_flag_log(audits, path)
        assert set(payload) == {
            "hallucinated_incision_types",
            "hallucinated_contraindications",
            "hallucinated_previous_delivery_modes",
        }
        assert payload["hallucinated_incision_types"] == ["not documented"]
        assert payload["hallucinated_contraindications"] == []
        assert json.loads(path.read_text()) == payload

    def test_only_flagged_strings_logged(self):
        audits = verify_verbatim(
            result(incision_types=("cesarean", "made-up thing")), NOTE, "r"
        )
        payload = flag_log_payload(audits)
        assert payload["hallucinated_incision_types"] == ["made-up thing"]

    def test_mixed_records_rejected(self):
        a = AuditRecord("r1", "incision_types", 0, "x", verbatim_match=False)
        b = AuditRecord("r2", "incision_types", 0, "y", verbatim_match=False)
        with pytest.raises(ValueError, match="mixes records"):
            flag_log_payload([a, b])

    def test_field_to_key_mapping(self):
        assert FLAG_LOG_KEYS == {
            "incision_types": "hallucinated_incision_types",
            "contraindications": "hallucinated_contraindications",
            "previous_delivery_modes": "hallucinated_previous_delivery_modes",
        }


class TestAggregate:
    def _audit(self, verbatim: bool, category: ReviewCategory | None = None, **kw) -> AuditRecord:
        defaults = dict(
            record_id="r", field="incision_types", item_index=0, extracted="x",
            config_label="m:short",
        )
        defaults.update(kw)
        audit = AuditRecord(verbatim_match=verbatim, **defaults)
        if category is not None:
            audit.resolve(category)
        return audit

    def test_unresolved_flag_aborts(self):
        with pytest.raises(UnresolvedReviewError) as err:
            aggregate_audit([self._audit(False)])
        assert "m:short/r/incision_types/0" in err.value.audit_ids

    def test_cell_percentages(self):
        audits = [
            self._audit(True, item_index=0),
            self._audit(True, item_index=1),
            self._audit(False, ReviewCategory.PARAPHRASE_ACCURATE, item_index=2),
            self._audit(False, ReviewCategory.HALLUCINATION, item_index=3),
        ]
        cells = aggregate_audit(audits)
        cell = cells[("m:short", "incision_types")]
        assert cell.n_total == 4
        assert cell.n_flagged == 2
        assert cell.group_percentages[OutcomeGroup.VERBATIM_MATCH] == pytest.approx(50.0)
        assert cell.group_percentages[OutcomeGroup.HALLUCINATION_VARIANT] == pytest.approx(25.0)
        # Fine-grained shares are over the flagged subset.
        assert cell.fine_percentages[ReviewCategory.PARAPHRASE_ACCURATE] == pytest.approx(50.0)

    def test_cells_keyed_by_config_and_field(self):
        audits = [
            self._audit(True),
            self._audit(True, field="contraindications"),
            self._audit(True, config_label="m:long"),
        ]
        cells = aggregate_audit(audits)
        assert set(cells) == {
            ("m:short", "incision_types"),
            ("m:short", "contraindications"),
            ("m:long", "incision_types"),
        }


# -- generated (note, extraction) pairs ---------------------------------------

words = st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=2, max_size=8)
notes = st.lists(words, min_size=3, max_size=30).map(" ".join)


@settings(max_examples=200)
@given(notes, st.data())
def test_soundness_verbatim_substring_never_flagged(note, data):
    """Any raw substring of the note passes the audit once non-blank."""
    start = data.draw(st.integers(min_value=0, max_value=len(note) - 1))
    stop = data.draw(st.integers(min_value=start + 1, max_value=len(note)))
    snippet = note[start:stop]
    if not normalize(snippet):
        return
    audits = verify_verbatim(result(incision_types=(snippet,)), note, "r")
    assert audits[0].verbatim_match


@settings(max_examples=200)
@given(notes, words)
def test_completeness_absent_string_always_flagged(note, foreign):
    """A string whose normalized form is absent from the note is flagged."""
    if normalize(foreign) in normalize(note):
        return
    audits = verify_verbatim(result(contraindications=(foreign,)), note, "r")
    assert audits[0].flagged
