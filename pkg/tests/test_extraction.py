from __future__ import annotations

import json

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from counselframe import extraction
from counselframe.corpus import DeliveryGroup, PatientRecord
from counselframe.extraction import (
    NOTE_DELIMITER,
    REPAIR_SUFFIX,
    SCHEMA_KEYS,
    ChatCompletionBackend,
    ExtractionError,
    ExtractionResult,
    PromptConfig,
    PromptVariant,
    SchemaViolation,
    UnparseableResponseError,
    build_prompt,
    extract,
    parse_response,
    strip_code_fences,
)

GOOD_REPLY = json.dumps(
    {
        "incision_types": ["low transverse"],
        "contraindications": None,
        "previous_delivery_modes": ["cesarean section"],
    }
)


class ScriptedBackend:
    """Replays canned completions and records the prompts it saw."""

    model_name = "scripted"

    def __init__(self, replies: list[str]):
        self.replies = list(replies)
        self.prompts: list[str] = []

    def complete(self, prompt: str) -> str:
        self.prompts.append(prompt)
        return self.replies.pop(0)


def record(narrative: str = "Hx of cesarean section. Otherwise unremarkable.") -> PatientRecord:
    return PatientRecord("p1", narrative, DeliveryGroup.RCS, prior_cesarean=True)


class TestPrompt:
    def test_narrative_is_last_after_delimiter(self):
        for variant in PromptVariant:
            prompt = build_prompt(variant, "THE NOTE BODY")
            head, _, tail = prompt.rpartition(NOTE_DELIMITER)
            assert head  # delimiter present
            assert tail == "THE NOTE BODY"

    def test_long_variant_adds_decomposition(self):
        short = build_prompt(PromptVariant.SHORT, "x")
        long = build_prompt(PromptVariant.LONG, "x")
        assert len(long) > len(short)
        assert "verbatim" in short.lower() and "verbatim" in long.lower()

    def test_empty_narrative_rejected(self):
        with pytest.raises(ValueError):
            build_prompt(PromptVariant.SHORT, "")

    def test_config_label(self):
        config = PromptConfig(PromptVariant.LONG, "m1")
        assert config.label == "m1:long"


class TestParsing:
    def test_plain_object(self):
        result = parse_response(GOOD_REPLY, PromptVariant.SHORT)
        assert result.incision_types == ("low transverse",)
        assert result.contraindications is None
        assert result.raw_response == GOOD_REPLY

    def test_code_fence_stripped(self):
        fenced = f"```json\n{GOOD_REPLY}\n```"
        assert strip_code_fences(fenced) == GOOD_REPLY
        assert parse_response(fenced, PromptVariant.SHORT).incision_types == (
            "low transverse",
        )

    def test_surrounding_prose_ignored(self):
        chatty = f"Sure, here is the JSON you asked for:\n{GOOD_REPLY}\nHope that helps!"
        assert parse_response(chatty, PromptVariant.SHORT).previous_delivery_modes == (
            "cesarean section",
        )

    def test_braces_inside_strings_handled(self):
        reply = json.dumps(
            {
                "incision_types": ['scar described as "{irregular}"'],
                "contraindications": None,
                "previous_delivery_modes": None,
            }
        )
        got = parse_response(f"noise {reply} trailing", PromptVariant.SHORT)
        assert got.incision_types == ('scar described as "{irregular}"',)

    def test_empty_list_collapses_to_null(self):
        reply = json.dumps(
            {"incision_types": [], "contraindications": None, "previous_delivery_modes": None}
        )
        got = parse_response(reply, PromptVariant.SHORT)
        assert got.incision_types is None
        assert got.is_empty

    @pytest.mark.parametrize(
        "payload",
        [
            "no json here at all",
            '{"incision_types": null}',
            '{"incision_types": "str", "contraindications": null, "previous_delivery_modes": null}',
            '{"incision_types": [""], "contraindications": null, "previous_delivery_modes": null}',
            '{"incision_types": [1], "contraindications": null, "previous_delivery_modes": null}',
            '["not", "an", "object"]',
            '{"incision_types": [',
        ],
    )
    def test_schema_violations(self, payload):
        with pytest.raises(SchemaViolation):
            parse_response(payload, PromptVariant.SHORT)

    def test_result_field_items_in_schema_order(self):
        result = ExtractionResult(("a",), ("b", "c"), None)
        assert result.field_items() == [
            ("incision_types", "a"),
            ("contraindications", "b"),
            ("contraindications", "c"),
        ]

    def test_result_rejects_empty_tuple(self):
        with pytest.raises(ValueError):
            ExtractionResult((), None, None)


class TestExtract:
    def _config(self) -> PromptConfig:
        return PromptConfig(PromptVariant.SHORT, "scripted")

    def test_clean_first_attempt(self):
        backend = ScriptedBackend([GOOD_REPLY])
        result = extract(record(), backend, self._config())
        assert result.incision_types == ("low transverse",)
        assert len(backend.prompts) == 1

    def test_single_repair_reask(self):
        backend = ScriptedBackend(["not json", GOOD_REPLY])
        result = extract(record(), backend, self._config())
        assert result.previous_delivery_modes == ("cesarean section",)
        assert len(backend.prompts) == 2
        assert backend.prompts[1] == backend.prompts[0] + REPAIR_SUFFIX

    def test_fails_closed_after_second_failure(self):
        backend = ScriptedBackend(["still not json", "also broken"])
        with pytest.raises(UnparseableResponseError) as err:
            extract(record(), backend, self._config())
        assert err.value.record_id == "p1"
        assert err.value.raw_response == "also broken"
        assert len(backend.prompts) == 2

    def test_context_limit_enforced(self):
        backend = ScriptedBackend([GOOD_REPLY])
        backend.context_limit = 10
        with pytest.raises(extraction.ContextLengthError):
            extract(record("A narrative longer than ten characters."), backend, self._config())


class TestChatCompletionBackend:
    def _backend(self, **kw) -> ChatCompletionBackend:
        kw.setdefault("backoff_seconds", 0.0)
        return ChatCompletionBackend("http://api.test/v1", "m", **kw)

    def _response(self, status: int, content: str = "ok") -> httpx.Response:
        return httpx.Response(
            status,
            json={"choices": [{"message": {"content": content}}]},
            request=httpx.Request("POST", "http://api.test/v1/chat/completions"),
        )

    def test_success_payload_shape(self, monkeypatch):
        seen = {}

        def fake_post(url, json=None, headers=None, timeout=None):
            seen.update(url=url, json=json, headers=headers)
            return self._response(200, "REPLY")

        monkeypatch.setattr(extraction.httpx, "post", fake_post)
        monkeypatch.setenv("COUNSELFRAME_API_TOKEN", "tok")
        backend = self._backend()
        assert backend.complete("hello") == "REPLY"
        assert seen["url"] == "http://api.test/v1/chat/completions"
        assert seen["json"]["messages"] == [{"role": "user", "content": "hello"}]
        assert seen["json"]["model"] == "m"

    def test_bearer_token_from_env(self, monkeypatch):
        monkeypatch.setenv("MY_TOKEN", "s3cret")
        captured = {}

        def fake_post(url, json=None, headers=None, timeout=None):
            captured["headers"] = headers
            return self._response(200)

        monkeypatch.setattr(extraction.httpx, "post", fake_post)
        self._backend(token_env="MY_TOKEN").complete("x")
        assert captured["headers"] == {"Authorization": "Bearer s3cret"}

    def test_retries_transient_5xx_then_succeeds(self, monkeypatch):
        responses = [self._response(503), self._response(200, "fine")]
        monkeypatch.setattr(
            extraction.httpx, "post", lambda *a, **kw: responses.pop(0)
        )
        monkeypatch.setattr(extraction.time, "sleep", lambda s: None)
        assert self._backend().complete("x") == "fine"

    def test_gives_up_after_max_attempts(self, monkeypatch):
        calls = []

        def fake_post(*a, **kw):
            calls.append(1)
            raise httpx.ConnectError("down")

        monkeypatch.setattr(extraction.httpx, "post", fake_post)
        monkeypatch.setattr(extraction.time, "sleep", lambda s: None)
        with pytest.raises(ExtractionError, match="after 3 attempts"):
            self._backend().complete("x")
        assert len(calls) == 3

    def test_4xx_raises_immediately(self, monkeypatch):
        monkeypatch.setattr(
            extraction.httpx, "post", lambda *a, **kw: self._response(401)
        )
        with pytest.raises(httpx.HTTPStatusError):
            self._backend().complete("x")


@settings(max_examples=100)
@given(
    st.fixed_dictionaries(
        {
            key: st.one_of(
                st.none(),
                st.lists(st.text(min_size=1, max_size=20).filter(str.strip), max_size=3),
            )
            for key in SCHEMA_KEYS
        }
    )
)
def test_parse_round_trip_property(payload):
    """Any schema-shaped reply parses, with empty lists collapsing to null."""
    raw = json.dumps(payload)
    result = parse_response(raw, PromptVariant.SHORT)
    for key in SCHEMA_KEYS:
        sent = payload[key]
        got = getattr(result, key)
        if not sent:
            assert got is None
        else:
            assert got == tuple(sent)
