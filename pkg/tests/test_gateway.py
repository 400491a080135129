"""Backend gateway: caching, labels, mock oracles, and the HTTP client."""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import pytest
import requests

from hybridpool.gateway import (
    API_KEY_ENV,
    BINARY_LABELS,
    NEGATIVE_LABEL,
    POSITIVE_LABEL,
    BackendRejected,
    BackendUnreachable,
    BinaryLabel,
    Gateway,
    HttpChatBackend,
    MissingAuditHeader,
    MockOracleBackend,
    PromptRequest,
    REPROMPT_REMINDER,
    Timeout,
    audit_header,
    match_label,
    mock_oracle,
    normalize_reply,
    parse_audit_header,
    prompt_digest,
)
from hybridpool.trec_io import Qrels


def judge_request(topic: str = "t1", doc: str = "d1", **kwargs) -> PromptRequest:
    header = audit_header("judge", topic=topic, doc=doc)
    defaults = dict(
        system_text="You judge relevance.",
        user_text=f"Judge this.\n{header}\nDocument text here.",
        max_output_tokens=8,
        constraint=BINARY_LABELS,
    )
    defaults.update(kwargs)
    return PromptRequest(**defaults)


def small_gold() -> Qrels:
    qrels = Qrels()
    qrels.add("t1", "d1", 1, "gold")
    qrels.add("t1", "d2", 0, "gold")
    qrels.add("t1", "d3", 2, "gold")
    return qrels


class ScriptedBackend:
    """Replays a fixed list of replies and records every request."""

    def __init__(self, replies: list[str], backend_id: str = "scripted"):
        self.replies = list(replies)
        self.requests: list[PromptRequest] = []
        self.backend_id = backend_id
        self.supports_constraints = False

    def generate(self, request: PromptRequest) -> str:
        self.requests.append(request)
        return self.replies.pop(0)


class CountingBackend:
    def __init__(self, reply: str = POSITIVE_LABEL, delay_s: float = 0.0):
        self.reply = reply
        self.delay_s = delay_s
        self.calls = 0
        self.active = 0
        self.max_active = 0
        self.backend_id = "counting"
        self.supports_constraints = True
        self._lock = threading.Lock()

    def generate(self, request: PromptRequest) -> str:
        with self._lock:
            self.calls += 1
            self.active += 1
            self.max_active = max(self.max_active, self.active)
        if self.delay_s:
            time.sleep(self.delay_s)
        with self._lock:
            self.active -= 1
        return self.reply


# ---------------------------------------------------------------------------
# audit headers


class TestAuditHeader:
    def test_round_trip(self):
        header = audit_header("judge", topic="t1", doc="d9")
        assert header == "#audit: kind=judge doc=d9 topic=t1"
        assert parse_audit_header(header) == {"kind": "judge", "doc": "d9", "topic": "t1"}

    def test_fields_sorted_and_spaces_escaped(self):
        header = audit_header("narrative", variant="all judged", topic="t2")
        assert header == "#audit: kind=narrative topic=t2 variant=all_judged"

    def test_found_anywhere_in_text(self):
        text = "intro line\n" + audit_header("judge", topic="t", doc="d") + "\nbody"
        assert parse_audit_header(text)["kind"] == "judge"

    def test_missing_header(self):
        with pytest.raises(MissingAuditHeader):
            parse_audit_header("no header at all")

    def test_header_without_kind(self):
        with pytest.raises(MissingAuditHeader):
            parse_audit_header("#audit: topic=t1")


# ---------------------------------------------------------------------------
# requests and digests


class TestPromptRequest:
    def test_empty_user_text_rejected(self):
        with pytest.raises(ValueError):
            PromptRequest(system_text="s", user_text="")

    def test_negative_temperature_rejected(self):
        with pytest.raises(ValueError):
            PromptRequest(system_text="", user_text="u", temperature=-0.1)

    def test_constrained_output_budget_checked(self):
        with pytest.raises(ValueError):
            PromptRequest(
                system_text="", user_text="u", max_output_tokens=1,
                constraint=BINARY_LABELS,
            )

    def test_digest_covers_prompt_content(self):
        base = judge_request()
        assert prompt_digest("b", base) == prompt_digest("b", judge_request())
        assert prompt_digest("b", base) != prompt_digest("other", base)
        assert prompt_digest("b", base) != prompt_digest(
            "b", judge_request(user_text="different\n#audit: kind=judge")
        )
        assert prompt_digest("b", base) != prompt_digest(
            "b", judge_request(system_text="other system")
        )
        assert prompt_digest("b", base) != prompt_digest(
            "b", judge_request(constraint=None)
        )
        assert prompt_digest("b", base) != prompt_digest(
            "b", judge_request(temperature=0.7)
        )

    def test_digest_ignores_bookkeeping_fields(self):
        # Output budget and truncation notes never affect completion reuse.
        assert prompt_digest("b", judge_request(max_output_tokens=8)) == prompt_digest(
            "b", judge_request(max_output_tokens=64)
        )
        assert prompt_digest(
            "b", judge_request(truncated_sources=("document",))
        ) == prompt_digest("b", judge_request())


# ---------------------------------------------------------------------------
# reply normalization


class TestLabelMatching:
    @pytest.mark.parametrize(
        "raw,expected",
        [
            ("Relevant", POSITIVE_LABEL),
            (" relevant. ", POSITIVE_LABEL),
            ('"RELEVANT"', POSITIVE_LABEL),
            ("Relevant, because it covers the topic.", POSITIVE_LABEL),
            ("Not Relevant", NEGATIVE_LABEL),
            ("not   relevant!!", NEGATIVE_LABEL),
            ("NOT RELEVANT: off topic", NEGATIVE_LABEL),
            ("maybe", None),
            ("irrelevant", None),
            ("", None),
        ],
    )
    def test_match(self, raw, expected):
        assert match_label(raw, BINARY_LABELS) == expected

    def test_longest_label_checked_first(self):
        # A negative answer must never prefix-match the positive label.
        assert match_label("Not Relevant", BINARY_LABELS) == NEGATIVE_LABEL

    def test_normalize_collapses_whitespace_and_case(self):
        assert normalize_reply("  Not\t RELEVANT.  ") == "not relevant"


# ---------------------------------------------------------------------------
# mock oracles


class TestMockOracle:
    def test_faithful_reads_gold(self):
        backend = mock_oracle(small_gold(), "faithful")
        assert backend.generate(judge_request("t1", "d1")) == POSITIVE_LABEL
        assert backend.generate(judge_request("t1", "d2")) == NEGATIVE_LABEL

    def test_unjudged_pair_is_nonrelevant(self):
        backend = mock_oracle(small_gold(), "faithful")
        assert backend.generate(judge_request("t9", "dx")) == NEGATIVE_LABEL

    def test_inverted_negates_gold(self):
        backend = mock_oracle(small_gold(), "inverted")
        assert backend.generate(judge_request("t1", "d1")) == NEGATIVE_LABEL
        assert backend.generate(judge_request("t1", "d2")) == POSITIVE_LABEL

    def test_noisy_zero_probability_is_faithful(self):
        backend = mock_oracle(small_gold(), "noisy", flip_probability=0.0)
        assert backend.generate(judge_request("t1", "d1")) == POSITIVE_LABEL

    def test_noisy_certain_flip_is_inverted(self):
        backend = mock_oracle(small_gold(), "noisy", flip_probability=1.0, seed=4)
        assert backend.generate(judge_request("t1", "d1")) == NEGATIVE_LABEL
        assert backend.generate(judge_request("t1", "d2")) == POSITIVE_LABEL

    def test_noisy_is_per_pair_deterministic(self):
        first = mock_oracle(small_gold(), "noisy", flip_probability=0.5, seed=9)
        second = mock_oracle(small_gold(), "noisy", flip_probability=0.5, seed=9)
        pairs = [("t1", "d1"), ("t1", "d2"), ("t1", "d3")]
        forward = [first.generate(judge_request(t, d)) for t, d in pairs]
        backward = [second.generate(judge_request(t, d)) for t, d in reversed(pairs)]
        assert forward == list(reversed(backward))

    def test_seed_in_noisy_backend_id(self):
        backend = mock_oracle(small_gold(), "noisy", flip_probability=0.3, seed=7)
        assert backend.backend_id == "mock:noisy:p=0.3:seed=7"
        assert mock_oracle(small_gold(), "faithful").backend_id == "mock:faithful"

    def test_narrative_prompts_get_template_reply(self):
        backend = mock_oracle(small_gold(), "faithful")
        header = audit_header("narrative", topic="t1", variant="relevant_only")
        reply = backend.generate(
            PromptRequest(system_text="", user_text=f"x\n{header}\nevidence")
        )
        assert reply.startswith("NARRATIVE:")
        assert "INSTRUCTIONS:" in reply
        assert "t1" in reply and "relevant_only" in reply

    def test_prompt_without_audit_header_rejected(self):
        backend = mock_oracle(small_gold(), "faithful")
        with pytest.raises(MissingAuditHeader):
            backend.generate(PromptRequest(system_text="", user_text="bare prompt"))

    def test_judge_prompt_without_attribution_rejected(self):
        backend = mock_oracle(small_gold(), "faithful")
        with pytest.raises(MissingAuditHeader):
            backend.generate(
                PromptRequest(system_text="", user_text="#audit: kind=judge topic=t1")
            )

    def test_relevance_threshold(self):
        backend = MockOracleBackend(small_gold(), "faithful", relevance_threshold=2)
        assert backend.generate(judge_request("t1", "d1")) == NEGATIVE_LABEL  # grade 1
        assert backend.generate(judge_request("t1", "d3")) == POSITIVE_LABEL  # grade 2

    def test_invalid_mode_and_probability(self):
        with pytest.raises(ValueError):
            mock_oracle(small_gold(), "psychic")
        with pytest.raises(ValueError):
            mock_oracle(small_gold(), "noisy", flip_probability=1.5)


# ---------------------------------------------------------------------------
# gateway caching and concurrency


class TestGatewayCache:
    def test_miss_then_hit(self, tmp_path):
        backend = CountingBackend()
        gateway = Gateway(backend, cache_dir=tmp_path / "cache")
        request = judge_request()
        first = gateway.complete(request)
        second = gateway.complete(request)
        assert (first.from_cache, second.from_cache) == (False, True)
        assert first.text == second.text == POSITIVE_LABEL
        assert backend.calls == 1
        assert first.prompt_hash == second.prompt_hash

    def test_cache_file_holds_request_and_reply(self, tmp_path):
        gateway = Gateway(CountingBackend(), cache_dir=tmp_path)
        request = judge_request()
        completion = gateway.complete(request)
        entry = json.loads((tmp_path / f"{completion.prompt_hash}.json").read_text())
        assert entry["reply"] == POSITIVE_LABEL
        assert entry["backend_id"] == "counting"
        assert entry["request"]["user_text"] == request.user_text
        assert entry["request"]["constraint"] == list(BINARY_LABELS)

    def test_cache_survives_new_gateway(self, tmp_path):
        first_backend = CountingBackend()
        Gateway(first_backend, cache_dir=tmp_path).complete(judge_request())
        second_backend = CountingBackend(reply=NEGATIVE_LABEL)
        completion = Gateway(second_backend, cache_dir=tmp_path).complete(judge_request())
        assert completion.from_cache
        assert completion.text == POSITIVE_LABEL  # served from disk, not the backend
        assert second_backend.calls == 0

    def test_no_cache_dir_always_generates(self):
        backend = CountingBackend()
        gateway = Gateway(backend, cache_dir=None)
        gateway.complete(judge_request())
        gateway.complete(judge_request())
        assert backend.calls == 2

    def test_different_backends_do_not_share_entries(self, tmp_path):
        request = judge_request()
        a = Gateway(CountingBackend(), cache_dir=tmp_path)
        b_backend = ScriptedBackend([NEGATIVE_LABEL], backend_id="other")
        b = Gateway(b_backend, cache_dir=tmp_path)
        assert a.complete(request).text == POSITIVE_LABEL
        assert b.complete(request).text == NEGATIVE_LABEL

    def test_concurrency_bounded(self, tmp_path):
        backend = CountingBackend(delay_s=0.05)
        gateway = Gateway(backend, cache_dir=None, max_concurrency=2)
        requests_ = [judge_request(doc=f"d{i}") for i in range(8)]
        with ThreadPoolExecutor(max_workers=8) as pool:
            list(pool.map(gateway.complete, requests_))
        assert backend.calls == 8
        assert backend.max_active <= 2

    def test_invalid_concurrency(self):
        with pytest.raises(ValueError):
            Gateway(CountingBackend(), max_concurrency=0)


# ---------------------------------------------------------------------------
# constrained judging


class TestConstrainedJudge:
    def test_positive_and_negative(self, tmp_path):
        gateway = Gateway(mock_oracle(small_gold(), "faithful"), cache_dir=tmp_path)
        assert gateway.constrained_judge(judge_request("t1", "d1")) == BinaryLabel(
            value=1, raw_text=POSITIVE_LABEL
        )
        assert gateway.constrained_judge(judge_request("t1", "d2")).value == 0

    def test_sloppy_reply_normalized_without_reprompt(self):
        backend = ScriptedBackend(["  relevant, clearly. "])
        label = Gateway(backend).constrained_judge(judge_request())
        assert label.value == 1 and not label.forced_default
        assert len(backend.requests) == 1

    def test_reprompt_recovers(self):
        backend = ScriptedBackend(["I think it could be either.", "Not Relevant"])
        label = Gateway(backend).constrained_judge(judge_request())
        assert label.value == 0 and not label.forced_default
        assert len(backend.requests) == 2
        assert backend.requests[1].user_text.endswith(REPROMPT_REMINDER)

    def test_unparseable_after_reprompt_defaults_nonrelevant(self, caplog):
        backend = ScriptedBackend(["mu", "still mu"])
        label = Gateway(backend).constrained_judge(judge_request())
        assert label == BinaryLabel(value=0, raw_text="still mu", forced_default=True)

    def test_requires_binary_constraint(self):
        gateway = Gateway(CountingBackend())
        with pytest.raises(ValueError):
            gateway.constrained_judge(judge_request(constraint=None))
        with pytest.raises(ValueError):
            gateway.constrained_judge(judge_request(constraint=("Yes", "No")))


# ---------------------------------------------------------------------------
# HTTP backend


class FakeResponse:
    def __init__(self, status_code: int, body: dict | None = None, text: str = ""):
        self.status_code = status_code
        self._body = body
        self.text = text or (json.dumps(body) if body is not None else "")

    def json(self):
        if self._body is None:
            raise ValueError("no body")
        return self._body


class FakeSession:
    def __init__(self, outcomes: list):
        self.outcomes = list(outcomes)
        self.calls: list[dict] = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append(
            {"url": url, "json": json, "headers": headers, "timeout": timeout}
        )
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def ok_response(content: str = "Relevant") -> FakeResponse:
    return FakeResponse(200, {"choices": [{"message": {"content": content}}]})


def http_backend(session: FakeSession, **kwargs) -> HttpChatBackend:
    defaults = dict(
        base_url="http://llm.internal/v1/", model="judge-1", backoff_s=0.0,
        session=session,
    )
    defaults.update(kwargs)
    return HttpChatBackend(**defaults)


class TestHttpChatBackend:
    def test_success_payload_shape(self, monkeypatch):
        monkeypatch.delenv(API_KEY_ENV, raising=False)
        session = FakeSession([ok_response("Not Relevant")])
        backend = http_backend(session)
        reply = backend.generate(judge_request())
        assert reply == "Not Relevant"
        call = session.calls[0]
        assert call["url"] == "http://llm.internal/v1/chat/completions"
        payload = call["json"]
        assert payload["model"] == "judge-1"
        assert payload["temperature"] == 0.0
        assert payload["max_tokens"] == 8
        assert [m["role"] for m in payload["messages"]] == ["system", "user"]
        assert call["headers"] == {}
        assert backend.backend_id == "http:judge-1"

    def test_empty_system_message_omitted(self):
        session = FakeSession([ok_response()])
        http_backend(session).generate(judge_request(system_text=""))
        assert [m["role"] for m in session.calls[0]["json"]["messages"]] == ["user"]

    def test_bearer_token_from_environment(self, monkeypatch):
        monkeypatch.setenv(API_KEY_ENV, "sekrit")
        session = FakeSession([ok_response()])
        http_backend(session).generate(judge_request())
        assert session.calls[0]["headers"]["Authorization"] == "Bearer sekrit"

    def test_constraint_forwarded_when_supported(self):
        session = FakeSession([ok_response()])
        backend = http_backend(session, constraint_key="allowed_completions")
        assert backend.supports_constraints
        backend.generate(judge_request())
        assert session.calls[0]["json"]["allowed_completions"] == list(BINARY_LABELS)

    def test_constraint_dropped_when_unsupported(self):
        session = FakeSession([ok_response()])
        backend = http_backend(session)
        assert not backend.supports_constraints
        backend.generate(judge_request())
        assert "allowed_completions" not in session.calls[0]["json"]

    def test_retries_on_429_then_succeeds(self):
        session = FakeSession([FakeResponse(429, text="slow down"), ok_response()])
        assert http_backend(session).generate(judge_request()) == "Relevant"
        assert len(session.calls) == 2

    def test_persistent_server_error_raises_after_retries(self):
        session = FakeSession([FakeResponse(500, text="boom")] * 4)
        with pytest.raises(BackendRejected) as excinfo:
            http_backend(session, retries=3).generate(judge_request())
        assert excinfo.value.status == 500
        assert len(session.calls) == 4

    def test_client_error_fails_immediately(self):
        session = FakeSession([FakeResponse(400, text="bad request")] * 2)
        with pytest.raises(BackendRejected) as excinfo:
            http_backend(session).generate(judge_request())
        assert excinfo.value.status == 400
        assert len(session.calls) == 1

    def test_timeout_exhausts_retries(self):
        session = FakeSession([requests.Timeout()] * 3)
        with pytest.raises(Timeout):
            http_backend(session, retries=2).generate(judge_request())
        assert len(session.calls) == 3

    def test_connection_error_maps_to_unreachable(self):
        session = FakeSession([requests.ConnectionError("refused")] * 2)
        with pytest.raises(BackendUnreachable):
            http_backend(session, retries=1).generate(judge_request())

    def test_malformed_completion_body(self):
        session = FakeSession([FakeResponse(200, {"unexpected": True})])
        with pytest.raises(BackendRejected):
            http_backend(session).generate(judge_request())
