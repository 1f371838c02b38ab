import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given, strategies as st

from dialex.corpus import DomainSchema, EntityTypeDef, KeyInfo, RetrievalExample, Turn
from dialex.inference import (
    BackendError,
    MockRule,
    ParseError,
    PromptBundle,
    RemoteChatBackend,
    ScriptedMock,
    build_baseline_prompt,
    build_expert_prompt,
    build_manager_prompt,
    parse_expert_response,
    parse_manager_response,
    parse_tagged_lines,
    render_expert_response,
    render_tagged_lines,
)
from dialex.retriever import QueryParts, ScoredExample

QUERY = QueryParts("need a diesel suv", "hello need a diesel suv", "what do you need")

AUTO_SCHEMA = DomainSchema(
    domain="automotive",
    entity_types=(
        EntityTypeDef("engine_type", "Engine or energy type."),
        EntityTypeDef("brand", "Manufacturer brand."),
        EntityTypeDef("budget", "Amount to spend."),
    ),
)


def scored(eid, value, score, keys=()):
    return ScoredExample(
        example=RetrievalExample(
            example_id=eid,
            source_dialogue_id=f"src-{eid}",
            domain="automotive",
            entity_type="engine_type",
            entity_value=value,
            local_context=(Turn("user", f"talking about {value}", 0),),
            key_info=KeyInfo(tuple(keys), ()),
        ),
        score=score,
        signal_breakdown=(score, 0.0, 0.0),
    )


# -- output format ------------------------------------------------------------

class TestFormat:
    def test_render_parse_round_trip_fixture(self):
        raw = render_tagged_lines([("engine_type", "yes"), ("budget", "no")])
        assert parse_tagged_lines(raw) == [("engine_type", "yes"), ("budget", "no")]

    @given(st.lists(
        st.text(min_size=1)
        .filter(lambda s: s.strip())
        .filter(lambda s: not any(c in "\r\x0b\x0c\x1c\x1d\x1e\x85\u2028\u2029" for c in s)),
        max_size=6,
    ))
    def test_expert_round_trip_is_dedup(self, values):
        parsed = parse_expert_response(render_expert_response(values))
        deduped = list(dict.fromkeys(values))
        assert parsed == deduped

    def test_value_containing_delimiter_escapes(self):
        raw = render_expert_response(["a\tb\nc"])
        assert "\t" not in raw.split("\t", 1)[1].replace("\\t", "")
        assert parse_expert_response(raw) == ["a\tb\nc"]

    def test_missing_tab_raises(self):
        with pytest.raises(ParseError):
            parse_tagged_lines("no separator here")


class TestParseManager:
    def test_yes_no_mapping(self):
        raw = render_tagged_lines([("engine_type", "yes"), ("budget", "no")])
        verdict = parse_manager_response(raw, ["engine_type", "budget"])
        assert verdict.judgments == {"engine_type": True, "budget": False}
        assert not verdict.empty_response

    def test_empty_response_all_false_flagged(self):
        verdict = parse_manager_response("", ["engine_type", "budget"])
        assert verdict.judgments == {"engine_type": False, "budget": False}
        assert verdict.empty_response

    def test_undeclared_type_ignored(self):
        raw = render_tagged_lines([("warp_drive", "yes"), ("budget", "yes")])
        verdict = parse_manager_response(raw, ["engine_type", "budget"])
        assert verdict.judgments == {"engine_type": False, "budget": True}

    def test_absent_types_default_false(self):
        raw = render_tagged_lines([("budget", "yes")])
        verdict = parse_manager_response(raw, ["engine_type", "budget"])
        assert verdict.judgments["engine_type"] is False

    def test_non_binary_value_raises(self):
        with pytest.raises(ParseError):
            parse_manager_response("budget\tmaybe", ["budget"])


class TestParseExpert:
    def test_values_in_order(self):
        raw = render_expert_response(["diesel", "hybrid"])
        assert parse_expert_response(raw) == ["diesel", "hybrid"]

    def test_empty_is_extraction_miss(self):
        assert parse_expert_response("") == []

    def test_duplicates_collapsed(self):
        raw = render_expert_response(["SUV", "SUV"])
        assert parse_expert_response(raw) == ["SUV"]

    def test_wrong_tag_raises(self):
        with pytest.raises(ParseError):
            parse_expert_response("entity\tdiesel")


# -- prompts ------------------------------------------------------------------

class TestPrompts:
    def test_manager_prompt_lists_all_types(self):
        prompt = build_manager_prompt(QUERY, AUTO_SCHEMA)
        for name in ("engine_type", "brand", "budget"):
            assert name in prompt.system_text
        assert prompt.system_text.count("- ") == 3

    def test_definition_with_newlines_preserved(self):
        schema = DomainSchema(
            domain="d",
            entity_types=(EntityTypeDef("x", "line one\nline two"),),
        )
        prompt = build_manager_prompt(QUERY, schema)
        assert "line one\nline two" in prompt.system_text

    def test_empty_schema_rejected(self):
        with pytest.raises(ValueError):
            build_manager_prompt(QUERY, DomainSchema(domain="d", entity_types=()))

    def test_expert_zero_shot_valid(self):
        prompt = build_expert_prompt(QUERY, AUTO_SCHEMA.entity_types[0], ())
        assert "Engine or energy type." in prompt.system_text
        assert "Example:" not in prompt.messages[0][1]

    def test_exemplars_rendered_in_score_order(self):
        exemplars = [scored("a", "hybrid", 0.5), scored("b", "diesel", 0.9), scored("c", "petrol", 0.1)]
        prompt = build_expert_prompt(QUERY, AUTO_SCHEMA.entity_types[0], exemplars)
        body = prompt.messages[0][1]
        assert body.index("diesel") < body.index("hybrid") < body.index("petrol")

    def test_prompt_determinism(self):
        exemplars = [scored("a", "hybrid", 0.5)]
        a = build_expert_prompt(QUERY, AUTO_SCHEMA.entity_types[0], exemplars)
        b = build_expert_prompt(QUERY, AUTO_SCHEMA.entity_types[0], exemplars)
        assert a == b

    def test_cot_injected_only_when_flagged(self):
        exemplars = [scored("a", "hybrid", 0.5)]
        lookup = {"src-a": "user mentioned hybrid"}
        without = build_expert_prompt(QUERY, AUTO_SCHEMA.entity_types[0], exemplars, cot_flag=False, cot_lookup=lookup)
        with_cot = build_expert_prompt(QUERY, AUTO_SCHEMA.entity_types[0], exemplars, cot_flag=True, cot_lookup=lookup)
        assert "user mentioned hybrid" not in without.messages[0][1]
        assert "user mentioned hybrid" in with_cot.messages[0][1]

    def test_baseline_prompt_lists_every_domain_type(self):
        prompt = build_baseline_prompt(QUERY, [AUTO_SCHEMA])
        assert "automotive/engine_type" in prompt.system_text


# -- scripted mock ------------------------------------------------------------

class TestScriptedMock:
    def test_first_matching_rule_wins(self):
        mock = ScriptedMock(rules=(
            MockRule(contains=("engine",), response="first"),
            MockRule(contains=("engine", "diesel"), response="second"),
        ))
        prompt = PromptBundle("about a diesel engine", ())
        assert mock.complete(prompt) == "first"

    def test_contains_rule(self):
        mock = ScriptedMock(rules=(MockRule(contains=("engine",), response="yes"),))
        assert mock.complete(PromptBundle("the diesel engine", ())) == "yes"

    def test_default_when_no_match(self):
        mock = ScriptedMock(rules=(MockRule(contains=("engine",), response="yes"),), default="fallback")
        assert mock.complete(PromptBundle("nothing relevant", ())) == "fallback"

    def test_purity(self):
        mock = ScriptedMock(rules=(MockRule(contains=("a",), response="r"),))
        prompt = PromptBundle("a", ())
        assert mock.complete(prompt) == mock.complete(prompt) == "r"

    def test_pattern_rule(self):
        mock = ScriptedMock(rules=(MockRule(pattern=r"case \d+", response="hit"),))
        assert mock.complete(PromptBundle("see case 42", ())) == "hit"
        assert mock.complete(PromptBundle("see case x", ())) == ""

    def test_from_file(self, tmp_path):
        path = tmp_path / "rules.json"
        path.write_text(json.dumps({
            "rules": [{"contains": ["engine"], "response": "yes"}],
            "default": "no",
        }))
        mock = ScriptedMock.from_file(path)
        assert mock.complete(PromptBundle("engine", ())) == "yes"
        assert mock.complete(PromptBundle("x", ())) == "no"


# -- remote backend -----------------------------------------------------------

class _StubHandler(BaseHTTPRequestHandler):
    failures_left = 0
    requests_seen = 0
    status_on_failure = 500

    def do_POST(self):
        cls = type(self)
        cls.requests_seen += 1
        self.rfile.read(int(self.headers.get("Content-Length", 0)))
        if cls.failures_left > 0:
            cls.failures_left -= 1
            self.send_response(cls.status_on_failure)
            self.end_headers()
            self.wfile.write(b"boom")
            return
        body = json.dumps({"choices": [{"message": {"content": "ok"}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.requests_seen = 0
    _StubHandler.failures_left = 0
    _StubHandler.status_on_failure = 500
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


class TestRemoteBackend:
    def test_retries_5xx_then_succeeds(self, stub_server):
        _StubHandler.failures_left = 2
        backend = RemoteChatBackend(stub_server, "m", backoff_base=0.01)
        assert backend.complete(PromptBundle("s", (("user", "u"),))) == "ok"
        assert _StubHandler.requests_seen == 3

    def test_retries_exhausted(self, stub_server):
        _StubHandler.failures_left = 10
        backend = RemoteChatBackend(stub_server, "m", backoff_base=0.01)
        with pytest.raises(BackendError, match="retries exhausted"):
            backend.complete(PromptBundle("s", ()))
        assert _StubHandler.requests_seen == 3

    def test_4xx_is_terminal_without_retry(self, stub_server):
        _StubHandler.failures_left = 5
        _StubHandler.status_on_failure = 400
        backend = RemoteChatBackend(stub_server, "m", backoff_base=0.01)
        with pytest.raises(BackendError, match="status 400"):
            backend.complete(PromptBundle("s", ()))
        assert _StubHandler.requests_seen == 1

    def test_transport_error_retried(self):
        backend = RemoteChatBackend("http://127.0.0.1:1", "m", timeout=0.2, backoff_base=0.01)
        with pytest.raises(BackendError, match="retries exhausted"):
            backend.complete(PromptBundle("s", ()))
