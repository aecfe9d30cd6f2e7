import json

import httpx
import pytest
from hypothesis import given, strategies as st

from layoutforge.llm import (
    TEMPLATE_IDS, CassetteError, CassetteMiss, ChatRequest, Gateway, HttpProvider, Live, LLMTimeout, Mock,
    ProviderError, Record, Replay, TagNotFound, TemplateError, fill_template, load_template, parse_tagged_block,
    render_template, template_placeholders, wrap_block,
)


class Counting:
    name = "counting"

    def __init__(self, reply="ok"):
        self.reply = reply
        self.n = 0

    def __call__(self, req):
        self.n += 1
        return f"{self.reply} #{self.n}: {req.prompt[:20]}"


def _record(path, prompts, provider=None):
    provider = provider or Counting()
    gw = Gateway(Record(path, provider))
    return gw, provider, [gw.ask(p) for p in prompts]


def test_replay_returns_recorded_text(tmp_path):
    path = tmp_path / "c.cassette.jsonl"
    _, _, texts = _record(path, ["alpha", "beta"])
    gw = Gateway(Replay(path))
    assert [gw.ask("alpha"), gw.ask("beta")] == texts


def test_replay_miss_names_fingerprint(tmp_path):
    path = tmp_path / "c.cassette.jsonl"
    _record(path, ["alpha"])
    gw = Gateway(Replay(path))
    fp = gw.request("gamma").fingerprint
    with pytest.raises(CassetteMiss, match=f"cassette miss: {fp}"):
        gw.ask("gamma")


def test_replay_missing_file(tmp_path):
    with pytest.raises(CassetteError, match="not found"):
        Gateway(Replay(tmp_path / "none.cassette.jsonl"))


def test_replay_never_touches_network(tmp_path, monkeypatch):
    path = tmp_path / "c.cassette.jsonl"
    _record(path, ["alpha"])

    def boom(*a, **k):
        raise AssertionError("network used")

    monkeypatch.setattr(httpx.Client, "send", boom)
    gw = Gateway(Replay(path))
    gw.ask("alpha")
    with pytest.raises(CassetteMiss):
        gw.ask("beta")


def test_record_is_idempotent(tmp_path):
    path = tmp_path / "c.cassette.jsonl"
    gw, provider, (first,) = _record(path, ["alpha"])
    assert gw.ask("alpha") == first
    assert provider.n == 1
    assert len(path.read_text().splitlines()) == 1
    # a later recording session reuses the file too
    gw2, provider2, (again,) = _record(path, ["alpha"])
    assert again == first and provider2.n == 0


def test_cassette_records_metadata(tmp_path):
    path = tmp_path / "c.cassette.jsonl"
    _record(path, ["alpha"])
    rec = json.loads(path.read_text())
    assert rec["provider"] == "counting" and rec["model_id"] == "gpt-4o"
    assert rec["request"] == [["user", "alpha"]] and "timestamp" in rec


def test_cassette_corrupt_line(tmp_path):
    path = tmp_path / "c.cassette.jsonl"
    _record(path, ["alpha"])
    with path.open("a") as fh:
        fh.write("{not json\n")
    with pytest.raises(CassetteError, match=":2:"):
        Gateway(Replay(path))


def test_cassette_duplicate_fingerprint_rejected(tmp_path):
    path = tmp_path / "c.cassette.jsonl"
    _record(path, ["alpha"])
    line = path.read_text()
    path.write_text(line + line)
    with pytest.raises(CassetteError, match="append-only"):
        Gateway(Replay(path))


def test_mock_is_deterministic(dining_scene):
    prompt = render_template("judge_pos_ali", {"<task_instruction>": "x", "<scene_render>": "y"})
    assert Gateway(Mock()).ask(prompt) == Gateway(Mock()).ask(prompt)


def test_chat_request_needs_user_message():
    with pytest.raises(ValueError):
        ChatRequest((("system", "be brief"),), "m")
    with pytest.raises(ValueError):
        ChatRequest((("tool", "x"), ("user", "y")), "m")


@given(st.lists(st.tuples(st.sampled_from(["system", "user", "assistant"]), st.text()), min_size=1, max_size=4),
       st.text(min_size=1))
def test_fingerprint_depends_only_on_content(msgs, model):
    msgs = [("user", "q")] + msgs
    a = ChatRequest(tuple(msgs), model)
    b = ChatRequest(tuple((str(r), "".join(t)) for r, t in [list(m) for m in msgs]), model)
    assert a is not b and a.fingerprint == b.fingerprint
    assert ChatRequest(tuple(msgs), model + "x").fingerprint != a.fingerprint


def test_fingerprint_ignores_sampling_settings():
    a = ChatRequest((("user", "q"),), "m", temperature=0.0)
    b = ChatRequest((("user", "q"),), "m", temperature=0.7, max_tokens=10)
    assert a.fingerprint == b.fingerprint


# ---------------------------------------------------------------- HTTP


def _provider(handler, **kw):
    return HttpProvider("https://llm.invalid/v1/chat/completions", client=httpx.Client(
        transport=httpx.MockTransport(handler)), **kw)


def test_http_provider_payload_and_auth(monkeypatch):
    monkeypatch.setenv("LAYOUTFORGE_API_KEY", "sekrit")
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "hello"}}]})

    req = ChatRequest((("system", "s"), ("user", "u")), "gpt-4o")
    assert _provider(handler)(req) == "hello"
    assert seen["auth"] == "Bearer sekrit"
    assert seen["body"]["messages"] == [{"role": "system", "content": "s"}, {"role": "user", "content": "u"}]
    assert seen["body"]["temperature"] == 0.0


def test_http_provider_error_status():
    p = _provider(lambda r: httpx.Response(503, text="overloaded"))
    with pytest.raises(ProviderError, match="503") as err:
        p(ChatRequest((("user", "u"),), "m"))
    assert err.value.status == 503


def test_http_provider_timeout():
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    with pytest.raises(LLMTimeout, match="timeout"):
        _provider(handler)(ChatRequest((("user", "u"),), "m"))


def test_record_over_http(tmp_path, monkeypatch):
    calls = []

    def handler(request):
        calls.append(request)
        return httpx.Response(200, json={"choices": [{"message": {"content": "pong"}}]})

    gw = Gateway(Record(tmp_path / "h.cassette.jsonl", _provider(handler)))
    assert gw.ask("ping") == "pong" and gw.ask("ping") == "pong"
    assert len(calls) == 1
    assert Gateway(Replay(tmp_path / "h.cassette.jsonl")).ask("ping") == "pong"


def test_live_mode_builds_http_provider():
    gw = Gateway(Live("https://llm.invalid/v1"), timeout=5.0)
    assert isinstance(gw._provider, HttpProvider) and gw._provider.timeout == 5.0


# ---------------------------------------------------------------- templates


def test_every_template_is_bundled():
    for tid in TEMPLATE_IDS:
        assert load_template(tid).strip()


def test_fast_poses_template_contains_inputs_verbatim():
    desc = "The notebook sits in the middle. The pen lies right of the notebook."
    out = render_template("fast_poses", {"<object_list>": '["notebook", "pen"]', "<scene_description>": desc})
    assert desc in out and '["notebook", "pen"]' in out
    assert "<object_list>" not in out and "<scene_description>" not in out


def test_missing_substitution_names_placeholder():
    with pytest.raises(TemplateError, match="<task_instruction> unbound"):
        render_template("judge_pos_ali", {"<scene_render>": "x"})


def test_placeholder_free_template_unchanged():
    text = "Place every object; reply in </pose> blocks."
    assert fill_template(text, {}) == text


def test_unknown_template():
    with pytest.raises(TemplateError):
        load_template("nope")


def test_template_placeholders_listed():
    assert template_placeholders("judge_pos_ali") == ["<task_instruction>", "<scene_render>"]


def test_substitution_text_is_not_rescanned():
    out = render_template("judge_pos_ali", {"<task_instruction>": "<scene_render>", "<scene_render>": "R"})
    assert "<scene_render>" in out


# ---------------------------------------------------------------- tags


def test_pose_block_example():
    # [PAPER] closing-style token used on both sides of the pose block
    text = "Sure.\n</pose>\nnotebook: [0, 0, 0]\n</pose>\nDone."
    assert parse_tagged_block(text, "</pose>") == "notebook: [0, 0, 0]"


def test_tag_not_found():
    with pytest.raises(TagNotFound, match="tag not found: </pose>"):
        parse_tagged_block("nothing here", "</pose>")
    with pytest.raises(TagNotFound):
        parse_tagged_block("only one </pose> here", "</pose>")


def test_first_pair_wins():
    assert parse_tagged_block("</o>a</o>b</o>c</o>", "</o>") == "a"


@given(st.text().filter(lambda s: "</output>" not in s and s == s.strip()))
def test_tag_round_trip(body):
    assert parse_tagged_block("preamble " + wrap_block(body, "</output>") + " tail", "</output>") == body
