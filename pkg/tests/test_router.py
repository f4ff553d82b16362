import threading
import time

import pytest
from hypothesis import given, settings, strategies as st

from oracles import HAND_REGISTRY, hand_tfidf_scores

from guided_portraits.errors import ContractViolation, UnknownEntryError, ValidationError
from guided_portraits.llm import FailingClient, SelectionRequest, StubClient
from guided_portraits.router import (
    Expert,
    LLMSelector,
    Registry,
    default_registry,
    lexical_score,
    lexical_scores,
    parse_payload,
    select,
    tokenize,
)

REG = default_registry("diffuser")
WORDS = sorted({t for tags, words in HAND_REGISTRY.values() for t in tags + words} | {"cute", "zebra"})


def test_builtin_registry_matches_hand_copy():
    assert REG.ids == list(HAND_REGISTRY)
    for e in REG.experts:
        tags, words = HAND_REGISTRY[e.id]
        assert e.tag_tokens == set(tags) and e.description_tokens == set(words)


def test_tfidf_oracle_on_anime_schoolgirl():
    desc = "a cute anime schoolgirl"
    oracle = hand_tfidf_scores(desc.split())
    got = dict(zip(REG.ids, lexical_scores(REG, desc)))
    for eid, value in oracle.items():
        assert got[eid] == pytest.approx(value, abs=1e-9)
    assert oracle["anything-v5"] > 0
    assert select(REG, desc).id == "anything-v5"


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(WORDS), max_size=8))
def test_tfidf_oracle_random_descriptions(tokens):
    oracle = hand_tfidf_scores(tokens)
    got = lexical_scores(REG, " ".join(tokens))
    assert got == pytest.approx([oracle[i] for i in REG.ids], abs=1e-9)
    assert all(v >= 0 for v in got)


def test_tokenizer():
    assert tokenize("A Cute-Anime_schoolgirl, 3D!") == ["a", "cute", "anime", "schoolgirl", "3d"]
    assert tokenize("") == []


def test_empty_description_scores_zero_and_first_wins():
    assert lexical_scores(REG, "") == [0.0] * 5
    assert select(REG, "").id == REG.ids[0]
    assert select(REG, "nothing matches here").id == REG.ids[0]


def test_lone_tag_wins():
    for e in REG.experts:
        for tag in e.tag_tokens:
            scores = dict(zip(REG.ids, lexical_scores(REG, tag)))
            others = [scores[o.id] for o in REG.experts
                      if tag not in o.tag_tokens | o.description_tokens]
            assert all(scores[e.id] > v for v in others)


def test_one_expert_registry_for_any_selector():
    reg = Registry("voice", (Expert("solo", "voice", "only voice"),))
    for sel in (None, "lexical", LLMSelector(StubClient("other")), LLMSelector(FailingClient())):
        assert select(reg, "anything at all", sel).id == "solo"


def _tie_registry(order):
    pool = {n: Expert(n, "diffuser", "shared words", ("shared",)) for n in "abc"}
    pool["z"] = Expert("z", "diffuser", "different", ("other",))
    return Registry("diffuser", tuple(pool[n] for n in order))


@settings(max_examples=30, deadline=None)
@given(st.permutations(list("abcz")), st.sampled_from(["shared", "words", "different other", "shared other"]))
def test_permutation_covariance_and_ties(order, desc):
    reg = _tie_registry(order)
    scores = dict(zip(reg.ids, lexical_scores(reg, desc)))
    best = max(scores.values())
    winners = [i for i in reg.ids if scores[i] == best]
    assert select(reg, desc).id == winners[0]  # earliest maximal expert


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(WORDS), max_size=6), st.floats(1e-3, 1e3))
def test_argmax_is_scale_invariant(tokens, c):
    desc = " ".join(tokens)
    idf = REG.idf()
    scaled = {k: c * v for k, v in idf.items()}
    raw = [lexical_score(e, desc, idf) for e in REG.experts]
    big = [lexical_score(e, desc, scaled) for e in REG.experts]
    key = lambda s: max(range(len(s)), key=lambda i: (s[i], -i))
    if len(set(raw)) == len(raw) or max(raw) == 0:
        assert key(raw) == key(big)
    assert key(raw) == REG.ids.index(select(REG, desc).id)


def test_determinism():
    a = [select(REG, w).id for w in WORDS]
    b = [select(REG, w).id for w in WORDS]
    assert a == b


def test_llm_stub_valid_reply_is_used():
    stub = StubClient(choice=" `dreamshaper` ")
    res = select(REG, "a cute anime schoolgirl", LLMSelector(stub))
    assert res.id == "dreamshaper" and not res.fallback and res.selector == "llm"
    req = stub.requests[0]
    assert isinstance(req, SelectionRequest)
    assert req.candidate_ids == tuple(REG.ids)
    assert "a cute anime schoolgirl" in req.user
    for e in REG.experts:
        assert e.id in req.user and e.description in req.user
    assert select(REG, "x", LLMSelector(StubClient("DreamShaper"))).id == "dreamshaper"


@settings(max_examples=60, deadline=None)
@given(st.one_of(st.text(max_size=30), st.none(), st.integers(), st.just("nonexistent-id")))
def test_llm_path_never_leaves_registry(reply):
    res = select(REG, "a cute anime schoolgirl", LLMSelector(StubClient(reply)))
    assert res.id in REG.ids
    if res.fallback:
        assert res.id == "anything-v5"
    else:
        assert isinstance(reply, str) and reply.strip().strip("`'\". ").lower() == res.id.lower()


def test_invalid_id_falls_back():
    res = select(REG, "a cute anime schoolgirl", LLMSelector(StubClient("nonexistent-id")))
    assert res.fallback and res.id == "anything-v5" and "nonexistent-id" in res.reason


def test_transport_error_and_missing_client_fall_back():
    bad = FailingClient()
    res = select(REG, "realistic photo", LLMSelector(bad))
    assert res.fallback and res.id == "base-sd15" and "unreachable" in res.reason and bad.calls == 1
    res = select(REG, "realistic photo", LLMSelector(None))
    assert res.fallback and res.id == "base-sd15"


class _SlowClient:
    def __init__(self, delay):
        self.delay = delay

    def choose(self, request):
        time.sleep(self.delay)
        return "dreamshaper"


def test_timeout_falls_back():
    t0 = time.monotonic()
    res = select(REG, "toy render", LLMSelector(_SlowClient(1.0), timeout=0.05))
    assert time.monotonic() - t0 < 0.9
    assert res.fallback and res.id == "3d-animation" and "no reply" in res.reason


class _ReentrancyProbe:
    def __init__(self):
        self.active = 0
        self.max_active = 0
        self.guard = threading.Lock()

    def choose(self, request):
        with self.guard:
            self.active += 1
            self.max_active = max(self.max_active, self.active)
        time.sleep(0.01)
        with self.guard:
            self.active -= 1
        return "game-icon"


def test_llm_calls_are_serialized_across_threads():
    probe = _ReentrancyProbe()
    sel = LLMSelector(probe, timeout=None)
    out = []
    threads = [threading.Thread(target=lambda: out.append(select(REG, "x", sel).id)) for _ in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert out == ["game-icon"] * 6 and probe.max_active == 1


def test_registry_file_round_trip(tmp_path):
    path = tmp_path / "reg.cfg"
    path.write_text(REG.dumps(), encoding="utf-8")
    back = Registry.load(path)
    assert back == REG
    assert back.get("game-icon").payload["abstractness"] == "0.6"


def test_registry_errors(tmp_path):
    with pytest.raises(UnknownEntryError, match="game-icon"):
        REG.get("missing")
    with pytest.raises(ContractViolation):
        Registry("diffuser", ())
    with pytest.raises(ContractViolation):
        Registry("diffuser", (Expert("a", "voice", ""),))
    with pytest.raises(ContractViolation):
        Registry("diffuser", (Expert("a", "diffuser", ""), Expert("a", "diffuser", "")))
    with pytest.raises(ContractViolation):
        Expert("", "diffuser", "")
    with pytest.raises(ContractViolation):
        Expert("x", "painter", "")
    bad = tmp_path / "bad.cfg"
    bad.write_text("[expert]\nid = a\nkind = diffuser\ncolour = red\n", encoding="utf-8")
    with pytest.raises(ValidationError, match="colour"):
        Registry.load(bad)
    with pytest.raises(ValidationError):
        parse_payload("novalue")
    with pytest.raises(ValidationError):
        select(REG, "x", "mystery")


def test_voice_registry_loads():
    voices = default_registry("voice")
    assert voices.kind == "voice" and len(voices.experts) >= 3
    assert select(voices, "").id == voices.ids[0]
