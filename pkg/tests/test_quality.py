import random
import string

import pytest

from conftest import build_synthetic_pair, make_client
from synthqa.dataset import AnswerSpan, Passage, QaPair
from synthqa.errors import Unalignable
from synthqa.llm import MockFailure, MockRule, scripted_mock
from synthqa.prompts import DEFAULT_TEMPLATES, PromptKind
from synthqa.quality import (
    FilterDecision,
    MatchRule,
    align_span,
    dedupe_exact,
    load_decisions,
    roundtrip_filter,
    write_decisions,
)


def test_align_exact_first_occurrence():
    span = align_span("The fee is $540 for renewal.", "$540")
    assert span == AnswerSpan("$540", 11)


def test_align_exact_prefers_first_of_many():
    span = align_span("day by day by day", "day")
    assert span.answer_start == 0


def test_align_case_insensitive_takes_context_casing():
    span = align_span("It says The fee is due.", "THE FEE")
    assert span.text == "The fee"
    assert span.answer_start == 8


def test_align_trims_terminal_punctuation():
    span = align_span("Renewal costs ninety dollars today", "ninety dollars.")
    assert span.text == "ninety dollars"
    span2 = align_span("Renewal costs ninety dollars today", "Ninety Dollars?!")
    assert span2.text == "ninety dollars"


def test_align_unalignable():
    with pytest.raises(Unalignable):
        align_span("The fee is $540 for renewal.", "taxes")


def test_align_rejects_empty():
    with pytest.raises(Unalignable):
        align_span("", "x")
    with pytest.raises(Unalignable):
        align_span("context", "")


def test_align_regex_metacharacters_are_literal():
    span = align_span("Cost is (roughly) $5.40 total.", "(ROUGHLY)")
    assert span.text == "(roughly)"


def test_align_span_invariant_holds():
    context = "Visas last 90 days in total."
    span = align_span(context, "90 DAYS")
    span.verify_against(context, "test")


def _aligned_pairs(n, context="Permits cost $75 today. Figure alpha beta gamma."):
    passage = Passage(context=context, qas=[])
    pairs = []
    for i in range(n):
        qa = QaPair(
            id=f"cand-{i}",
            question=f"Question number {i}?",
            answers=[AnswerSpan("$75", context.index("$75"))],
            provenance=build_synthetic_pair(i).provenance,
            gen_meta=build_synthetic_pair(i).gen_meta,
        )
        pairs.append((passage, qa))
    return pairs


def test_roundtrip_keeps_matching_pairs():
    pairs = _aligned_pairs(3)
    provider = scripted_mock(
        [
            MockRule(kind=PromptKind.RE_ANSWER, contains="Question number 1?", response="wrong thing"),
            MockRule(kind=PromptKind.RE_ANSWER, response="$75."),
        ]
    )
    kept, decisions = roundtrip_filter(pairs, make_client(provider), DEFAULT_TEMPLATES)
    assert len(decisions) == 3
    assert [qa.id for _, qa in kept] == ["cand-0", "cand-2"]
    assert [d.matched for d in decisions] == [True, False, True]
    # normalized exact: "$75." -> "75" matches "$75" -> "75"
    assert decisions[0].reanswer == "$75."


def test_roundtrip_normalized_exact_examples():
    pairs = [
        (
            Passage(context="They moved to New York in May.", qas=[]),
            QaPair(id="a", question="Where?", answers=[AnswerSpan("New York", 14)]),
        ),
        (
            Passage(context="It lasts 42 days in total.", qas=[]),
            QaPair(id="b", question="How long?", answers=[AnswerSpan("42 days", 9)]),
        ),
    ]
    provider = scripted_mock(
        [
            MockRule(kind=PromptKind.RE_ANSWER, contains="Where?", response="new york."),
            MockRule(kind=PromptKind.RE_ANSWER, contains="How long?", response="six weeks"),
        ]
    )
    kept, decisions = roundtrip_filter(pairs, make_client(provider), DEFAULT_TEMPLATES)
    assert [qa.id for _, qa in kept] == ["a"]
    assert decisions[0].matched is True
    assert decisions[1].matched is False


def test_roundtrip_all_agree_and_none_agree():
    pairs = _aligned_pairs(4)
    agree = scripted_mock([MockRule(kind=PromptKind.RE_ANSWER, response="$75")])
    kept, decisions = roundtrip_filter(pairs, make_client(agree), DEFAULT_TEMPLATES)
    assert [qa for _, qa in kept] == [qa for _, qa in pairs]
    assert all(d.matched for d in decisions)

    disagree = scripted_mock([MockRule(kind=PromptKind.RE_ANSWER, response="nothing")])
    kept, decisions = roundtrip_filter(pairs, make_client(disagree), DEFAULT_TEMPLATES)
    assert kept == []
    assert len(decisions) == 4


def test_roundtrip_never_mutates_pairs():
    pairs = _aligned_pairs(2)
    snapshot = [(p.context, qa.id, qa.question, qa.answers[0]) for p, qa in pairs]
    provider = scripted_mock([MockRule(kind=PromptKind.RE_ANSWER, response="$75")])
    kept, _ = roundtrip_filter(pairs, make_client(provider), DEFAULT_TEMPLATES)
    assert [(p.context, qa.id, qa.question, qa.answers[0]) for p, qa in pairs] == snapshot
    assert all(any(qa is kept_qa for _, kept_qa in kept) for _, qa in pairs)


def test_roundtrip_token_f1_threshold_rule():
    pairs = _aligned_pairs(1, context="The board approved the new safety policy at noon. $75")
    pairs[0][1].answers[0] = AnswerSpan("new safety policy", 19)
    provider = scripted_mock(
        [MockRule(kind=PromptKind.RE_ANSWER, response="the new safety policy at noon")]
    )
    kept_strict, decisions_strict = roundtrip_filter(
        pairs, make_client(provider), DEFAULT_TEMPLATES, rule=MatchRule.NORMALIZED_EXACT
    )
    assert kept_strict == []
    kept_loose, decisions_loose = roundtrip_filter(
        pairs, make_client(provider), DEFAULT_TEMPLATES, rule=MatchRule.TOKEN_F1_THRESHOLD, threshold=0.5
    )
    assert len(kept_loose) == 1
    # overlap 3 tokens, precision 3/5, recall 1 -> f1 = 0.75
    assert decisions_loose[0].f1_value == pytest.approx(0.75, abs=1e-9)
    assert decisions_strict[0].f1_value is None


def test_roundtrip_provider_failure_flags_decision():
    pairs = _aligned_pairs(3)
    provider = scripted_mock(
        [
            MockRule(
                kind=PromptKind.RE_ANSWER,
                contains="Question number 1?",
                response="",
                fail=MockFailure(times=None, retryable=False),
            ),
            MockRule(kind=PromptKind.RE_ANSWER, response="$75"),
        ]
    )
    kept, decisions = roundtrip_filter(pairs, make_client(provider), DEFAULT_TEMPLATES)
    assert [qa.id for _, qa in kept] == ["cand-0", "cand-2"]
    assert len(decisions) == 3
    failed = decisions[1]
    assert failed.provider_failed is True
    assert failed.matched is False
    assert failed.qa_id == "cand-1"


def test_normalized_exact_rule_symmetric_and_reflexive():
    from synthqa.quality import _matches

    cases = [("New York", "new york."), ("a cat", "cat"), ("42 days", "six weeks"), ("", "")]
    for a, b in cases:
        ab, _ = _matches([a], b, MatchRule.NORMALIZED_EXACT, 0.8)
        ba, _ = _matches([b], a, MatchRule.NORMALIZED_EXACT, 0.8)
        assert ab == ba
        aa, _ = _matches([a], a, MatchRule.NORMALIZED_EXACT, 0.8)
        assert aa is True


def test_dedupe_examples():
    assert dedupe_exact(["a", "a", "b"]) == ["a", "b"]
    assert dedupe_exact(["x", "y", "z"]) == ["x", "y", "z"]
    assert dedupe_exact(["x ", "x"]) == ["x "]
    assert dedupe_exact([]) == []
    assert dedupe_exact(["a  b", "a b", "a\nb"]) == ["a  b"]


def test_decisions_file_round_trip(tmp_path):
    decisions = [
        FilterDecision("q1", "$75", "$75.", True, MatchRule.NORMALIZED_EXACT),
        FilterDecision("q2", "abc", "def", False, MatchRule.TOKEN_F1_THRESHOLD, f1_value=0.25),
        FilterDecision("q3", "x", "", False, MatchRule.NORMALIZED_EXACT, provider_failed=True),
    ]
    path = tmp_path / "decisions.jsonl"
    write_decisions(decisions, path)
    assert load_decisions(path) == decisions


def _random_casing(text, rng):
    # Per-character case flips, skipping characters whose case pair changes
    # string length (e.g. the sharp s): case-insensitive matching is
    # per-character, not full case folding.
    out = []
    for ch in text:
        flipped = ch.upper() if rng.random() < 0.5 else ch.lower()
        out.append(flipped if len(flipped) == 1 else ch)
    return "".join(out)


def test_align_span_random_planted_answers():
    rng = random.Random(1234)
    vocabulary = ["permit", "fee", "renewal", "visa", "travel", "policy", "Straße", "café"]
    for _ in range(300):
        words = [rng.choice(vocabulary) for _ in range(rng.randint(5, 15))]
        context = " ".join(words)
        lo = rng.randrange(len(words))
        hi = rng.randint(lo + 1, min(lo + 3, len(words)))
        answer = " ".join(words[lo:hi])
        styled = _random_casing(answer, rng)
        if rng.random() < 0.5:
            styled += rng.choice([".", "!", "?", ",", ";"])
        span = align_span(context, styled)
        span.verify_against(context, "prop")
        assert span.text.lower().rstrip(string.punctuation).strip() == answer.lower()
