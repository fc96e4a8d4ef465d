import random

import pytest

from synthqa.dataset import AnswerSpan, GenMeta, Passage, Provenance, QaDataset, QaPair
from synthqa.llm import LlmClient, LlmConfig, MockRule, PriceTable, request_hash, scripted_mock
from synthqa.prompts import PromptKind


def build_toy_train(name="toy"):
    """Three original pairs across two passages."""
    return QaDataset(
        name=name,
        passages=[
            Passage(
                context="The fee is $540 for renewal.",
                qas=[
                    QaPair(id="q1", question="What is the fee?", answers=[AnswerSpan("$540", 11)]),
                    QaPair(id="q2", question="What is paid for?", answers=[AnswerSpan("renewal", 20)]),
                ],
                title="fees",
            ),
            Passage(
                context="Visas last 90 days in total.",
                qas=[
                    QaPair(id="q3", question="How long do visas last?", answers=[AnswerSpan("90 days", 11)]),
                ],
            ),
        ],
    )


def build_synthetic_pair(idx, context="Synthetic context alpha beta.", answer="alpha beta"):
    start = context.index(answer)
    return QaPair(
        id=f"syn-s0-c{idx}-q0",
        question=f"What is mentioned in item {idx}?",
        answers=[AnswerSpan(answer, start)],
        provenance=Provenance.SYNTHETIC,
        gen_meta=GenMeta(shots=1, generation_id=f"s0-c{idx}-q0", filtered=True),
    )


def make_client(provider, prices=None, **config_overrides):
    """Client that never actually sleeps between retries."""
    defaults = dict(max_retries=2, max_concurrent_requests=2)
    defaults.update(config_overrides)
    return LlmClient(
        provider,
        LlmConfig(**defaults),
        prices or PriceTable.zero(),
        sleep=lambda seconds: None,
        uniform=lambda lo, hi: hi,
    )


def happy_mock(context_text="Permits cost $75 and arrive in ten days. Hash {request_hash}."):
    """Mock whose QA answers always align and whose re-answers always agree."""
    return scripted_mock(
        [
            MockRule(kind=PromptKind.CONTEXT_GEN, response=context_text),
            MockRule(
                kind=PromptKind.QA_GEN,
                response="Question: How much do permits cost?\nAnswer: $75",
            ),
            MockRule(kind=PromptKind.RE_ANSWER, response="$75"),
        ]
    )


def outcome_mock(run_seed, p_blank=0.0, p_badparse=0.0, p_unalign=0.0, p_disagree=0.0):
    """Mock whose behavior is a deterministic function of request content.

    Contexts all contain the planted answer "alpha beta"; the knobs steer a
    content-keyed coin toss toward each failure mode.
    """

    def roll(prefix, prompt):
        return random.Random(f"{run_seed}:{prefix}:{request_hash(prompt)}").random()

    def ctx_response(prompt):
        if roll("ctx", prompt) < p_blank:
            return "   "
        return f"Context {request_hash(prompt)} mentions alpha beta and more."

    def qa_response(prompt):
        r = roll("qa", prompt)
        if r < p_badparse:
            return "this completion has no markers"
        if r < p_badparse + p_unalign:
            return "Question: What is absent?\nAnswer: zzz-not-present"
        return "Question: What is mentioned?\nAnswer: alpha beta"

    def re_response(prompt):
        if roll("re", prompt) < p_disagree:
            return "something entirely different"
        return "alpha beta"

    return scripted_mock(
        [
            MockRule(kind=PromptKind.CONTEXT_GEN, response=ctx_response),
            MockRule(kind=PromptKind.QA_GEN, response=qa_response),
            MockRule(kind=PromptKind.RE_ANSWER, response=re_response),
        ]
    )


@pytest.fixture
def toy_train():
    return build_toy_train()
