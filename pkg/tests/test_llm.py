import random
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction

import pytest

from conftest import make_client
from synthqa.errors import ProviderError, RetriesExhausted, UnmatchedRequest
from synthqa.llm import (
    LlmClient,
    LlmConfig,
    LlmExchange,
    MockFailure,
    MockRule,
    PriceTable,
    accumulate_cost,
    scripted_mock,
)
from synthqa.prompts import PromptKind, PromptSpec


def _prompt(kind=PromptKind.RE_ANSWER, user="Passage:\nanything\n\nQuestion: Q1", system="sys"):
    shots = 0 if kind == PromptKind.RE_ANSWER else 1
    ids = () if kind == PromptKind.RE_ANSWER else ("e1",)
    return PromptSpec(kind=kind, rendered_system=system, rendered_user=user, exemplar_ids=ids, shots=shots)


def test_mock_returns_scripted_text():
    provider = scripted_mock([MockRule(response="Question: Q1\nAnswer: A1")])
    client = make_client(provider)
    exchange = client.complete(_prompt(PromptKind.QA_GEN))
    assert exchange.response_text == "Question: Q1\nAnswer: A1"
    assert exchange.attempt_count == 1
    assert exchange.prompt_tokens > 0 and exchange.completion_tokens > 0


def test_mock_matches_by_kind_and_substring():
    provider = scripted_mock(
        [
            MockRule(kind=PromptKind.RE_ANSWER, contains="Q1", response="A1"),
            MockRule(kind=PromptKind.RE_ANSWER, response="other"),
        ]
    )
    client = make_client(provider)
    assert client.complete(_prompt(user="Question: Q1")).response_text == "A1"
    assert client.complete(_prompt(user="Question: Q2")).response_text == "other"


def test_mock_unmatched_request():
    provider = scripted_mock([MockRule(kind=PromptKind.QA_GEN, response="x")])
    client = make_client(provider)
    with pytest.raises(UnmatchedRequest):
        client.complete(_prompt(PromptKind.RE_ANSWER))


def test_retry_then_success():
    provider = scripted_mock([MockRule(response="ok", fail=MockFailure(times=2))])
    client = make_client(provider, max_retries=3)
    exchange = client.complete(_prompt())
    assert exchange.response_text == "ok"
    assert exchange.attempt_count == 3


def test_retries_exhausted_after_budget():
    provider = scripted_mock([MockRule(response="never", fail=MockFailure(times=None))])
    attempts_seen = []
    client = LlmClient(
        provider,
        LlmConfig(max_retries=2),
        sleep=lambda s: attempts_seen.append(s),
        uniform=lambda lo, hi: hi,
    )
    with pytest.raises(RetriesExhausted) as excinfo:
        client.complete(_prompt())
    assert excinfo.value.attempts == 3
    # Backoff doubled: 1s then 2s ceilings (jitter pinned to the ceiling).
    assert attempts_seen == [1.0, 2.0]


def test_no_retry_after_nonretryable_error():
    provider = scripted_mock(
        [MockRule(response="x", fail=MockFailure(times=None, retryable=False))]
    )
    sleeps = []
    client = LlmClient(provider, LlmConfig(max_retries=5), sleep=sleeps.append)
    with pytest.raises(ProviderError):
        client.complete(_prompt())
    assert sleeps == []


def test_concurrent_identical_requests_identical_responses():
    provider = scripted_mock([MockRule(response="stable {request_hash}")])
    client = make_client(provider, max_concurrent_requests=4)
    prompt = _prompt()
    with ThreadPoolExecutor(max_workers=4) as pool:
        texts = {f.response_text for f in pool.map(client.complete, [prompt] * 8)}
    assert len(texts) == 1


def test_mock_token_estimate_is_char_based():
    provider = scripted_mock([MockRule(response="abcd" * 3)])
    client = make_client(provider)
    prompt = _prompt(user="u" * 10, system="s" * 10)
    exchange = client.complete(prompt)
    assert exchange.prompt_tokens == 5  # ceil(20 / 4)
    assert exchange.completion_tokens == 3  # ceil(12 / 4)


def _exchange(kind, p_tok, c_tok):
    return LlmExchange(
        prompt=_prompt(kind),
        response_text="",
        prompt_tokens=p_tok,
        completion_tokens=c_tok,
        latency=0.0,
        attempt_count=1,
    )


def test_cost_example_from_contract():
    prices = PriceTable.from_rates("0.03", "0.06")
    report = accumulate_cost([_exchange(PromptKind.QA_GEN, 1000, 500)], prices)
    assert str(report.total_cost) == "0.060000000"
    assert report.total_prompt_tokens == 1000
    assert report.total_completion_tokens == 500


def test_cost_empty_log():
    report = accumulate_cost([], PriceTable.from_rates("0.03", "0.06"))
    assert report.total_cost_nano == 0
    assert report.per_stage == {}


def test_cost_additive_over_concatenation():
    prices = PriceTable.from_rates("0.03", "0.06")
    a = [_exchange(PromptKind.QA_GEN, 17, 5)]
    b = [_exchange(PromptKind.RE_ANSWER, 3, 999)]
    combined = accumulate_cost(a + b, prices)
    assert combined.total_cost_nano == (
        accumulate_cost(a, prices).total_cost_nano + accumulate_cost(b, prices).total_cost_nano
    )


def test_cost_order_independent_and_exact():
    rng = random.Random(20240601)
    for _ in range(25):
        prices = PriceTable(
            prompt_rate_micro=rng.randrange(0, 200_000),
            completion_rate_micro=rng.randrange(0, 400_000),
        )
        exchanges = [
            _exchange(rng.choice(list(PromptKind)), rng.randrange(0, 5000), rng.randrange(0, 5000))
            for _ in range(rng.randrange(0, 30))
        ]
        report = accumulate_cost(exchanges, prices)
        shuffled = exchanges[:]
        rng.shuffle(shuffled)
        assert accumulate_cost(shuffled, prices) == report
        # Defining formula in exact rational micro-units.
        expected_micro = sum(
            (
                Fraction(e.prompt_tokens * prices.prompt_rate_micro, 1000)
                + Fraction(e.completion_tokens * prices.completion_rate_micro, 1000)
            )
            for e in exchanges
        )
        assert Fraction(report.total_cost_nano, 1000) == expected_micro
        # Stage breakdown partitions the totals.
        assert sum(s.cost_nano for s in report.per_stage.values()) == report.total_cost_nano
        assert sum(s.prompt_tokens for s in report.per_stage.values()) == report.total_prompt_tokens


def test_price_table_rejects_subabsolute_rates():
    with pytest.raises(ValueError):
        PriceTable.from_rates("0.0000001", "0.06")  # finer than micro precision
    with pytest.raises(ValueError):
        PriceTable(-1, 0)


def test_price_table_from_file(tmp_path):
    path = tmp_path / "prices.json"
    path.write_text('{"prompt_per_1k": 0.03, "completion_per_1k": 0.06, "currency": "USD"}')
    prices = PriceTable.from_file(path)
    assert prices.prompt_rate_micro == 30_000
    assert prices.completion_rate_micro == 60_000


def test_reanswer_temperature_is_deterministic_zero():
    config = LlmConfig()
    assert config.temperature_for(PromptKind.RE_ANSWER) == 0.0
    assert config.temperature_for(PromptKind.CONTEXT_GEN) == 0.7


def test_config_bounds():
    with pytest.raises(ValueError):
        LlmConfig(temperature=-0.1)
    with pytest.raises(ValueError):
        LlmConfig(max_output_tokens=0)
    with pytest.raises(ValueError):
        LlmConfig(max_retries=-1)
    with pytest.raises(ValueError):
        LlmConfig(max_concurrent_requests=0)
