"""Chat-completion provider abstraction: a real OpenAI-style HTTP provider, a
deterministic scripted mock for tests, retry/backoff, and cost accounting.

Money is integer arithmetic throughout. Rates are stored in micro-units per
1,000 tokens, and because cost = tokens x rate / 1000, a cost in nano-units
is exactly tokens x micro-rate — no division, no rounding, no float drift.
Decimal is used only when rendering a report.
"""

from __future__ import annotations

import hashlib
import math
import os
import random
import threading
import time
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Callable, Iterable, Protocol

import requests

from .errors import (
    ProviderError,
    RetriesExhausted,
    Timeout,
    TransientError,
    UnmatchedRequest,
)
from .prompts import PromptKind, PromptSpec

_BACKOFF_BASE_S = 1.0
_BACKOFF_CAP_S = 30.0


@dataclass
class LlmConfig:
    model_name: str = "gpt-4"
    temperature: float = 0.7
    reanswer_temperature: float = 0.0
    max_output_tokens: int = 512
    request_timeout: float = 60.0
    max_retries: int = 3
    max_concurrent_requests: int = 4

    def __post_init__(self):
        if self.temperature < 0 or self.reanswer_temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be > 0")
        if self.request_timeout <= 0:
            raise ValueError("request_timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrent_requests < 1:
            raise ValueError("max_concurrent_requests must be >= 1")

    def temperature_for(self, kind: PromptKind) -> float:
        # The round-trip consistency check should not be stochastic.
        if kind == PromptKind.RE_ANSWER:
            return self.reanswer_temperature
        return self.temperature


@dataclass(frozen=True)
class ProviderReply:
    text: str
    prompt_tokens: int
    completion_tokens: int


@dataclass(frozen=True)
class LlmExchange:
    """One request/response round, including usage as reported by the provider."""

    prompt: PromptSpec
    response_text: str
    prompt_tokens: int
    completion_tokens: int
    latency: float
    attempt_count: int


class ChatProvider(Protocol):
    def send(self, prompt: PromptSpec, config: LlmConfig) -> ProviderReply: ...


# --------------------------------------------------------------------------
# Price table and cost reports


@dataclass(frozen=True)
class PriceTable:
    """Rates in integer micro-units of currency per 1,000 tokens."""

    prompt_rate_micro: int
    completion_rate_micro: int
    currency_code: str = "USD"

    def __post_init__(self):
        if self.prompt_rate_micro < 0 or self.completion_rate_micro < 0:
            raise ValueError("rates must be >= 0")

    @classmethod
    def zero(cls) -> "PriceTable":
        return cls(0, 0)

    @classmethod
    def from_rates(cls, prompt_per_1k, completion_per_1k, currency_code: str = "USD") -> "PriceTable":
        """Build from decimal currency rates per 1K tokens (e.g. "0.03")."""
        def to_micro(rate) -> int:
            micro = Decimal(str(rate)) * 1_000_000
            if micro != micro.to_integral_value():
                raise ValueError(f"rate {rate!r} is finer than micro-unit precision")
            return int(micro)

        return cls(to_micro(prompt_per_1k), to_micro(completion_per_1k), currency_code)

    @classmethod
    def from_file(cls, path: str | Path) -> "PriceTable":
        """Read {"prompt_per_1k": ..., "completion_per_1k": ..., "currency": ...}."""
        import json

        raw = json.loads(Path(path).read_text(encoding="utf-8"), parse_float=Decimal)
        return cls.from_rates(
            raw["prompt_per_1k"], raw["completion_per_1k"], raw.get("currency", "USD")
        )


def _nano_to_currency_str(nano: int) -> str:
    return format(Decimal(nano).scaleb(-9), "f")


@dataclass
class StageCost:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    cost_nano: int = 0

    def to_dict(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "cost": _nano_to_currency_str(self.cost_nano),
        }


@dataclass
class CostReport:
    total_prompt_tokens: int
    total_completion_tokens: int
    total_cost_nano: int
    currency_code: str
    per_stage: dict[str, StageCost] = field(default_factory=dict)

    @property
    def total_cost(self) -> Decimal:
        return Decimal(self.total_cost_nano).scaleb(-9)

    def to_dict(self) -> dict:
        return {
            "total_prompt_tokens": self.total_prompt_tokens,
            "total_completion_tokens": self.total_completion_tokens,
            "total_cost": _nano_to_currency_str(self.total_cost_nano),
            "currency": self.currency_code,
            "per_stage": {
                stage: self.per_stage[stage].to_dict() for stage in sorted(self.per_stage)
            },
        }

    def to_table(self) -> str:
        lines = [
            f"Prompt tokens      {self.total_prompt_tokens}",
            f"Completion tokens  {self.total_completion_tokens}",
            f"Total cost         {_nano_to_currency_str(self.total_cost_nano)} {self.currency_code}",
        ]
        for stage in sorted(self.per_stage):
            s = self.per_stage[stage]
            lines.append(
                f"  {stage:<12} {s.prompt_tokens}+{s.completion_tokens} tok, "
                f"{_nano_to_currency_str(s.cost_nano)} {self.currency_code}"
            )
        return "\n".join(lines)


def accumulate_cost(exchanges: Iterable[LlmExchange], prices: PriceTable) -> CostReport:
    """Sum token usage and exact cost, broken down by prompt kind.

    Pure summation, so the result is independent of exchange order and of how
    the input was split into batches.
    """
    stages: dict[str, StageCost] = {}
    for ex in exchanges:
        stage = stages.setdefault(ex.prompt.kind.value, StageCost())
        stage.prompt_tokens += ex.prompt_tokens
        stage.completion_tokens += ex.completion_tokens
        stage.cost_nano += (
            ex.prompt_tokens * prices.prompt_rate_micro
            + ex.completion_tokens * prices.completion_rate_micro
        )
    return CostReport(
        total_prompt_tokens=sum(s.prompt_tokens for s in stages.values()),
        total_completion_tokens=sum(s.completion_tokens for s in stages.values()),
        total_cost_nano=sum(s.cost_nano for s in stages.values()),
        currency_code=prices.currency_code,
        per_stage=stages,
    )


# --------------------------------------------------------------------------
# Scripted mock provider


@dataclass(frozen=True)
class MockFailure:
    """Scripted failure: fail the first `times` deliveries (None = always)."""

    times: int | None = None
    retryable: bool = True
    message: str = "scripted failure"


@dataclass(frozen=True)
class MockRule:
    """Answer requests matching (kind, contains); first matching rule wins.

    response is a string (with optional "{request_hash}" placeholder replaced
    by a short content hash) or a callable of the PromptSpec, so responses are
    always a pure function of request content, never of arrival order.
    """

    response: str | Callable[[PromptSpec], str] = ""
    kind: PromptKind | None = None
    contains: str | None = None
    fail: MockFailure | None = None

    def matches(self, prompt: PromptSpec) -> bool:
        if self.kind is not None and prompt.kind != self.kind:
            return False
        if self.contains is not None and self.contains not in prompt.rendered_user:
            return False
        return True


def request_hash(prompt: PromptSpec) -> str:
    payload = f"{prompt.kind.value}\x00{prompt.rendered_system}\x00{prompt.rendered_user}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:8]


def _estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


class ScriptedMockProvider:
    """Deterministic provider driven by an ordered rule script.

    Failure budgets are tracked per (rule, request content), so behavior does
    not depend on how concurrent requests interleave. Safe for concurrent use.
    """

    def __init__(self, script: list[MockRule]):
        if not script:
            raise ValueError("mock script must contain at least one rule")
        self.script = list(script)
        self._delivery_counts: dict[tuple[int, str], int] = {}
        self._lock = threading.Lock()

    def send(self, prompt: PromptSpec, config: LlmConfig) -> ProviderReply:
        for idx, rule in enumerate(self.script):
            if not rule.matches(prompt):
                continue
            if rule.fail is not None:
                key = (idx, request_hash(prompt))
                with self._lock:
                    count = self._delivery_counts.get(key, 0) + 1
                    self._delivery_counts[key] = count
                if rule.fail.times is None or count <= rule.fail.times:
                    if rule.fail.retryable:
                        raise TransientError(rule.fail.message)
                    raise ProviderError(rule.fail.message)
            if callable(rule.response):
                text = rule.response(prompt)
            else:
                text = rule.response.replace("{request_hash}", request_hash(prompt))
            prompt_chars = len(prompt.rendered_system) + len(prompt.rendered_user)
            return ProviderReply(
                text=text,
                prompt_tokens=math.ceil(prompt_chars / 4),
                completion_tokens=_estimate_tokens(text),
            )
        raise UnmatchedRequest(
            f"no mock rule matches a {prompt.kind.value} request "
            f"(user text starts: {prompt.rendered_user[:80]!r})"
        )


def scripted_mock(script: list[MockRule]) -> ScriptedMockProvider:
    return ScriptedMockProvider(script)


def load_mock_script(path: str | Path) -> ScriptedMockProvider:
    """Read a mock script from a JSON list of rule objects.

    Each rule: {"kind": "context_gen"|"qa_gen"|"reanswer"|null,
    "contains": str|null, "response": str, "fail_times": int|null,
    "retryable": bool, "always_fail": bool}.
    """
    import json

    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list) or not raw:
        raise ValueError("mock script file must be a non-empty JSON list of rules")
    rules = []
    for entry in raw:
        fail = None
        if entry.get("always_fail"):
            fail = MockFailure(times=None, retryable=entry.get("retryable", True))
        elif entry.get("fail_times"):
            fail = MockFailure(times=int(entry["fail_times"]), retryable=entry.get("retryable", True))
        rules.append(
            MockRule(
                response=entry.get("response", ""),
                kind=PromptKind(entry["kind"]) if entry.get("kind") else None,
                contains=entry.get("contains"),
                fail=fail,
            )
        )
    return ScriptedMockProvider(rules)


# --------------------------------------------------------------------------
# Real provider: OpenAI-style chat completions over HTTP


class OpenAiHttpProvider:
    """Speaks the OpenAI chat-completions JSON protocol.

    The API key is read from an environment variable at request time so a
    long-lived provider picks up rotated keys.
    """

    def __init__(
        self,
        base_url: str = "https://api.openai.com/v1",
        api_key_env: str = "OPENAI_API_KEY",
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self._session = session or requests.Session()

    def send(self, prompt: PromptSpec, config: LlmConfig) -> ProviderReply:
        api_key = os.environ.get(self.api_key_env, "")
        if not api_key:
            raise ProviderError(f"no API key in environment variable {self.api_key_env}")
        body = {
            "model": config.model_name,
            "messages": [
                {"role": "system", "content": prompt.rendered_system},
                {"role": "user", "content": prompt.rendered_user},
            ],
            "temperature": config.temperature_for(prompt.kind),
            "max_tokens": config.max_output_tokens,
        }
        try:
            response = self._session.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {api_key}"},
                timeout=config.request_timeout,
            )
        except requests.Timeout as exc:
            raise Timeout(f"request timed out after {config.request_timeout}s") from exc
        except requests.ConnectionError as exc:
            raise TransientError(f"connection failed: {exc}") from exc

        if response.status_code == 429 or response.status_code >= 500:
            raise TransientError(f"provider returned HTTP {response.status_code}")
        if response.status_code >= 400:
            raise ProviderError(
                f"provider returned HTTP {response.status_code}: {response.text[:200]}"
            )
        try:
            data = response.json()
            text = data["choices"][0]["message"]["content"]
            usage = data.get("usage", {})
            return ProviderReply(
                text=text if isinstance(text, str) else "",
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
            )
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ProviderError(f"malformed provider response: {exc}") from exc


# --------------------------------------------------------------------------
# Client with retry, backoff, and the concurrency admission gate


def _backoff_delay(failed_attempts: int, uniform: Callable[[float, float], float]) -> float:
    # Exponential with full jitter: base 1s, doubling, capped at 30s.
    ceiling = min(_BACKOFF_CAP_S, _BACKOFF_BASE_S * 2 ** (failed_attempts - 1))
    return uniform(0.0, ceiling)


class LlmClient:
    """Shared handle for issuing completions against a provider.

    Transient failures are retried with exponential backoff and full jitter;
    non-retryable errors propagate immediately. The admission gate limits
    in-flight requests to config.max_concurrent_requests across all threads.
    """

    def __init__(
        self,
        provider: ChatProvider,
        config: LlmConfig,
        prices: PriceTable | None = None,
        *,
        sleep: Callable[[float], None] = time.sleep,
        uniform: Callable[[float, float], float] | None = None,
    ):
        self.provider = provider
        self.config = config
        self.prices = prices or PriceTable.zero()
        self._sleep = sleep
        self._uniform = uniform or random.Random().uniform
        self._gate = threading.BoundedSemaphore(config.max_concurrent_requests)

    def complete(self, prompt: PromptSpec) -> LlmExchange:
        attempts = 0
        while True:
            attempts += 1
            started = time.monotonic()
            try:
                with self._gate:
                    reply = self.provider.send(prompt, self.config)
            except TransientError as exc:
                if attempts > self.config.max_retries:
                    if isinstance(exc, Timeout):
                        raise Timeout(f"timed out on all {attempts} attempts") from exc
                    raise RetriesExhausted(attempts, exc) from exc
                self._sleep(_backoff_delay(attempts, self._uniform))
                continue
            return LlmExchange(
                prompt=prompt,
                response_text=reply.text,
                prompt_tokens=reply.prompt_tokens,
                completion_tokens=reply.completion_tokens,
                latency=time.monotonic() - started,
                attempt_count=attempts,
            )


def exchange_log_entry(exchange: LlmExchange) -> dict:
    """Compact audit record for one exchange (JSONL cost log)."""
    return {
        "kind": exchange.prompt.kind.value,
        "prompt_tokens": exchange.prompt_tokens,
        "completion_tokens": exchange.completion_tokens,
        "latency_s": round(exchange.latency, 6),
        "attempt_count": exchange.attempt_count,
    }


def load_exchange_log(path: str | Path) -> list[LlmExchange]:
    """Rebuild minimal exchanges (kind + usage only) from a JSONL cost log."""
    import json

    exchanges = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        entry = json.loads(line)
        stub = PromptSpec(
            kind=PromptKind(entry["kind"]),
            rendered_system="",
            rendered_user="",
            exemplar_ids=(),
            shots=0,
        )
        exchanges.append(
            LlmExchange(
                prompt=stub,
                response_text="",
                prompt_tokens=int(entry["prompt_tokens"]),
                completion_tokens=int(entry["completion_tokens"]),
                latency=float(entry.get("latency_s", 0.0)),
                attempt_count=int(entry.get("attempt_count", 1)),
            )
        )
    return exchanges
