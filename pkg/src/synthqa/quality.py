"""Span alignment for generated answers and round-trip consistency filtering.

Alignment anchors a generated answer string to a character offset in its
context so the example is valid for extractive training. Filtering re-asks
each generated question (without its answer) and keeps the pair only when the
fresh answer matches the original — a precision filter that deliberately
sacrifices recall.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from pathlib import Path

from .dataset import AnswerSpan, Passage, QaPair
from .errors import ProviderError, RetriesExhausted, Timeout, Unalignable
from .llm import LlmClient, LlmExchange
from .metrics import is_punctuation, normalize_answer, token_f1
from .prompts import PromptKind, PromptTemplate, build_reanswer_prompt


class MatchRule(str, enum.Enum):
    NORMALIZED_EXACT = "normalized_exact"
    TOKEN_F1_THRESHOLD = "token_f1_threshold"


DEFAULT_F1_THRESHOLD = 0.8


@dataclass(frozen=True)
class FilterDecision:
    """Audit record for one round-trip check."""

    qa_id: str
    original_answer: str
    reanswer: str
    matched: bool
    match_rule: MatchRule
    f1_value: float | None = None
    provider_failed: bool = False

    def to_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "original_answer": self.original_answer,
            "reanswer": self.reanswer,
            "matched": self.matched,
            "match_rule": self.match_rule.value,
            "f1_value": self.f1_value,
            "provider_failed": self.provider_failed,
        }


def _trim_terminal_punctuation(s: str) -> str:
    end = len(s)
    while end > 0 and (is_punctuation(s[end - 1]) or s[end - 1].isspace()):
        end -= 1
    return s[:end]


def align_span(context: str, answer_text: str) -> AnswerSpan:
    """Anchor answer_text to its first occurrence in context.

    Tried in order: exact substring; case-insensitive match (span text taken
    from the context's casing); both again after trimming terminal punctuation
    from the answer. Raises Unalignable when no rule lands.
    """
    if not context or not answer_text:
        raise Unalignable("context and answer must be non-empty")

    candidates = [answer_text]
    trimmed = _trim_terminal_punctuation(answer_text)
    if trimmed and trimmed != answer_text:
        candidates.append(trimmed)

    for candidate in candidates:
        start = context.find(candidate)
        if start >= 0:
            return AnswerSpan(text=candidate, answer_start=start)
        match = re.search(re.escape(candidate), context, re.IGNORECASE)
        if match:
            return AnswerSpan(text=match.group(0), answer_start=match.start())
    raise Unalignable(f"answer {answer_text!r} does not occur in the context")


def _matches(
    original_answers: list[str], reanswer: str, rule: MatchRule, threshold: float
) -> tuple[bool, float | None]:
    if rule == MatchRule.NORMALIZED_EXACT:
        normalized = normalize_answer(reanswer)
        return any(normalized == normalize_answer(a) for a in original_answers), None
    f1 = token_f1(reanswer, original_answers)
    return f1 >= threshold, f1


def roundtrip_filter(
    pairs: list[tuple[Passage, QaPair]],
    client: LlmClient,
    templates,
    rule: MatchRule = MatchRule.NORMALIZED_EXACT,
    threshold: float = DEFAULT_F1_THRESHOLD,
    exchange_sink: list[LlmExchange] | None = None,
) -> tuple[list[tuple[Passage, QaPair]], list[FilterDecision]]:
    """Re-ask every question and keep pairs whose fresh answer matches.

    Returns (kept, decisions): kept preserves input order and is always a
    subset of the input; decisions has exactly one entry per input pair. A
    pair with several gold answers is kept if any of them matches. A provider
    failure on a pair discards it with the decision flagged, never silently.
    Nothing is ever rewritten — this only selects.

    exchange_sink, when given, collects the re-answer exchanges for cost
    accounting.
    """
    template: PromptTemplate = templates[PromptKind.RE_ANSWER] if isinstance(templates, dict) else templates
    kept = []
    decisions = []
    for passage, qa in pairs:
        original_answers = [a.text for a in qa.answers]
        prompt = build_reanswer_prompt(passage.context, qa.question, template)
        try:
            exchange = client.complete(prompt)
        except (ProviderError, RetriesExhausted, Timeout):
            decisions.append(
                FilterDecision(
                    qa_id=qa.id,
                    original_answer=original_answers[0],
                    reanswer="",
                    matched=False,
                    match_rule=rule,
                    provider_failed=True,
                )
            )
            continue
        if exchange_sink is not None:
            exchange_sink.append(exchange)
        reanswer = exchange.response_text.strip()
        matched, f1 = _matches(original_answers, reanswer, rule, threshold)
        decisions.append(
            FilterDecision(
                qa_id=qa.id,
                original_answer=original_answers[0],
                reanswer=reanswer,
                matched=matched,
                match_rule=rule,
                f1_value=f1,
            )
        )
        if matched:
            kept.append((passage, qa))
    return kept, decisions


def dedupe_exact(contexts: list[str]) -> list[str]:
    """Drop whitespace-normalized duplicates, keeping the first occurrence.

    The returned strings are the originals, untouched.
    """
    seen = set()
    out = []
    for ctx in contexts:
        key = " ".join(ctx.split())
        if key in seen:
            continue
        seen.add(key)
        out.append(ctx)
    return out


def write_decisions(decisions: list[FilterDecision], path: str | Path) -> None:
    """Write the optional audit file: one FilterDecision JSON object per line."""
    lines = [json.dumps(d.to_dict(), ensure_ascii=False) for d in decisions]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_decisions(path: str | Path) -> list[FilterDecision]:
    decisions = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        raw = json.loads(line)
        decisions.append(
            FilterDecision(
                qa_id=raw["qa_id"],
                original_answer=raw["original_answer"],
                reanswer=raw["reanswer"],
                matched=raw["matched"],
                match_rule=MatchRule(raw["match_rule"]),
                f1_value=raw.get("f1_value"),
                provider_failed=raw.get("provider_failed", False),
            )
        )
    return decisions
