"""Two-stage synthesis orchestration: contexts first, then QA pairs
conditioned on them, at a target multiple of the original training-set size.

Every provider request draws its few-shot exemplars freshly from a seed
derived from (run seed, stage, request index, attempt), so a run is a pure
function of (dataset, config, provider script) and is reproducible regardless
of how many workers execute it. All aggregation is keyed by request index and
stats are merged by summation, so ordering never leaks into the output.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .dataset import (
    SYNTHETIC_ID_PREFIX,
    GenMeta,
    Passage,
    Provenance,
    QaDataset,
    QaPair,
    sample_exemplars,
    validate_dataset,
)
from .errors import Unalignable
from .llm import CostReport, LlmClient, LlmExchange, PriceTable, accumulate_cost
from .prompts import PromptKind, build_context_prompt, build_qa_prompt
from .quality import (
    DEFAULT_F1_THRESHOLD,
    FilterDecision,
    MatchRule,
    align_span,
    dedupe_exact,
    roundtrip_filter,
)


@dataclass
class GenerationConfig:
    shots: int = 1
    multiplier: float = 1.0
    qa_per_context: int = 1
    rng_seed: int = 0
    parse_retry_limit: int = 2
    apply_roundtrip_filter: bool = True

    def __post_init__(self):
        if self.shots not in (1, 2):
            raise ValueError(f"shots must be 1 or 2, got {self.shots}")
        if not 1 <= self.multiplier <= 10:
            raise ValueError(f"multiplier must be within [1, 10], got {self.multiplier}")
        if self.qa_per_context < 1:
            raise ValueError("qa_per_context must be >= 1")
        if self.parse_retry_limit < 0:
            raise ValueError("parse_retry_limit must be >= 0")


@dataclass
class GenerationRunStats:
    """Accounting ledger for one augmentation run.

    Every requested QA lands in exactly one terminal bucket:
    kept_after_filter, discarded_parse, discarded_alignment, or
    discarded_filter.
    """

    contexts_requested: int = 0
    contexts_generated: int = 0
    qa_requested: int = 0
    qa_parsed: int = 0
    qa_aligned: int = 0
    qa_kept_after_filter: int = 0
    qa_discarded_parse: int = 0
    qa_discarded_alignment: int = 0
    qa_discarded_filter: int = 0
    cost: CostReport = field(
        default_factory=lambda: accumulate_cost([], PriceTable.zero())
    )

    @property
    def shortfall(self) -> bool:
        """True when stage 1 could not produce the target number of distinct contexts."""
        return self.contexts_generated < self.contexts_requested

    def assert_balanced(self) -> None:
        if self.qa_requested != self.qa_parsed + self.qa_discarded_parse:
            raise ValueError("ledger imbalance: requested != parsed + discarded_parse")
        if self.qa_parsed != self.qa_aligned + self.qa_discarded_alignment:
            raise ValueError("ledger imbalance: parsed != aligned + discarded_alignment")
        if self.qa_aligned != self.qa_kept_after_filter + self.qa_discarded_filter:
            raise ValueError("ledger imbalance: aligned != kept + discarded_filter")

    def to_dict(self) -> dict:
        return {
            "contexts_requested": self.contexts_requested,
            "contexts_generated": self.contexts_generated,
            "qa_requested": self.qa_requested,
            "qa_parsed": self.qa_parsed,
            "qa_aligned": self.qa_aligned,
            "qa_kept_after_filter": self.qa_kept_after_filter,
            "qa_discarded_parse": self.qa_discarded_parse,
            "qa_discarded_alignment": self.qa_discarded_alignment,
            "qa_discarded_filter": self.qa_discarded_filter,
            "shortfall": self.shortfall,
            "cost": self.cost.to_dict(),
        }


@dataclass(frozen=True)
class RawQa:
    """One parsed (question, answer) string pair plus its generation context."""

    question: str
    answer: str
    exemplar_ids: tuple[str, ...]
    slot: int


@dataclass
class QaGenerationResult:
    pairs: list[RawQa] = field(default_factory=list)
    discarded_parse: int = 0


def requested_context_count(train: QaDataset, config: GenerationConfig) -> int:
    """ceil(multiplier x train pairs / qa_per_context) — the stage-1 target."""
    return math.ceil(config.multiplier * train.qa_pair_count / config.qa_per_context)


def _derive_key(seed, *parts) -> str:
    # String seeds hash via SHA-512 inside random.Random: stable across
    # platforms and processes, unaffected by PYTHONHASHSEED.
    return ":".join(str(p) for p in (seed, *parts))


def parse_qa_completion(text: str) -> tuple[str, str] | None:
    """Extract (question, answer) from the "Question: ...\\nAnswer: ..." layout.

    The question is everything between the two markers; the answer runs from
    its marker to the first blank line (or the end). Returns None when the
    completion does not conform.
    """
    q_marker = text.find("Question:")
    if q_marker < 0:
        return None
    a_marker = text.find("Answer:", q_marker + len("Question:"))
    if a_marker < 0:
        return None
    question = text[q_marker + len("Question:") : a_marker].strip()
    answer_region = text[a_marker + len("Answer:") :]
    answer = answer_region.split("\n\n", 1)[0].strip()
    if not question or not answer:
        return None
    return question, answer


def _parallel_map(fn, n: int, max_workers: int) -> list:
    if n == 0:
        return []
    if max_workers <= 1 or n == 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=min(max_workers, n)) as pool:
        return list(pool.map(fn, range(n)))


def generate_contexts(
    train: QaDataset,
    config: GenerationConfig,
    client: LlmClient,
    templates,
    *,
    exchange_sink: list[LlmExchange] | None = None,
) -> list[str]:
    """Stage 1: synthesize paragraph-length contexts from few-shot exemplars.

    Issues requested_context_count requests, each primed with a freshly drawn
    exemplar set. Whitespace-only completions are retried up to
    parse_retry_limit times; slots that stay blank are simply omitted, which
    callers observe as a shortfall. Provider errors propagate.
    """
    target = requested_context_count(train, config)
    template = templates[PromptKind.CONTEXT_GEN]

    def generate_one(index: int) -> tuple[str | None, list[LlmExchange]]:
        exchanges = []
        for attempt in range(config.parse_retry_limit + 1):
            key = _derive_key(config.rng_seed, "ctx", index, attempt)
            exemplars = sample_exemplars(train, config.shots, key)
            prompt = build_context_prompt(
                [context for context, _ in exemplars],
                template,
                config.shots,
                exemplar_ids=[qa.id for _, qa in exemplars],
            )
            exchange = client.complete(prompt)
            exchanges.append(exchange)
            if exchange.response_text.strip():
                return exchange.response_text.strip(), exchanges
        return None, exchanges

    outcomes = _parallel_map(generate_one, target, client.config.max_concurrent_requests)
    contexts = []
    for text, exchanges in outcomes:
        if exchange_sink is not None:
            exchange_sink.extend(exchanges)
        if text is not None:
            contexts.append(text)
    return contexts


def generate_qa_for_context(
    context: str,
    train: QaDataset,
    config: GenerationConfig,
    client: LlmClient,
    templates,
    *,
    context_index: int = 0,
    exchange_sink: list[LlmExchange] | None = None,
) -> QaGenerationResult:
    """Stage 2: ask for qa_per_context pairs about one synthetic context.

    Each slot is an independent request with its own exemplar draw.
    Completions that do not follow the Question:/Answer: layout are retried
    up to parse_retry_limit times, then counted as discarded_parse.
    """
    if not context.strip():
        raise ValueError("context must be non-empty")
    template = templates[PromptKind.QA_GEN]
    result = QaGenerationResult()
    for slot in range(config.qa_per_context):
        parsed = None
        exemplar_ids: tuple[str, ...] = ()
        for attempt in range(config.parse_retry_limit + 1):
            key = _derive_key(config.rng_seed, "qa", context_index, slot, attempt)
            exemplars = sample_exemplars(train, config.shots, key)
            prompt = build_qa_prompt(exemplars, context, template, config.shots)
            exchange = client.complete(prompt)
            if exchange_sink is not None:
                exchange_sink.append(exchange)
            parsed = parse_qa_completion(exchange.response_text)
            if parsed is not None:
                exemplar_ids = prompt.exemplar_ids
                break
        if parsed is None:
            result.discarded_parse += 1
        else:
            result.pairs.append(
                RawQa(question=parsed[0], answer=parsed[1], exemplar_ids=exemplar_ids, slot=slot)
            )
    return result


def run_augmentation(
    train: QaDataset,
    config: GenerationConfig,
    client: LlmClient,
    templates,
    *,
    match_rule: MatchRule = MatchRule.NORMALIZED_EXACT,
    match_threshold: float = DEFAULT_F1_THRESHOLD,
    decisions_sink: list[FilterDecision] | None = None,
    exchange_sink: list[LlmExchange] | None = None,
) -> tuple[QaDataset, GenerationRunStats]:
    """Run the full two-stage synthesis and return (synthetic dataset, stats).

    Composes context generation, QA generation, span alignment and (when
    configured) the round-trip filter. Every emitted pair carries synthetic
    provenance with gen_meta, and the result always satisfies the dataset
    invariants. Duplicate contexts are collapsed by exact hash between the
    stages; a stage-1 target miss is reported as stats.shortfall, not an
    error, so a long run never throws away paid-for data.
    """
    validate_dataset(train)
    stats = GenerationRunStats()
    exchanges: list[LlmExchange] = []

    raw_contexts = generate_contexts(train, config, client, templates, exchange_sink=exchanges)
    contexts = dedupe_exact(raw_contexts)
    stats.contexts_requested = requested_context_count(train, config)
    stats.contexts_generated = len(contexts)

    def qa_task(index: int) -> tuple[QaGenerationResult, list[LlmExchange]]:
        local: list[LlmExchange] = []
        result = generate_qa_for_context(
            contexts[index],
            train,
            config,
            client,
            templates,
            context_index=index,
            exchange_sink=local,
        )
        return result, local

    qa_outcomes = _parallel_map(qa_task, len(contexts), client.config.max_concurrent_requests)

    stats.qa_requested = len(contexts) * config.qa_per_context
    aligned: list[tuple[Passage, QaPair]] = []
    passages_in_order: list[Passage] = []
    for index, (result, local_exchanges) in enumerate(qa_outcomes):
        exchanges.extend(local_exchanges)
        stats.qa_discarded_parse += result.discarded_parse
        stats.qa_parsed += len(result.pairs)
        passage = Passage(context=contexts[index], qas=[])
        passages_in_order.append(passage)
        for raw in result.pairs:
            try:
                span = align_span(passage.context, raw.answer)
            except Unalignable:
                stats.qa_discarded_alignment += 1
                continue
            generation_id = f"s{config.rng_seed}-c{index}-q{raw.slot}"
            qa = QaPair(
                id=SYNTHETIC_ID_PREFIX + generation_id,
                question=raw.question,
                answers=[span],
                provenance=Provenance.SYNTHETIC,
                gen_meta=GenMeta(
                    shots=config.shots,
                    generation_id=generation_id,
                    filtered=config.apply_roundtrip_filter,
                ),
            )
            aligned.append((passage, qa))
    stats.qa_aligned = len(aligned)

    if config.apply_roundtrip_filter:
        kept, decisions = roundtrip_filter(
            aligned,
            client,
            templates,
            rule=match_rule,
            threshold=match_threshold,
            exchange_sink=exchanges,
        )
        stats.qa_discarded_filter = stats.qa_aligned - len(kept)
        if decisions_sink is not None:
            decisions_sink.extend(decisions)
    else:
        kept = aligned
    stats.qa_kept_after_filter = len(kept)

    for passage, qa in kept:
        passage.qas.append(qa)
    synthetic = QaDataset(
        name=f"{train.name}-syn",
        passages=[p for p in passages_in_order if p.qas],
    )
    validate_dataset(synthetic)

    stats.cost = accumulate_cost(exchanges, client.prices)
    stats.assert_balanced()
    if exchange_sink is not None:
        exchange_sink.extend(exchanges)
    return synthetic, stats
