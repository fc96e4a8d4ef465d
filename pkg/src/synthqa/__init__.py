"""synthqa: synthetic data augmentation and evaluation for extractive QA.

The pipeline synthesizes new passages from few-shot exemplars, asks for
question-answer pairs over them, anchors each answer to a character span,
optionally keeps only round-trip-consistent pairs, and scores downstream
predictions with SQuAD-style Exact Match and token F1 — with exact cost
accounting for every provider call.
"""

__version__ = "0.1.0"

from .dataset import (
    AnswerSpan,
    GenMeta,
    Passage,
    Provenance,
    QaDataset,
    QaPair,
    load_dataset,
    merge_datasets,
    sample_exemplars,
    save_dataset,
    validate_dataset,
)
from .errors import (
    IdCollision,
    InsufficientData,
    ParseError,
    ProviderError,
    RetriesExhausted,
    SpanError,
    SynthQaError,
    TemplateError,
    Timeout,
    TransientError,
    Unalignable,
    UnmatchedRequest,
)
from .llm import (
    CostReport,
    LlmClient,
    LlmConfig,
    LlmExchange,
    MockFailure,
    MockRule,
    OpenAiHttpProvider,
    PriceTable,
    ScriptedMockProvider,
    accumulate_cost,
    scripted_mock,
)
from .metrics import (
    EvalReport,
    evaluate,
    exact_match,
    normalize_answer,
    relative_improvement,
    token_f1,
)
from .pipeline import (
    GenerationConfig,
    GenerationRunStats,
    generate_contexts,
    generate_qa_for_context,
    run_augmentation,
)
from .prompts import (
    DEFAULT_TEMPLATES,
    PromptKind,
    PromptSpec,
    PromptTemplate,
    build_context_prompt,
    build_qa_prompt,
    build_reanswer_prompt,
    load_templates,
)
from .quality import (
    FilterDecision,
    MatchRule,
    align_span,
    dedupe_exact,
    roundtrip_filter,
)
