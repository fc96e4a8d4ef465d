"""Reading canonical QA dataset files and turning them into model features.

The reader is intentionally self-contained: the trainer talks to the
augmentation toolchain only through the dataset JSON and predictions JSON
file formats, never through its code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path


@dataclass
class QaExample:
    qa_id: str
    question: str
    context: str
    answer_text: str
    answer_start: int


def read_canonical(path: str | Path) -> list[QaExample]:
    """Flatten a canonical dataset file into one example per QA pair.

    The first answer span is used for training targets; offsets are 0-based
    character offsets into the context.
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        examples = []
        for passage in raw["passages"]:
            context = passage["context"]
            for qa in passage["qas"]:
                answer = qa["answers"][0]
                examples.append(
                    QaExample(
                        qa_id=qa["id"],
                        question=qa["question"],
                        context=context,
                        answer_text=answer["text"],
                        answer_start=int(answer["answer_start"]),
                    )
                )
        return examples
    except (KeyError, IndexError, TypeError) as exc:
        raise ValueError(f"{path} is not a canonical dataset file: {exc}") from exc


@dataclass
class FeatureBatch:
    """Tokenized windows plus the bookkeeping needed to decode spans."""

    encodings: dict  # input_ids / attention_mask / (token_type_ids) lists
    example_index: list[int]  # window -> example
    offset_mapping: list[list[tuple[int, int] | None]]  # None outside the context
    start_positions: list[int] | None = None
    end_positions: list[int] | None = None

    def __len__(self) -> int:
        return len(self.example_index)


_MODEL_INPUT_KEYS = ("input_ids", "attention_mask", "token_type_ids")


def build_features(
    examples: list[QaExample],
    tokenizer,
    max_length: int,
    doc_stride: int,
    with_targets: bool,
) -> FeatureBatch:
    """Tokenize (question, context) pairs into fixed-length windows.

    Long contexts overflow into several windows with `doc_stride` overlap,
    clamped to what the tokenizer can honor at this max_length. With targets,
    each window gets start/end token positions for its answer span, or (0, 0)
    when the answer is not fully inside the window.
    """
    effective_max = max_length - tokenizer.num_special_tokens_to_add(pair=True)
    stride = min(doc_stride, max(0, effective_max - 1))
    encoded = tokenizer(
        [ex.question for ex in examples],
        [ex.context for ex in examples],
        truncation="only_second",
        max_length=max_length,
        stride=stride,
        padding="max_length",
        return_overflowing_tokens=True,
        return_offsets_mapping=True,
    )
    sample_mapping = encoded["overflow_to_sample_mapping"]
    raw_offsets = encoded["offset_mapping"]

    example_index = []
    offsets_masked = []
    starts = [] if with_targets else None
    ends = [] if with_targets else None

    for window, ex_idx in enumerate(sample_mapping):
        sequence_ids = encoded.sequence_ids(window)
        example_index.append(ex_idx)
        offsets_masked.append(
            [
                offset if sequence_ids[pos] == 1 else None
                for pos, offset in enumerate(raw_offsets[window])
            ]
        )
        if not with_targets:
            continue
        example = examples[ex_idx]
        answer_lo = example.answer_start
        answer_hi = answer_lo + len(example.answer_text)
        start_tok = end_tok = 0
        for pos, offset in enumerate(offsets_masked[-1]):
            if offset is None or offset[0] == offset[1]:
                continue
            if offset[0] <= answer_lo < offset[1]:
                start_tok = pos
            if offset[0] < answer_hi <= offset[1]:
                end_tok = pos
        if start_tok == 0 or end_tok == 0 or end_tok < start_tok:
            start_tok = end_tok = 0  # answer not (fully) in this window
        starts.append(start_tok)
        ends.append(end_tok)

    encodings = {key: encoded[key] for key in _MODEL_INPUT_KEYS if key in encoded}
    return FeatureBatch(
        encodings=encodings,
        example_index=example_index,
        offset_mapping=offsets_masked,
        start_positions=starts,
        end_positions=ends,
    )
