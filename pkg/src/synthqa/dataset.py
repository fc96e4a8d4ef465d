"""Canonical in-memory model and file I/O for extractive QA datasets.

The canonical JSON layout is::

    {
      "name": str,
      "passages": [
        {
          "title": str | null,
          "context": str,
          "qas": [
            {
              "id": str,
              "question": str,
              "answers": [{"text": str, "answer_start": int}],
              "provenance": "original" | "synthetic",
              "gen_meta": {"shots": int, "generation_id": str, "filtered": bool} | null
            }
          ]
        }
      ]
    }

Files are UTF-8 without BOM. Answer offsets are 0-based character offsets
counted in Unicode scalar values (Python string indices), never bytes, so a
dataset round-trips identically across platforms.

Datasets are treated as immutable after construction; every operation that
"changes" one builds a new value.
"""

from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IdCollision, InsufficientData, ParseError, SpanError

SYNTHETIC_ID_PREFIX = "syn-"


class Provenance(str, enum.Enum):
    ORIGINAL = "original"
    SYNTHETIC = "synthetic"


class DatasetFormat(str, enum.Enum):
    CANONICAL_JSON = "canonical-json"


@dataclass(frozen=True)
class AnswerSpan:
    """A verbatim answer plus its character offset into the owning context."""

    text: str
    answer_start: int

    def verify_against(self, context: str, qa_id: str) -> None:
        """Raise SpanError unless context[answer_start:] starts with text."""
        end = self.answer_start + len(self.text)
        if self.answer_start < 0 or end > len(context):
            raise SpanError(
                f"answer span [{self.answer_start}, {end}) falls outside the context "
                f"(context length {len(context)})",
                qa_id=qa_id,
            )
        found = context[self.answer_start : end]
        if found != self.text:
            raise SpanError(
                f"answer text {self.text!r} does not match context at offset "
                f"{self.answer_start} (found {found!r})",
                qa_id=qa_id,
            )


@dataclass(frozen=True)
class GenMeta:
    """Generation provenance carried by every synthetic QA pair."""

    shots: int
    generation_id: str
    filtered: bool


@dataclass
class QaPair:
    id: str
    question: str
    answers: list[AnswerSpan]
    provenance: Provenance = Provenance.ORIGINAL
    gen_meta: GenMeta | None = None


@dataclass
class Passage:
    context: str
    qas: list[QaPair] = field(default_factory=list)
    title: str | None = None


@dataclass
class QaDataset:
    name: str
    passages: list[Passage] = field(default_factory=list)

    @property
    def qa_pair_count(self) -> int:
        return sum(len(p.qas) for p in self.passages)

    def iter_pairs(self):
        """Yield (passage, qa) in document order."""
        for passage in self.passages:
            for qa in passage.qas:
                yield passage, qa


def validate_dataset(dataset: QaDataset) -> None:
    """Check every dataset invariant, raising on the first violation.

    Raises SpanError for offset/text mismatches, IdCollision for duplicate
    ids, and ParseError for structural violations (empty fields, provenance
    inconsistent with gen_meta).
    """
    seen: set[str] = set()
    duplicates: set[str] = set()
    for p_idx, passage in enumerate(dataset.passages):
        locus = f"passages[{p_idx}]"
        if not passage.context:
            raise ParseError("passage context must be non-empty", locus=locus)
        for q_idx, qa in enumerate(passage.qas):
            locus = f"passages[{p_idx}].qas[{q_idx}]"
            if not qa.id:
                raise ParseError("qa id must be non-empty", locus=locus)
            if qa.id in seen:
                duplicates.add(qa.id)
            seen.add(qa.id)
            if not qa.question:
                raise ParseError("question must be non-empty", locus=locus)
            if not qa.answers:
                raise ParseError("answers must be non-empty", locus=locus)
            synthetic = qa.provenance == Provenance.SYNTHETIC
            if synthetic != (qa.gen_meta is not None):
                raise ParseError(
                    f"provenance {qa.provenance.value!r} inconsistent with "
                    f"gen_meta {'present' if qa.gen_meta else 'absent'}",
                    locus=locus,
                )
            for answer in qa.answers:
                answer.verify_against(passage.context, qa.id)
    if duplicates:
        raise IdCollision(duplicates)


def _parse_qa(obj, locus: str, path: str) -> QaPair:
    if not isinstance(obj, dict):
        raise ParseError("qa entry must be an object", path=path, locus=locus)
    try:
        qa_id = obj["id"]
        question = obj["question"]
        raw_answers = obj["answers"]
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}", path=path, locus=locus) from None
    if not isinstance(qa_id, str) or not isinstance(question, str):
        raise ParseError("id and question must be strings", path=path, locus=locus)
    if not isinstance(raw_answers, list):
        raise ParseError("answers must be a list", path=path, locus=locus)

    answers = []
    for a_idx, raw in enumerate(raw_answers):
        a_locus = f"{locus}.answers[{a_idx}]"
        if not isinstance(raw, dict) or "text" not in raw or "answer_start" not in raw:
            raise ParseError("answer needs text and answer_start", path=path, locus=a_locus)
        text, start = raw["text"], raw["answer_start"]
        if not isinstance(text, str) or not isinstance(start, int) or isinstance(start, bool):
            raise ParseError("answer text must be str, answer_start int", path=path, locus=a_locus)
        answers.append(AnswerSpan(text=text, answer_start=start))

    raw_prov = obj.get("provenance", Provenance.ORIGINAL.value)
    try:
        provenance = Provenance(raw_prov)
    except ValueError:
        raise ParseError(f"unknown provenance {raw_prov!r}", path=path, locus=locus) from None

    gen_meta = None
    raw_meta = obj.get("gen_meta")
    if raw_meta is not None:
        if not isinstance(raw_meta, dict):
            raise ParseError("gen_meta must be an object or null", path=path, locus=locus)
        try:
            gen_meta = GenMeta(
                shots=int(raw_meta["shots"]),
                generation_id=str(raw_meta["generation_id"]),
                filtered=bool(raw_meta["filtered"]),
            )
        except KeyError as exc:
            raise ParseError(
                f"gen_meta missing field {exc.args[0]!r}", path=path, locus=locus
            ) from None

    return QaPair(id=qa_id, question=question, answers=answers, provenance=provenance, gen_meta=gen_meta)


def load_dataset(path: str | Path, format: DatasetFormat = DatasetFormat.CANONICAL_JSON) -> QaDataset:
    """Load and fully validate a canonical dataset file.

    Raises ParseError on malformed content (with a field locus), SpanError
    when an answer offset does not reproduce the answer text, IdCollision on
    duplicate qa ids, and OSError when the file cannot be read.
    """
    if format is not DatasetFormat.CANONICAL_JSON:
        raise ValueError(f"unsupported format: {format}")
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"not valid JSON: {exc.msg}", path=str(path), locus=f"line {exc.lineno}") from None

    if not isinstance(raw, dict) or "name" not in raw or "passages" not in raw:
        raise ParseError("top level must be an object with name and passages", path=str(path))
    if not isinstance(raw["passages"], list):
        raise ParseError("passages must be a list", path=str(path), locus="passages")

    passages = []
    for p_idx, raw_passage in enumerate(raw["passages"]):
        locus = f"passages[{p_idx}]"
        if not isinstance(raw_passage, dict) or "context" not in raw_passage:
            raise ParseError("passage must be an object with a context", path=str(path), locus=locus)
        context = raw_passage["context"]
        if not isinstance(context, str):
            raise ParseError("context must be a string", path=str(path), locus=locus)
        title = raw_passage.get("title")
        if title is not None and not isinstance(title, str):
            raise ParseError("title must be a string or null", path=str(path), locus=locus)
        qas = [
            _parse_qa(raw_qa, f"{locus}.qas[{q_idx}]", str(path))
            for q_idx, raw_qa in enumerate(raw_passage.get("qas", []))
        ]
        passages.append(Passage(context=context, qas=qas, title=title))

    dataset = QaDataset(name=str(raw["name"]), passages=passages)
    validate_dataset(dataset)
    return dataset


def dataset_to_dict(dataset: QaDataset) -> dict:
    """Render a dataset as the canonical JSON structure (stable key order)."""
    return {
        "name": dataset.name,
        "passages": [
            {
                "title": passage.title,
                "context": passage.context,
                "qas": [
                    {
                        "id": qa.id,
                        "question": qa.question,
                        "answers": [
                            {"text": a.text, "answer_start": a.answer_start} for a in qa.answers
                        ],
                        "provenance": qa.provenance.value,
                        "gen_meta": (
                            {
                                "shots": qa.gen_meta.shots,
                                "generation_id": qa.gen_meta.generation_id,
                                "filtered": qa.gen_meta.filtered,
                            }
                            if qa.gen_meta is not None
                            else None
                        ),
                    }
                    for qa in passage.qas
                ],
            }
            for passage in dataset.passages
        ],
    }


def save_dataset(dataset: QaDataset, path: str | Path) -> None:
    """Write the canonical JSON file so that load_dataset reproduces the value.

    Raises OSError when the path cannot be written.
    """
    validate_dataset(dataset)
    payload = json.dumps(dataset_to_dict(dataset), ensure_ascii=False, indent=2) + "\n"
    Path(path).write_text(payload, encoding="utf-8")


def merge_datasets(original: QaDataset, synthetic: QaDataset) -> QaDataset:
    """Concatenate two datasets; their qa id sets must be disjoint."""
    original_ids = {qa.id for _, qa in original.iter_pairs()}
    overlap = original_ids & {qa.id for _, qa in synthetic.iter_pairs()}
    if overlap:
        raise IdCollision(overlap)
    merged = QaDataset(
        name=f"{original.name}+{synthetic.name}",
        passages=list(original.passages) + list(synthetic.passages),
    )
    validate_dataset(merged)
    return merged


def sample_exemplars(dataset: QaDataset, k: int, rng_seed: int | str) -> list[tuple[str, QaPair]]:
    """Draw k distinct few-shot exemplars, uniformly over original QA pairs.

    Returns (context, qa) tuples. Sampling is without replacement over QA
    pairs (two exemplars may share a passage), considers only
    provenance=original items, and is a pure function of (dataset, k, seed).
    """
    if k not in (1, 2):
        raise ValueError(f"k must be 1 or 2, got {k}")
    pool = [
        (passage.context, qa)
        for passage, qa in dataset.iter_pairs()
        if qa.provenance == Provenance.ORIGINAL
    ]
    if len(pool) < k:
        raise InsufficientData(
            f"need {k} original qa pairs to sample exemplars, dataset has {len(pool)}"
        )
    return random.Random(rng_seed).sample(pool, k)
