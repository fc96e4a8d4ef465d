"""Rendering of the three prompt families: context generation, QA generation,
and re-answering for the round-trip check.

Templates are plain data (loadable from a JSON file keyed by prompt kind) and
rendering is pure string substitution, so a prompt is a byte-reproducible
function of its inputs. Values are spliced with str.replace rather than
str.format so exemplar text containing braces never breaks rendering.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from pathlib import Path

from .dataset import QaPair
from .errors import TemplateError


class PromptKind(str, enum.Enum):
    CONTEXT_GEN = "context_gen"
    QA_GEN = "qa_gen"
    RE_ANSWER = "reanswer"


@dataclass(frozen=True)
class PromptTemplate:
    """Skeleton strings for one prompt kind.

    user_skeleton may reference {exemplars}, {context} and {question};
    exemplar_block_skeleton may reference {ex_context}, {ex_question} and
    {ex_answer}. Which placeholders are actually filled depends on the kind.
    """

    name: str
    system_text: str
    user_skeleton: str
    exemplar_block_skeleton: str = ""


@dataclass(frozen=True)
class PromptSpec:
    """A fully rendered prompt plus the exemplar ids it embeds."""

    kind: PromptKind
    rendered_system: str
    rendered_user: str
    exemplar_ids: tuple[str, ...]
    shots: int


DEFAULT_TEMPLATES: dict[PromptKind, PromptTemplate] = {
    PromptKind.CONTEXT_GEN: PromptTemplate(
        name="default-context-gen",
        system_text=(
            "You write realistic passages for reading-comprehension training data. "
            "Respond with the passage text only, no preamble."
        ),
        user_skeleton=(
            "Here are example passages:\n\n{exemplars}"
            "Write one new paragraph-length passage in the same style and on a "
            "similar topic as the examples. Respond with the passage text only."
        ),
        exemplar_block_skeleton="Passage:\n{ex_context}\n\n",
    ),
    PromptKind.QA_GEN: PromptTemplate(
        name="default-qa-gen",
        system_text=(
            "You write question-answer pairs for extractive reading comprehension. "
            "The answer must be copied word-for-word from the passage."
        ),
        user_skeleton=(
            "Here are example passages with a question and its answer:\n\n{exemplars}"
            "Now read this passage:\n\nPassage:\n{context}\n\n"
            "Write exactly one new question about this passage together with its "
            "answer. The answer must appear word-for-word in the passage. "
            "Use exactly this layout:\nQuestion: <question>\nAnswer: <answer>"
        ),
        exemplar_block_skeleton=(
            "Passage:\n{ex_context}\nQuestion: {ex_question}\nAnswer: {ex_answer}\n\n"
        ),
    ),
    PromptKind.RE_ANSWER: PromptTemplate(
        name="default-reanswer",
        system_text=(
            "You answer questions using only the given passage. Reply with the "
            "shortest exact span of the passage that answers the question, and "
            "nothing else."
        ),
        user_skeleton=(
            "Passage:\n{context}\n\nQuestion: {question}\n\n"
            "Reply with the exact answer span from the passage only."
        ),
    ),
}

_PLACEHOLDER = re.compile(r"\{(exemplars|context|question|ex_context|ex_question|ex_answer)\}")


def _render(skeleton: str, fills: dict[str, str], template_name: str) -> str:
    referenced = set(_PLACEHOLDER.findall(skeleton))
    missing = referenced - fills.keys()
    if missing:
        raise TemplateError(
            f"template {template_name!r} references placeholders with no fill: "
            + ", ".join(sorted(missing))
        )
    out = skeleton
    for key in sorted(referenced):
        out = out.replace("{" + key + "}", fills[key])
    return out


def _exemplar_section(
    template: PromptTemplate, blocks: list[dict[str, str]]
) -> str:
    return "".join(_render(template.exemplar_block_skeleton, b, template.name) for b in blocks)


def build_context_prompt(
    exemplars: list[str],
    template: PromptTemplate,
    shots: int,
    exemplar_ids: list[str] | None = None,
) -> PromptSpec:
    """Render a context-generation prompt from 1 or 2 exemplar contexts.

    exemplar_ids, when given, records which dataset items the exemplars came
    from; positional ids are synthesized otherwise.
    """
    if shots not in (1, 2):
        raise TemplateError(f"shots must be 1 or 2, got {shots}")
    if len(exemplars) != shots:
        raise TemplateError(f"expected {shots} exemplar contexts, got {len(exemplars)}")
    if any(not ex.strip() for ex in exemplars):
        raise TemplateError("exemplar contexts must be non-empty")
    ids = tuple(exemplar_ids) if exemplar_ids is not None else tuple(
        f"exemplar-{i}" for i in range(shots)
    )
    if len(ids) != shots:
        raise TemplateError(f"expected {shots} exemplar ids, got {len(ids)}")
    section = _exemplar_section(template, [{"ex_context": ex} for ex in exemplars])
    return PromptSpec(
        kind=PromptKind.CONTEXT_GEN,
        rendered_system=template.system_text,
        rendered_user=_render(template.user_skeleton, {"exemplars": section}, template.name),
        exemplar_ids=ids,
        shots=shots,
    )


def build_qa_prompt(
    exemplars: list[tuple[str, QaPair]],
    synthetic_context: str,
    template: PromptTemplate,
    shots: int,
) -> PromptSpec:
    """Render a QA-generation prompt: exemplar triples, then the new context."""
    if shots not in (1, 2):
        raise TemplateError(f"shots must be 1 or 2, got {shots}")
    if len(exemplars) != shots:
        raise TemplateError(f"expected {shots} exemplars, got {len(exemplars)}")
    if not synthetic_context.strip():
        raise TemplateError("synthetic context must be non-empty")
    blocks = []
    for context, qa in exemplars:
        blocks.append(
            {
                "ex_context": context,
                "ex_question": qa.question,
                "ex_answer": qa.answers[0].text,
            }
        )
    section = _exemplar_section(template, blocks)
    rendered_user = _render(
        template.user_skeleton,
        {"exemplars": section, "context": synthetic_context},
        template.name,
    )
    return PromptSpec(
        kind=PromptKind.QA_GEN,
        rendered_system=template.system_text,
        rendered_user=rendered_user,
        exemplar_ids=tuple(qa.id for _, qa in exemplars),
        shots=shots,
    )


def build_reanswer_prompt(
    synthetic_context: str, question: str, template: PromptTemplate
) -> PromptSpec:
    """Render the round-trip prompt: context and question, never the answer."""
    if not synthetic_context.strip():
        raise TemplateError("context must be non-empty")
    if not question.strip():
        raise TemplateError("question must be non-empty")
    rendered_user = _render(
        template.user_skeleton,
        {"context": synthetic_context, "question": question},
        template.name,
    )
    return PromptSpec(
        kind=PromptKind.RE_ANSWER,
        rendered_system=template.system_text,
        rendered_user=rendered_user,
        exemplar_ids=(),
        shots=0,
    )


TemplateSet = dict[PromptKind, PromptTemplate]


def load_templates(path: str | Path) -> TemplateSet:
    """Load a template set from a JSON file keyed by prompt kind.

    Kinds omitted from the file fall back to the built-in defaults. Each entry
    is an object with system_text, user_skeleton and (optionally) name and
    exemplar_block_skeleton.
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise TemplateError("template file must be a JSON object keyed by prompt kind")
    templates = dict(DEFAULT_TEMPLATES)
    for key, value in raw.items():
        try:
            kind = PromptKind(key)
        except ValueError:
            raise TemplateError(f"unknown prompt kind {key!r} in template file") from None
        if not isinstance(value, dict) or "user_skeleton" not in value:
            raise TemplateError(f"template for {key!r} needs at least a user_skeleton")
        templates[kind] = PromptTemplate(
            name=value.get("name", f"custom-{key}"),
            system_text=value.get("system_text", DEFAULT_TEMPLATES[kind].system_text),
            user_skeleton=value["user_skeleton"],
            exemplar_block_skeleton=value.get(
                "exemplar_block_skeleton", DEFAULT_TEMPLATES[kind].exemplar_block_skeleton
            ),
        )
    return templates


def templates_fingerprint(templates: TemplateSet) -> str:
    """Stable hash of a template set, recorded in run manifests."""
    import hashlib

    canonical = json.dumps(
        {
            kind.value: {
                "name": t.name,
                "system_text": t.system_text,
                "user_skeleton": t.user_skeleton,
                "exemplar_block_skeleton": t.exemplar_block_skeleton,
            }
            for kind, t in sorted(templates.items(), key=lambda kv: kv[0].value)
        },
        ensure_ascii=False,
        sort_keys=True,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
