"""Exact Match and token-level F1 scoring with SQuAD semantics.

Normalization applies four rules, in order: lowercase, remove punctuation,
drop article tokens, collapse whitespace. "Punctuation" is a closed set —
every character in the Unicode P* categories plus the five ASCII
symbol-category characters ``$ ^ ` | ~`` — so scores reproduce across
languages and locales. Note that ``+ < = >`` are kept.

Scores are reported on a 0-100 scale; per-pair token F1 lives in [0, 1].
Missing predictions score zero on both metrics rather than raising, which
keeps partial prediction files comparable.
"""

from __future__ import annotations

import json
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import QaDataset
from .errors import ParseError

_EXTRA_PUNCTUATION = frozenset("$^`|~")
_ARTICLES = frozenset({"a", "an", "the"})

Predictions = dict[str, str]


def is_punctuation(ch: str) -> bool:
    """True for the closed punctuation set: Unicode P* plus ``$ ^ ` | ~``."""
    return ch in _EXTRA_PUNCTUATION or unicodedata.category(ch).startswith("P")


def normalize_answer(s: str) -> str:
    """Lowercase, strip punctuation, drop article tokens, collapse whitespace."""
    stripped = "".join(ch for ch in s.lower() if not is_punctuation(ch))
    return " ".join(tok for tok in stripped.split() if tok not in _ARTICLES)


def exact_match(prediction: str, golds: list[str]) -> int:
    """1 iff the normalized prediction equals some normalized gold answer."""
    normalized = normalize_answer(prediction)
    return int(any(normalized == normalize_answer(g) for g in golds))


def _f1_against(prediction_tokens: list[str], gold: str) -> float:
    gold_tokens = normalize_answer(gold).split()
    if not prediction_tokens and not gold_tokens:
        return 1.0
    if not prediction_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(prediction_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(prediction_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def token_f1(prediction: str, golds: list[str]) -> float:
    """Max over golds of the token-multiset F1 between normalized strings."""
    prediction_tokens = normalize_answer(prediction).split()
    return max(_f1_against(prediction_tokens, g) for g in golds)


@dataclass
class EvalReport:
    exact_match: float
    f1: float
    n_evaluated: int
    missing_predictions: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "exact_match": self.exact_match,
            "f1": self.f1,
            "n_evaluated": self.n_evaluated,
            "missing_predictions": list(self.missing_predictions),
        }

    def to_table(self) -> str:
        rows = [
            ("Exact Match", f"{self.exact_match:.2f}"),
            ("F1", f"{self.f1:.2f}"),
            ("Evaluated", str(self.n_evaluated)),
            ("Missing", str(len(self.missing_predictions))),
        ]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def evaluate(golds: QaDataset, predictions: Predictions) -> EvalReport:
    """Score predictions over every gold pair; missing predictions score 0."""
    em_total = 0.0
    f1_total = 0.0
    n = 0
    missing = []
    for _, qa in golds.iter_pairs():
        n += 1
        if qa.id not in predictions:
            missing.append(qa.id)
            continue
        gold_texts = [a.text for a in qa.answers]
        em_total += exact_match(predictions[qa.id], gold_texts)
        f1_total += token_f1(predictions[qa.id], gold_texts)
    if n == 0:
        return EvalReport(exact_match=0.0, f1=0.0, n_evaluated=0, missing_predictions=[])
    return EvalReport(
        exact_match=100.0 * em_total / n,
        f1=100.0 * f1_total / n,
        n_evaluated=n,
        missing_predictions=missing,
    )


def relative_improvement(base: float, treated: float) -> float:
    """Percentage change of treated over base: 100 * (treated - base) / base."""
    if base == 0:
        raise ZeroDivisionError("relative improvement is undefined for a zero base score")
    return 100.0 * (treated - base) / base


def compare_reports(base: EvalReport, treated: EvalReport) -> dict[str, float]:
    """Relative improvement of treated over base, per metric."""
    return {
        "exact_match": relative_improvement(base.exact_match, treated.exact_match),
        "f1": relative_improvement(base.f1, treated.f1),
    }


def load_predictions(path: str | Path) -> Predictions:
    """Read a predictions file: a JSON object mapping qa_id -> answer string."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"not valid JSON: {exc.msg}", path=str(path), locus=f"line {exc.lineno}") from None
    if not isinstance(raw, dict):
        raise ParseError("predictions file must be a JSON object", path=str(path))
    for key, value in raw.items():
        if not isinstance(value, str):
            raise ParseError("prediction values must be strings", path=str(path), locus=repr(key))
    return dict(raw)


def save_predictions(predictions: Predictions, path: str | Path) -> None:
    payload = json.dumps(predictions, ensure_ascii=False, indent=2) + "\n"
    Path(path).write_text(payload, encoding="utf-8")
