"""Fine-tune a span-prediction head and emit a predictions file."""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch.utils.data import DataLoader, TensorDataset
from transformers import AutoModelForQuestionAnswering, AutoTokenizer

from .data import FeatureBatch, QaExample, build_features, read_canonical


@dataclass
class TrainerConfig:
    base_model: str = "roberta-base"
    learning_rate: float = 3e-5
    batch_size: int = 16
    epochs: int = 5
    max_sequence_length: int = 384
    doc_stride: int = 128
    seed: int = 42
    device: str = "cpu"
    max_answer_tokens: int = 30

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "epochs", "max_sequence_length", "doc_stride"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def set_seed(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def _feature_tensors(features: FeatureBatch, with_targets: bool) -> TensorDataset:
    columns = [torch.tensor(v, dtype=torch.long) for v in features.encodings.values()]
    columns.append(torch.arange(len(features), dtype=torch.long))  # window index
    if with_targets:
        columns.append(torch.tensor(features.start_positions, dtype=torch.long))
        columns.append(torch.tensor(features.end_positions, dtype=torch.long))
    return TensorDataset(*columns)


def _model_inputs(features: FeatureBatch, batch, device):
    keys = list(features.encodings.keys())
    return {key: batch[i].to(device) for i, key in enumerate(keys)}


def _train(model, features: FeatureBatch, config: TrainerConfig, device) -> float:
    dataset = _feature_tensors(features, with_targets=True)
    generator = torch.Generator().manual_seed(config.seed)
    loader = DataLoader(dataset, batch_size=config.batch_size, shuffle=True, generator=generator)
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)
    model.train()
    last_epoch_losses: list[float] = []
    n_inputs = len(features.encodings)
    for epoch in range(config.epochs):
        last_epoch_losses = []
        for batch in loader:
            inputs = _model_inputs(features, batch, device)
            outputs = model(
                **inputs,
                start_positions=batch[n_inputs + 1].to(device),
                end_positions=batch[n_inputs + 2].to(device),
            )
            optimizer.zero_grad()
            outputs.loss.backward()
            optimizer.step()
            last_epoch_losses.append(outputs.loss.item())
    return float(sum(last_epoch_losses) / max(len(last_epoch_losses), 1))


def _decode_best_span(
    start_logits: np.ndarray,
    end_logits: np.ndarray,
    offsets: list[tuple[int, int] | None],
    context: str,
    max_answer_tokens: int,
    n_best: int = 20,
) -> tuple[float, str]:
    """Highest-scoring valid (start, end) pair within the context region."""
    start_candidates = np.argsort(start_logits)[::-1][:n_best]
    end_candidates = np.argsort(end_logits)[::-1][:n_best]
    best_score, best_text = -np.inf, ""
    for s in start_candidates:
        if offsets[s] is None:
            continue
        for e in end_candidates:
            if offsets[e] is None or e < s or e - s + 1 > max_answer_tokens:
                continue
            score = float(start_logits[s] + end_logits[e])
            if score > best_score:
                best_score = score
                best_text = context[offsets[s][0] : offsets[e][1]]
    return best_score, best_text


def _predict(
    model,
    features: FeatureBatch,
    examples: list[QaExample],
    config: TrainerConfig,
    device,
) -> dict[str, str]:
    dataset = _feature_tensors(features, with_targets=False)
    loader = DataLoader(dataset, batch_size=config.batch_size, shuffle=False)
    n_inputs = len(features.encodings)
    model.eval()
    best: dict[int, tuple[float, str]] = {}
    with torch.no_grad():
        for batch in loader:
            inputs = _model_inputs(features, batch, device)
            outputs = model(**inputs)
            start_logits = outputs.start_logits.cpu().numpy()
            end_logits = outputs.end_logits.cpu().numpy()
            for row, window in enumerate(batch[n_inputs].tolist()):
                ex_idx = features.example_index[window]
                score, text = _decode_best_span(
                    start_logits[row],
                    end_logits[row],
                    features.offset_mapping[window],
                    examples[ex_idx].context,
                    config.max_answer_tokens,
                )
                if ex_idx not in best or score > best[ex_idx][0]:
                    best[ex_idx] = (score, text)
    # Bijective coverage: every eval qa_id gets a prediction, even if empty.
    return {ex.qa_id: best.get(idx, (0.0, ""))[1] for idx, ex in enumerate(examples)}


def train_and_predict(
    train_path: str | Path,
    eval_path: str | Path,
    config: TrainerConfig,
    out_path: str | Path,
) -> dict:
    """Fine-tune on train_path, predict on eval_path, write predictions JSON.

    Returns a summary dict (also suitable for printing) with the echoed
    hyperparameters, final training loss, and wall time.
    """
    started = time.perf_counter()
    set_seed(config.seed)
    device = torch.device(config.device)

    train_examples = read_canonical(train_path)
    eval_examples = read_canonical(eval_path)
    if not train_examples:
        raise ValueError(f"{train_path} contains no QA pairs to train on")
    if not eval_examples:
        raise ValueError(f"{eval_path} contains no QA pairs to evaluate")

    tokenizer = AutoTokenizer.from_pretrained(config.base_model)
    model = AutoModelForQuestionAnswering.from_pretrained(config.base_model).to(device)

    train_features = build_features(
        train_examples, tokenizer, config.max_sequence_length, config.doc_stride, with_targets=True
    )
    eval_features = build_features(
        eval_examples, tokenizer, config.max_sequence_length, config.doc_stride, with_targets=False
    )

    final_loss = _train(model, train_features, config, device)
    predictions = _predict(model, eval_features, eval_examples, config, device)

    payload = json.dumps(predictions, ensure_ascii=False, indent=2) + "\n"
    Path(out_path).write_text(payload, encoding="utf-8")

    return {
        "model": config.base_model,
        "lr": config.learning_rate,
        "batch": config.batch_size,
        "epochs": config.epochs,
        "seed": config.seed,
        "device": str(device),
        "train_pairs": len(train_examples),
        "train_windows": len(train_features),
        "eval_pairs": len(eval_examples),
        "final_loss": final_loss,
        "wall_time_s": round(time.perf_counter() - started, 3),
        "predictions": str(out_path),
    }
