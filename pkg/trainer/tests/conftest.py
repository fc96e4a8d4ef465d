import json
from dataclasses import dataclass

import pytest
from transformers import BertConfig, BertForQuestionAnswering, BertTokenizerFast

AMOUNTS = ["540", "75", "90", "120", "15", "300", "45", "60", "25", "210"]
SERVICES = ["permit", "visa", "license", "passport", "badge", "card", "ticket", "form", "record", "pass"]
DAYS = ["ten", "five", "three", "seven", "two"]


def _context(i):
    service = SERVICES[i % len(SERVICES)]
    amount = AMOUNTS[i % len(AMOUNTS)]
    days = DAYS[i % len(DAYS)]
    return (
        f"the {service} fee is {amount} dollars in region {i} "
        f"and renewal takes {days} days to finish ."
    )


def _passage(i, qa_specs):
    context = _context(i)
    qas = []
    for j, (question, answer) in enumerate(qa_specs):
        qas.append(
            {
                "id": f"ex{i}-{j}",
                "question": question,
                "answers": [{"text": answer, "answer_start": context.index(answer)}],
                "provenance": "original",
                "gen_meta": None,
            }
        )
    return {"title": None, "context": context, "qas": qas}


def _dataset(name, first, count, qas_per_passage):
    passages = []
    for i in range(first, first + count):
        context = _context(i)
        amount = AMOUNTS[i % len(AMOUNTS)]
        days = DAYS[i % len(DAYS)]
        specs = [(f"what is the fee in region {i} ?", f"{amount} dollars")]
        if qas_per_passage > 1:
            specs.append((f"how long does renewal take in region {i} ?", f"{days} days"))
        passages.append(_passage(i, specs))
    return {"name": name, "passages": passages}


@dataclass
class ToyFiles:
    train: str
    eval: str
    model_dir: str
    eval_ids: list


@pytest.fixture(scope="session")
def toy_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("qa-trainer-toy")

    train = _dataset("toy-train", first=0, count=10, qas_per_passage=2)  # 20 pairs
    eval_set = _dataset("toy-eval", first=50, count=5, qas_per_passage=1)  # 5 pairs
    train_path = root / "train.json"
    eval_path = root / "eval.json"
    train_path.write_text(json.dumps(train, indent=2), encoding="utf-8")
    eval_path.write_text(json.dumps(eval_set, indent=2), encoding="utf-8")

    # Tiny local checkpoint: a word-level vocabulary covering the toy corpus
    # plus a randomly initialized two-layer model, so the smoke test never
    # downloads anything.
    words = set()
    for dataset in (train, eval_set):
        for passage in dataset["passages"]:
            words.update(passage["context"].split())
            for qa in passage["qas"]:
                words.update(qa["question"].split())
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + sorted(words)
    model_dir = root / "tiny-model"
    model_dir.mkdir()
    (model_dir / "vocab.txt").write_text("\n".join(vocab), encoding="utf-8")
    tokenizer = BertTokenizerFast(str(model_dir / "vocab.txt"), do_lower_case=True)
    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=128,
    )
    model = BertForQuestionAnswering(config)
    model.save_pretrained(model_dir)
    tokenizer.save_pretrained(model_dir)

    eval_ids = [qa["id"] for p in eval_set["passages"] for qa in p["qas"]]
    return ToyFiles(
        train=str(train_path),
        eval=str(eval_path),
        model_dir=str(model_dir),
        eval_ids=eval_ids,
    )
