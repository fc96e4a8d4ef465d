"""qa-trainer command line: train-and-predict."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .train import TrainerConfig, train_and_predict


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qa-trainer",
        description="Fine-tune an extractive QA transformer on canonical dataset files",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser(
        "train-and-predict",
        help="fine-tune on --train, predict on --eval, write predictions JSON to --out",
    )
    p.add_argument("--train", required=True, help="canonical training dataset JSON")
    p.add_argument("--eval", dest="eval_path", required=True, help="canonical eval dataset JSON")
    p.add_argument("--out", required=True, help="predictions JSON output path")
    p.add_argument("--model", default="roberta-base", help="model id or local checkpoint dir")
    p.add_argument("--lr", type=float, default=3e-5)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--device", default="cpu")
    p.add_argument("--max-seq-len", dest="max_seq_len", type=int, default=384)
    p.add_argument("--doc-stride", dest="doc_stride", type=int, default=128)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    for path_arg in (args.train, args.eval_path):
        if not Path(path_arg).exists():
            print(f"error: dataset not found: {path_arg}", file=sys.stderr)
            return 1
    config = TrainerConfig(
        base_model=args.model,
        learning_rate=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        max_sequence_length=args.max_seq_len,
        doc_stride=args.doc_stride,
        seed=args.seed,
        device=args.device,
    )
    try:
        summary = train_and_predict(args.train, args.eval_path, config, args.out)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        "run summary: model={model} lr={lr:g} batch={batch} epochs={epochs} seed={seed}".format(
            **summary
        )
    )
    print(
        "final loss {final_loss:.4f} | wall time {wall_time_s:.1f}s | "
        "{train_pairs} train pairs ({train_windows} windows) | "
        "{eval_pairs} eval predictions -> {predictions}".format(**summary)
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
