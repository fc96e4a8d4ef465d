"""Command-line entry point: augment, eval, cost, and inspect subcommands.

Exit codes are a stable scripting contract: 0 success, 1 fatal error,
2 partial success (the run fell short of its stage-1 target but usable
output was written). Every augment run writes a manifest that, together
with a mock script, reproduces the run byte-for-byte.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path

from . import __version__
from .dataset import Provenance, load_dataset, merge_datasets, save_dataset
from .errors import SynthQaError
from .llm import (
    LlmClient,
    LlmConfig,
    OpenAiHttpProvider,
    PriceTable,
    accumulate_cost,
    exchange_log_entry,
    load_exchange_log,
    load_mock_script,
)
from .metrics import EvalReport, evaluate, load_predictions, relative_improvement
from .pipeline import GenerationConfig, run_augmentation
from .prompts import DEFAULT_TEMPLATES, load_templates, templates_fingerprint
from .quality import DEFAULT_F1_THRESHOLD, MatchRule, load_decisions, write_decisions

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2

_LOCK_NAME = ".synthqa.lock"


def _err(message: str) -> None:
    print(f"error: {message}", file=sys.stderr)


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _sidecar(out: Path, tag: str) -> Path:
    stem = out.name[: -len(out.suffix)] if out.suffix else out.name
    return out.with_name(f"{stem}.{tag}.json")


def _write_json_atomic(payload: dict, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, path)


class _OutputLock:
    """One CLI instance per output directory."""

    def __init__(self, directory: Path):
        self.path = directory / _LOCK_NAME

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise SynthQaError(
                f"lock file {self.path} exists; another run owns this output "
                "directory (remove the file if that run is dead)"
            ) from None
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        return self

    def __exit__(self, *exc_info):
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass
        return False


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise SynthQaError("config file must be a JSON object")
    return raw


def _pick(flag_value, section: dict, key: str, default):
    """Layering: explicit flag > config-file entry > built-in default."""
    if flag_value is not None:
        return flag_value
    if key in section:
        return section[key]
    return default


def _build_generation_config(args, cfg: dict) -> GenerationConfig:
    section = cfg.get("generation", {})
    filter_flag = args.filter
    return GenerationConfig(
        shots=int(_pick(args.shots, section, "shots", 1)),
        multiplier=float(_pick(args.multiplier, section, "multiplier", 1.0)),
        qa_per_context=int(_pick(args.qa_per_context, section, "qa_per_context", 1)),
        rng_seed=int(_pick(args.seed, section, "rng_seed", 0)),
        parse_retry_limit=int(_pick(args.parse_retry_limit, section, "parse_retry_limit", 2)),
        apply_roundtrip_filter=bool(_pick(filter_flag, section, "apply_roundtrip_filter", True)),
    )


def _build_llm_config(args, cfg: dict) -> LlmConfig:
    section = cfg.get("llm", {})
    return LlmConfig(
        model_name=str(_pick(args.model, section, "model_name", "gpt-4")),
        temperature=float(_pick(args.temperature, section, "temperature", 0.7)),
        reanswer_temperature=float(
            _pick(args.reanswer_temperature, section, "reanswer_temperature", 0.0)
        ),
        max_output_tokens=int(_pick(args.max_output_tokens, section, "max_output_tokens", 512)),
        request_timeout=float(_pick(args.timeout, section, "request_timeout", 60.0)),
        max_retries=int(_pick(args.max_retries, section, "max_retries", 3)),
        max_concurrent_requests=int(
            _pick(args.max_concurrent, section, "max_concurrent_requests", 4)
        ),
    )


def _build_prices(args, cfg: dict) -> PriceTable:
    if args.prices:
        return PriceTable.from_file(args.prices)
    section = cfg.get("prices")
    if section:
        return PriceTable.from_rates(
            section["prompt_per_1k"], section["completion_per_1k"], section.get("currency", "USD")
        )
    return PriceTable.zero()


def cmd_augment(args) -> int:
    train_path = Path(args.train)
    if not train_path.exists():
        _err(f"training dataset not found: {train_path}")
        return EXIT_FATAL
    cfg = _load_config_file(args.config)
    gen_config = _build_generation_config(args, cfg)
    llm_config = _build_llm_config(args, cfg)
    prices = _build_prices(args, cfg)

    templates_path = args.templates or cfg.get("templates")
    templates = load_templates(templates_path) if templates_path else DEFAULT_TEMPLATES

    if args.provider == "mock":
        if not args.script:
            _err("--provider mock requires --script")
            return EXIT_FATAL
        provider = load_mock_script(args.script)
    else:
        provider = OpenAiHttpProvider(base_url=args.base_url, api_key_env=args.api_key_env)

    rule = MatchRule.NORMALIZED_EXACT if args.filter_rule == "exact" else MatchRule.TOKEN_F1_THRESHOLD

    train = load_dataset(train_path)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    started_at = _utc_now()
    with _OutputLock(out.parent if str(out.parent) else Path(".")):
        client = LlmClient(provider, llm_config, prices)
        decisions = []
        exchanges = []
        synthetic, stats = run_augmentation(
            train,
            gen_config,
            client,
            templates,
            match_rule=rule,
            match_threshold=args.filter_threshold,
            decisions_sink=decisions,
            exchange_sink=exchanges,
        )
        save_dataset(synthetic, out)
        stats_path = _sidecar(out, "stats")
        _write_json_atomic(stats.to_dict(), stats_path)
        if args.merge:
            merged = merge_datasets(train, synthetic)
            save_dataset(merged, Path(args.merge))
        if args.decisions:
            write_decisions(decisions, args.decisions)
        if args.log_exchanges:
            lines = [json.dumps(exchange_log_entry(e), ensure_ascii=False) for e in exchanges]
            Path(args.log_exchanges).write_text(
                "\n".join(lines) + ("\n" if lines else ""), encoding="utf-8"
            )

        manifest = {
            "command": "augment",
            "version": __version__,
            "started_at": started_at,
            "finished_at": _utc_now(),
            "rng_seed": gen_config.rng_seed,
            "provider": args.provider,
            "paths": {
                "train": str(train_path),
                "out": str(out),
                "merge": args.merge,
                "script": args.script,
                "templates": templates_path,
                "decisions": args.decisions,
                "exchange_log": args.log_exchanges,
            },
            "generation_config": asdict(gen_config),
            "llm_config": asdict(llm_config),
            "prices": {
                "prompt_rate_micro": prices.prompt_rate_micro,
                "completion_rate_micro": prices.completion_rate_micro,
                "currency": prices.currency_code,
            },
            "filter_rule": rule.value,
            "filter_threshold": args.filter_threshold,
            "template_fingerprint": templates_fingerprint(templates),
            "stats": stats.to_dict(),
        }
        _write_json_atomic(manifest, _sidecar(out, "manifest"))

    if args.json:
        print(json.dumps(stats.to_dict(), indent=2))
    else:
        kept = stats.qa_kept_after_filter
        print(f"wrote {kept} synthetic pairs to {out}")
        print(f"stats: {stats_path}")
        if stats.shortfall:
            print(
                f"warning: stage 1 produced {stats.contexts_generated} of "
                f"{stats.contexts_requested} target contexts (partial run)",
                file=sys.stderr,
            )
    return EXIT_PARTIAL if stats.shortfall else EXIT_OK


def cmd_eval(args) -> int:
    gold = load_dataset(args.gold)
    predictions = load_predictions(args.predictions)
    report = evaluate(gold, predictions)
    if args.out:
        _write_json_atomic(report.to_dict(), Path(args.out))
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(report.to_table())
        if report.missing_predictions:
            print("missing prediction ids: " + ", ".join(report.missing_predictions))
    if args.baseline_report:
        raw = json.loads(Path(args.baseline_report).read_text(encoding="utf-8"))
        base = EvalReport(
            exact_match=float(raw["exact_match"]),
            f1=float(raw["f1"]),
            n_evaluated=int(raw.get("n_evaluated", 0)),
            missing_predictions=list(raw.get("missing_predictions", [])),
        )
        for label, base_score, new_score in (
            ("Exact Match", base.exact_match, report.exact_match),
            ("F1", base.f1, report.f1),
        ):
            try:
                delta = relative_improvement(base_score, new_score)
                print(f"{label} relative improvement over baseline: {delta:+.2f}%")
            except ZeroDivisionError:
                print(f"{label} relative improvement over baseline: undefined (baseline is 0)")
    return EXIT_OK


def _print_cost(cost: dict, kept: int | None, per_pair: bool, as_json: bool) -> None:
    per_pair_value = None
    if per_pair:
        if kept:
            per_pair_value = str(
                (Decimal(cost["total_cost"]) / kept).quantize(Decimal("1e-9"))
            )
        else:
            per_pair_value = "undefined"
    if as_json:
        payload = dict(cost)
        if per_pair:
            payload["cost_per_kept_pair"] = per_pair_value
        print(json.dumps(payload, indent=2))
        return
    print(f"Prompt tokens      {cost['total_prompt_tokens']}")
    print(f"Completion tokens  {cost['total_completion_tokens']}")
    print(f"Total cost         {cost['total_cost']} {cost['currency']}")
    for stage in sorted(cost.get("per_stage", {})):
        entry = cost["per_stage"][stage]
        print(
            f"  {stage:<12} {entry['prompt_tokens']}+{entry['completion_tokens']} tok, "
            f"{entry['cost']} {cost['currency']}"
        )
    if per_pair:
        print(f"Cost per kept pair {per_pair_value}")


def cmd_cost(args) -> int:
    if not args.manifest and not args.exchanges:
        _err("cost needs --manifest or --exchanges")
        return EXIT_FATAL
    if args.manifest:
        manifest_path = Path(args.manifest)
        if not manifest_path.exists():
            _err(f"manifest not found: {manifest_path}")
            return EXIT_FATAL
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        cost = manifest["stats"]["cost"]
        kept = int(manifest["stats"]["qa_kept_after_filter"])
    else:
        exchanges_path = Path(args.exchanges)
        if not exchanges_path.exists():
            _err(f"exchange log not found: {exchanges_path}")
            return EXIT_FATAL
        if not args.prices:
            _err("--exchanges mode needs --prices")
            return EXIT_FATAL
        report = accumulate_cost(load_exchange_log(exchanges_path), PriceTable.from_file(args.prices))
        cost = report.to_dict()
        kept = args.kept
    _print_cost(cost, kept, args.per_pair, args.json)
    return EXIT_OK


def cmd_inspect(args) -> int:
    dataset = load_dataset(args.data)
    decisions_by_id = {}
    if args.decisions:
        decisions_by_id = {d.qa_id: d for d in load_decisions(args.decisions)}
    synthetic = [
        (passage, qa)
        for passage, qa in dataset.iter_pairs()
        if qa.provenance == Provenance.SYNTHETIC
    ]
    if not synthetic:
        print("dataset contains no synthetic pairs")
        return EXIT_OK
    rng = random.Random(args.seed)
    sample = rng.sample(synthetic, min(args.n, len(synthetic)))
    for passage, qa in sample:
        snippet = passage.context[:160] + ("..." if len(passage.context) > 160 else "")
        print(f"id        {qa.id}")
        print(f"context   {snippet}")
        print(f"question  {qa.question}")
        print(f"answer    {qa.answers[0].text!r} @ {qa.answers[0].answer_start}")
        if qa.gen_meta:
            print(f"gen_meta  shots={qa.gen_meta.shots} filtered={qa.gen_meta.filtered}")
        decision = decisions_by_id.get(qa.id)
        if decision:
            print(f"decision  matched={decision.matched} reanswer={decision.reanswer!r}")
        print()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synthqa",
        description="Synthetic data augmentation and evaluation for extractive QA",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_augment = sub.add_parser("augment", help="generate a synthetic dataset from a training set")
    p_augment.add_argument("--train", required=True, help="canonical training dataset JSON")
    p_augment.add_argument("--out", required=True, help="output path for the synthetic dataset")
    p_augment.add_argument("--merge", help="also write original+synthetic merged dataset here")
    p_augment.add_argument("--shots", type=int, choices=(1, 2), default=None)
    p_augment.add_argument("--multiplier", type=float, default=None,
                           help="target synthetic size as a multiple of the training set (1-10)")
    p_augment.add_argument("--qa-per-context", dest="qa_per_context", type=int, default=None)
    p_augment.add_argument("--seed", type=int, default=None)
    p_augment.add_argument("--parse-retry-limit", dest="parse_retry_limit", type=int, default=None)
    p_augment.add_argument("--filter", action=argparse.BooleanOptionalAction, default=None,
                           help="apply round-trip filtering (default on)")
    p_augment.add_argument("--filter-rule", choices=("exact", "f1"), default="exact")
    p_augment.add_argument("--filter-threshold", type=float, default=DEFAULT_F1_THRESHOLD)
    p_augment.add_argument("--provider", choices=("openai", "mock"), default="openai")
    p_augment.add_argument("--script", help="mock script JSON (required with --provider mock)")
    p_augment.add_argument("--base-url", dest="base_url", default="https://api.openai.com/v1")
    p_augment.add_argument("--api-key-env", dest="api_key_env", default="OPENAI_API_KEY")
    p_augment.add_argument("--model", default=None)
    p_augment.add_argument("--temperature", type=float, default=None)
    p_augment.add_argument("--reanswer-temperature", dest="reanswer_temperature",
                           type=float, default=None)
    p_augment.add_argument("--max-output-tokens", dest="max_output_tokens", type=int, default=None)
    p_augment.add_argument("--timeout", type=float, default=None)
    p_augment.add_argument("--max-retries", dest="max_retries", type=int, default=None)
    p_augment.add_argument("--max-concurrent", dest="max_concurrent", type=int, default=None)
    p_augment.add_argument("--templates", help="template JSON overriding the built-in prompts")
    p_augment.add_argument("--prices", help="price table JSON for cost accounting")
    p_augment.add_argument("--config", help="JSON config file; flags override it")
    p_augment.add_argument("--decisions", help="write filter decisions JSONL here")
    p_augment.add_argument("--log-exchanges", dest="log_exchanges",
                           help="write per-request usage JSONL here")
    p_augment.add_argument("--json", action="store_true", help="print stats as JSON")
    p_augment.set_defaults(func=cmd_augment)

    p_eval = sub.add_parser("eval", help="score a predictions file against a gold dataset")
    p_eval.add_argument("--gold", required=True)
    p_eval.add_argument("--predictions", required=True)
    p_eval.add_argument("--baseline-report", dest="baseline_report",
                        help="earlier eval report JSON to compute relative improvement against")
    p_eval.add_argument("--out", help="also write the report JSON here")
    p_eval.add_argument("--json", action="store_true")
    p_eval.set_defaults(func=cmd_eval)

    p_cost = sub.add_parser("cost", help="report token usage and dollar cost")
    p_cost.add_argument("--manifest", help="augment run manifest JSON")
    p_cost.add_argument("--exchanges", help="exchange log JSONL (needs --prices)")
    p_cost.add_argument("--prices")
    p_cost.add_argument("--kept", type=int, default=None,
                        help="kept-pair count for --per-pair in --exchanges mode")
    p_cost.add_argument("--per-pair", dest="per_pair", action="store_true",
                        help="also print cost divided by kept QA pairs")
    p_cost.add_argument("--json", action="store_true")
    p_cost.set_defaults(func=cmd_cost)

    p_inspect = sub.add_parser("inspect", help="print a random sample of synthetic pairs")
    p_inspect.add_argument("--data", required=True)
    p_inspect.add_argument("--decisions", help="filter decisions JSONL from the run")
    p_inspect.add_argument("-n", type=int, default=5)
    p_inspect.add_argument("--seed", type=int, default=0)
    p_inspect.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; 2 means "partial" in our contract.
        return EXIT_OK if exc.code == 0 else EXIT_FATAL
    try:
        return args.func(args)
    except (SynthQaError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        _err(str(exc))
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
