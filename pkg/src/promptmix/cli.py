"""Command-line entry points.

Subcommands: ``augment`` (full two-step run), ``relabel`` (re-run step 2 on an
existing generations file, e.g. with a different relabeling model),
``classify`` (the retrieval+LLM baseline over a test file), ``stats``
(relabel percentages), and ``emit`` (rebuild the final dataset from logs).

Exit codes: 0 success, 1 error, 2 completed with a yield shortfall.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

from . import pipeline as pl
from .backends import BackendError
from .classify import evaluate_accuracy
from .config import (
    ConfigError,
    PipelineConfig,
    build_backends,
    config_hash,
    load_config,
    relabel_params,
)
from .data import (
    DatasetParseError,
    DatasetValidationError,
    compute_relabel_stats,
    emit_dataset,
    load_dataset,
    load_examples,
    validate_labels,
)
from .mixgen import GenerationRecord, build_generation_prompt, select_assignment
from .relabel import RelabelRecord, build_index, relabel_all
from .rng import derive_rng

_ERRORS = (
    ConfigError,
    DatasetParseError,
    DatasetValidationError,
    BackendError,
    pl.PipelineError,
    OSError,
    ValueError,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptmix",
        description="Generate and relabel borderline training examples for text classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    augment = sub.add_parser("augment", help="run generation + relabeling end to end")
    augment.add_argument("--config", required=True, help="YAML run config")
    augment.add_argument("--seed", type=int, help="override run.seed")
    augment.add_argument("--output", help="override run.output_dir")
    augment.add_argument("--dry-run", action="store_true", help="print the first prompt and call plan, no requests")
    augment.add_argument("--no-mixup", action="store_true", help="single-class generation instruction")
    augment.add_argument("--no-relabel", action="store_true", help="skip step 2; labels stay the intended classes")
    augment.add_argument("--zero-shot", action="store_true", help="drop seed examples, keep descriptions")
    augment.add_argument("--resume", action="store_true", help="continue an interrupted run in the output dir")
    augment.set_defaults(func=cmd_augment)

    relabel = sub.add_parser("relabel", help="re-run relabeling over an existing generations file")
    relabel.add_argument("--config", required=True)
    relabel.add_argument("--generations", help="generations.jsonl (default: <output_dir>/generations.jsonl)")
    relabel.add_argument("--output", help="directory for relabels.jsonl + augmented.jsonl")
    relabel.add_argument("--seed", type=int, help="override run.seed")
    relabel.set_defaults(func=cmd_relabel)

    classify = sub.add_parser("classify", help="classify a labeled test file with the retrieval+LLM baseline")
    classify.add_argument("--config", required=True)
    classify.add_argument("--test", required=True, help="test examples file (jsonl)")
    classify.add_argument("--output", help="predictions file (default: <test>.predictions.jsonl)")
    classify.set_defaults(func=cmd_classify)

    stats = sub.add_parser("stats", help="print relabel percentages from a relabels.jsonl file")
    stats.add_argument("relabels", help="relabels.jsonl written by augment/relabel")
    stats.set_defaults(func=cmd_stats)

    emit = sub.add_parser("emit", help="rebuild the final dataset file from run logs")
    emit.add_argument("--dataset", required=True, help="class metadata file")
    emit.add_argument("--generations", required=True)
    emit.add_argument("--relabels", help="optional; omit for pre-relabel labels")
    emit.add_argument("--output", required=True)
    emit.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    emit.set_defaults(func=cmd_emit)

    return parser


def _apply_overrides(config: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    updates: dict = {}
    if getattr(args, "seed", None) is not None:
        updates["rng_seed"] = args.seed
    if getattr(args, "output", None):
        updates["output_dir"] = args.output
    if getattr(args, "no_mixup", False):
        updates["mixup_enabled"] = False
    if getattr(args, "no_relabel", False):
        updates["relabel_enabled"] = False
    if getattr(args, "zero_shot", False):
        updates["zero_shot"] = True
    return dataclasses.replace(config, **updates) if updates else config


def _load_run_inputs(args: argparse.Namespace) -> tuple[PipelineConfig, "pl.DatasetSpec"]:
    config = _apply_overrides(load_config(args.config), args)
    config.validate()
    dataset = load_dataset(config.dataset_path, name=config.dataset_name)
    return config, dataset


def _print_dry_run(config: PipelineConfig, dataset) -> None:
    effective = pl._effective_dataset(dataset, config)
    rng = derive_rng(config.rng_seed, 0, 0)
    assignment = select_assignment(
        effective.class_names(), effective.classes[0].name, config.t, rng,
        mixup_enabled=config.mixup_enabled,
    )
    messages = build_generation_prompt(
        effective, assignment, config.n_per_call,
        mixup_enabled=config.mixup_enabled,
        include_descriptions=config.include_descriptions,
    )
    base_calls = math.ceil(config.N_per_class / config.n_per_call)
    n_classes = len(effective.classes)
    print("=== first generation prompt (class 0, batch 0) ===")
    print(messages[0].content)
    print("=== call plan ===")
    print(f"classes: {n_classes}, N_per_class: {config.N_per_class}, n_per_call: {config.n_per_call}")
    print(f"generation chat calls: {base_calls * n_classes} (budget {config.budget_factor * base_calls * n_classes})")
    if config.relabel_enabled:
        embeds = sum(max(cls.k, 1) for cls in effective.classes)
        print(f"relabel: index embeds {embeds}, then 1 embed + 1 chat call per generated record")
    else:
        print("relabel: disabled")
    print(f"config hash: {config_hash(config)[:16]}")


def cmd_augment(args: argparse.Namespace) -> int:
    config, dataset = _load_run_inputs(args)
    if args.dry_run:
        _print_dry_run(config, dataset)
        return 0
    backends = build_backends(config)
    if args.resume:
        out_dir = pl._require_out_dir(config)
        handle = pl.resume(Path(out_dir) / pl.MANIFEST_NAME)
        _, manifest = handle.run(dataset, config, backends)
    else:
        _, manifest = pl.run_augmentation(dataset, config, backends)
    summary = manifest.ledger
    print(
        f"run {manifest.status}: "
        f"{sum(e['records'] for e in manifest.generation.values())} generated, "
        f"{manifest.relabel.get('done', 0)} relabeled, "
        f"{manifest.relabel.get('oos_suspects', 0)} OOS suspects, "
        f"{summary.get('chat_calls', 0)} chat / {summary.get('embed_calls', 0)} embed calls"
    )
    print(f"outputs in {config.output_dir}")
    return 2 if manifest.any_shortfall else 0


def _sorted_generation_lines(path: Path) -> list[dict]:
    lines, _ = pl.read_jsonl_tolerant(Path(path))
    return sorted(lines, key=lambda d: (d["class_index"], d["batch_index"], d["position"]))


def cmd_relabel(args: argparse.Namespace) -> int:
    config, dataset = _load_run_inputs(args)
    effective = pl._effective_dataset(dataset, config)
    generations = args.generations or str(pl._require_out_dir(config) / pl.GENERATIONS_NAME)
    out_dir = Path(args.output) if args.output else pl._require_out_dir(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = [GenerationRecord.from_dict(d) for d in _sorted_generation_lines(Path(generations))]
    if not records:
        print("no generation records found", file=sys.stderr)
        return 1
    backends = build_backends(config)
    index = build_index(effective, backends)
    relabels_path = out_dir / pl.RELABELS_NAME
    done = pl._load_relabel_state(relabels_path)

    def on_record(i: int, record: RelabelRecord) -> None:
        pl.append_jsonl(relabels_path, [dict(record.to_dict(), record_index=i)])

    results = relabel_all(
        records,
        effective,
        index,
        backends,
        params=relabel_params(config),
        candidate_m=config.candidate_m,
        oos_tau=config.oos_tau,
        done=done,
        on_record=on_record,
        max_workers=config.backends.max_in_flight,
    )
    examples = pl.assemble_examples(effective, records, results)
    emit_dataset(examples, out_dir / pl.AUGMENTED_NAME, "jsonl")
    flips = sum(1 for r in results if r.was_relabeled)
    print(f"relabeled {flips}/{len(results)} generations; outputs in {out_dir}")
    return 0


def cmd_classify(args: argparse.Namespace) -> int:
    config, dataset = _load_run_inputs(args)
    effective = pl._effective_dataset(dataset, config)
    test_examples = load_examples(args.test)
    backends = build_backends(config)
    index = build_index(effective, backends)
    report = evaluate_accuracy(
        test_examples,
        effective,
        index,
        backends,
        params=relabel_params(config),
        candidate_m=config.candidate_m,
        max_workers=config.backends.max_in_flight,
    )
    out_path = Path(args.output) if args.output else Path(args.test + ".predictions.jsonl")
    with out_path.open("w", encoding="utf-8") as fh:
        for example, predicted in zip(test_examples, report.predictions):
            fh.write(
                json.dumps(
                    {"text": example.text, "gold": example.label, "predicted": predicted},
                    ensure_ascii=False,
                )
                + "\n"
            )
    print(f"accuracy: {report.accuracy:.4f} over {len(test_examples)} examples")
    for gold in sorted(report.confusion):
        row = report.confusion[gold]
        total = sum(row.values())
        correct = row.get(gold, 0)
        print(f"  {gold}: {correct}/{total}")
    print(f"predictions written to {out_path}")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    lines, _ = pl.read_jsonl_tolerant(Path(args.relabels))
    pairs = []
    for line in lines:
        record = RelabelRecord.from_dict(line)
        pairs.append((record.generation, record))
    stats = compute_relabel_stats(pairs)
    print(f"{'class':<40} {'generated':>9} {'relabeled':>9} {'percent':>8}")
    for name in sorted(stats.per_class_counts):
        generated, relabeled = stats.per_class_counts[name]
        pct = 100.0 * relabeled / generated if generated else 0.0
        print(f"{name:<40} {generated:>9} {relabeled:>9} {pct:>8.1f}")
    print(
        f"overall: {stats.total_generated} generated, {stats.total_relabeled} relabeled "
        f"({stats.percent_relabeled:.1f}%)"
    )
    return 0


def cmd_emit(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    records = [GenerationRecord.from_dict(d) for d in _sorted_generation_lines(Path(args.generations))]
    relabels = None
    if args.relabels:
        done = pl._load_relabel_state(Path(args.relabels))
        missing = [i for i in range(len(records)) if i not in done]
        if missing:
            print(f"relabels file is missing record indices {missing[:5]}...", file=sys.stderr)
            return 1
        relabels = [done[i] for i in range(len(records))]
    examples = pl.assemble_examples(dataset, records, relabels)
    validate_labels(examples, dataset)
    emit_dataset(examples, args.output, args.format)
    print(f"wrote {len(examples)} examples to {args.output}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
