"""promptmix-train: fine-tune on an emitted dataset and report accuracy."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .train import TrainConfig, evaluate, file_digest, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptmix-train",
        description="Fine-tune a compact encoder classifier on an emitted example file.",
    )
    parser.add_argument("--train", required=True, help="training examples (jsonl or csv)")
    parser.add_argument("--test", required=True, help="held-out test examples")
    parser.add_argument("--config", help="JSON training config (defaults used if omitted)")
    parser.add_argument("--out", default="model_out", help="artifact directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
        if file_digest(args.train) == file_digest(args.test):
            raise ValueError("train and test files are identical; refusing to leak the test split")
        result = train(args.train, config, args.out)
        report = evaluate(args.out, args.test, max_length=config.max_length)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    metrics = {
        "accuracy": report.accuracy,
        "per_class": report.per_class,
        "config_hash": config.hash(),
        "train_accuracy": result.train_accuracy,
        "epoch_losses": result.epoch_losses,
        "labels": result.labels,
    }
    metrics_path = Path(args.out) / "metrics.json"
    metrics_path.write_text(json.dumps(metrics, indent=2) + "\n")
    print(f"test accuracy: {report.accuracy:.4f} ({len(report.predictions)} examples)")
    print(f"metrics written to {metrics_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
