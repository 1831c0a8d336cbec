#!/usr/bin/env python3
"""End-to-end offline demo: no API key, deterministic mock backends.

Builds a four-class toy banking dataset, runs generation + relabeling with a
rule-driven mock LLM, and prints the run summary plus the first prompt. The
run directory (default ./demo_run) contains the same four files a live run
produces.
"""
from __future__ import annotations

import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "tests"))

from helpers import bank_dataset, rule_backends  # noqa: E402

from promptmix.config import BackendSettings, PipelineConfig  # noqa: E402
from promptmix.data import save_dataset  # noqa: E402
from promptmix.pipeline import run_augmentation  # noqa: E402


def main() -> None:
    out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="promptmix_demo_"))
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = bank_dataset()
    save_dataset(dataset, out_dir / "demo_classes.jsonl")
    config = PipelineConfig(
        dataset_path=str(out_dir / "demo_classes.jsonl"),
        N_per_class=10,
        n_per_call=5,
        t=4,
        rng_seed=7,
        output_dir=str(out_dir / "run"),
        backends=BackendSettings(mode="mock", max_in_flight=2),
    )
    augmented, manifest = run_augmentation(dataset, config, rule_backends())
    seeds = sum(1 for e in augmented.examples if e.origin == "seed")
    generated = len(augmented.examples) - seeds
    print(f"run {manifest.status}: {seeds} seed + {generated} generated examples")
    print(f"chat calls: {manifest.ledger['chat_calls']}, embed calls: {manifest.ledger['embed_calls']}")
    print(f"outputs in {config.output_dir}")
    sample = next(e for e in augmented.examples if e.origin == "generated")
    print("\nsample generated record:")
    print(f"  text:  {sample.text}")
    print(f"  label: {sample.label} (intended {sample.provenance.resolved_from}, "
          f"alpha {sample.provenance.alpha}, minority {sample.provenance.minority_class})")


if __name__ == "__main__":
    main()
