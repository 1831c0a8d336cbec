#!/usr/bin/env python3
"""Regenerate the prompt golden files under tests/golden.

Run after any deliberate template change, then review the diff:

    python scripts/regen_golden.py
"""
from __future__ import annotations

import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "tests"))

from helpers import bank_dataset, zero_shot_dataset  # noqa: E402

from promptmix.mixgen import MixupAssignment, build_generation_prompt  # noqa: E402
from promptmix.relabel import build_relabel_prompt  # noqa: E402

GOLDEN_DIR = REPO / "tests" / "golden"

SENTENCE = "Is there a minimum age to withdraw cash at an ATM?"


def golden_cases():
    datasets = {"2shot": bank_dataset(), "0shot": zero_shot_dataset()}
    for shots, dataset in datasets.items():
        names = dataset.class_names()
        for t in (2, 4):
            subset = names[:t]
            assignment = MixupAssignment(
                majority_class="age_limit",
                minority_class="atm_support",
                alpha=0.75,
                subset=subset,
            )
            for mixup in (True, False):
                label = "mixup" if mixup else "nomixup"
                content = build_generation_prompt(
                    dataset, assignment, 4, mixup_enabled=mixup
                )[0].content
                yield f"generation_{shots}_{label}_t{t}.txt", content
        for m in (2, 4):
            candidates = list(names[:m])
            content = build_relabel_prompt(dataset, candidates, SENTENCE)[0].content
            yield f"relabel_{shots}_m{m}.txt", content


def main() -> None:
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    for name, content in golden_cases():
        path = GOLDEN_DIR / name
        path.write_text(content, encoding="utf-8")
        print(f"wrote {path.relative_to(REPO)} ({len(content)} bytes)")


if __name__ == "__main__":
    main()
