"""Reader for the augmentation pipeline's emitted example files.

The trainer consumes the documented file contract only: JSONL lines with
``text`` and ``label`` fields (``origin``/``provenance`` are ignored here), or
the csv variant with a ``text,label,origin`` header.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path


def load_labeled_file(path: str | Path) -> list[tuple[str, str]]:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with path.open("r", encoding="utf-8", newline="") as fh:
            return [(row["text"], row["label"]) for row in csv.DictReader(fh)]
    pairs: list[tuple[str, str]] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                pairs.append((record["text"], record["label"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad example line: {exc}") from exc
    return pairs


def label_space(pairs: list[tuple[str, str]]) -> list[str]:
    return sorted({label for _, label in pairs})
