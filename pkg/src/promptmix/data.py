"""Dataset model, validation, k-shot reduction, file IO, and relabel statistics.

File formats (all UTF-8, one JSON object per line):

* class metadata file: ``{"name": ..., "description": ..., "seed_examples": [...]}``
* example file: ``{"text": ..., "label": ..., "origin": "seed"|"generated",
  "provenance": {"majority_class", "minority_class", "alpha", "resolved_from"}}``
  where ``provenance`` is present exactly when ``origin`` is ``generated``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

from .rng import derive_rng

Origin = Literal["seed", "generated"]

EMIT_FORMATS = ("jsonl", "csv")


class DatasetParseError(ValueError):
    """A dataset or example file could not be parsed; carries the line number."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        prefix = ""
        if path is not None:
            prefix += str(path)
        if line is not None:
            prefix += f":{line}"
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = str(path) if path is not None else None
        self.line = line


class DatasetValidationError(ValueError):
    """A structurally valid file violated a dataset invariant."""


@dataclass(frozen=True)
class ClassSpec:
    """One target class: a unique name, a short description, and k seed examples."""

    name: str
    description: str
    seed_examples: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "name", self.name.strip())
        object.__setattr__(self, "description", self.description.strip())
        object.__setattr__(self, "seed_examples", tuple(s.strip() for s in self.seed_examples))
        if not self.name:
            raise DatasetValidationError("class name must be non-empty")
        if not self.description:
            raise DatasetValidationError(f"class {self.name!r}: description must be non-empty")
        for i, example in enumerate(self.seed_examples):
            if not example:
                raise DatasetValidationError(f"class {self.name!r}: seed example {i} is empty")

    @property
    def k(self) -> int:
        return len(self.seed_examples)


@dataclass(frozen=True)
class DatasetSpec:
    """A classification dataset: at least two classes, all with the same shot count k."""

    name: str
    classes: tuple[ClassSpec, ...]
    k: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "classes", tuple(self.classes))
        if len(self.classes) < 2:
            raise DatasetValidationError(
                f"dataset {self.name!r}: need at least 2 classes, got {len(self.classes)}"
            )
        seen: set[str] = set()
        for cls in self.classes:
            if cls.name in seen:
                raise DatasetValidationError(
                    f"dataset {self.name!r}: duplicate class name {cls.name!r}"
                )
            seen.add(cls.name)
        ks = {cls.k for cls in self.classes}
        if len(ks) > 1:
            detail = ", ".join(f"{cls.name}={cls.k}" for cls in self.classes)
            raise DatasetValidationError(
                f"dataset {self.name!r}: classes have unequal seed counts ({detail})"
            )
        object.__setattr__(self, "k", self.classes[0].k)

    def class_names(self) -> tuple[str, ...]:
        return tuple(cls.name for cls in self.classes)

    def get_class(self, name: str) -> ClassSpec:
        for cls in self.classes:
            if cls.name == name:
                return cls
        raise KeyError(f"dataset {self.name!r} has no class {name!r}")

    def class_index(self, name: str) -> int:
        for i, cls in enumerate(self.classes):
            if cls.name == name:
                return i
        raise KeyError(f"dataset {self.name!r} has no class {name!r}")


@dataclass(frozen=True)
class Provenance:
    """How a generated example came to carry its label."""

    majority_class: str
    minority_class: str | None
    alpha: float | None
    resolved_from: str

    def to_dict(self) -> dict:
        return {
            "majority_class": self.majority_class,
            "minority_class": self.minority_class,
            "alpha": self.alpha,
            "resolved_from": self.resolved_from,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Provenance":
        return cls(
            majority_class=d["majority_class"],
            minority_class=d.get("minority_class"),
            alpha=d.get("alpha"),
            resolved_from=d["resolved_from"],
        )


@dataclass(frozen=True)
class LabeledExample:
    text: str
    label: str
    origin: Origin = "seed"
    provenance: Provenance | None = None

    def __post_init__(self) -> None:
        if self.origin not in ("seed", "generated"):
            raise DatasetValidationError(f"invalid origin {self.origin!r}")
        if self.origin == "seed" and self.provenance is not None:
            raise DatasetValidationError("seed examples must not carry provenance")
        if self.origin == "generated" and self.provenance is None:
            raise DatasetValidationError("generated examples must carry provenance")


@dataclass(frozen=True)
class RelabelStats:
    """Counts of relabeled generations, overall and per intended majority class."""

    per_class_counts: dict[str, tuple[int, int]]
    total_generated: int
    total_relabeled: int
    percent_relabeled: float


def load_dataset(path: str | Path, name: str | None = None) -> DatasetSpec:
    """Load and validate a class metadata file (one JSON class record per line)."""
    path = Path(path)
    classes: list[ClassSpec] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(f"malformed class record: {exc.msg}", path, lineno) from exc
            if not isinstance(record, dict):
                raise DatasetParseError("class record must be a JSON object", path, lineno)
            missing = {"name", "description", "seed_examples"} - record.keys()
            if missing:
                raise DatasetParseError(
                    f"class record missing fields: {sorted(missing)}", path, lineno
                )
            seeds = record["seed_examples"]
            if not isinstance(seeds, list) or not all(isinstance(s, str) for s in seeds):
                raise DatasetParseError("seed_examples must be an array of strings", path, lineno)
            classes.append(
                ClassSpec(
                    name=str(record["name"]),
                    description=str(record["description"]),
                    seed_examples=tuple(seeds),
                )
            )
    return DatasetSpec(name=name if name is not None else path.stem, classes=tuple(classes))


def save_dataset(dataset: DatasetSpec, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for cls in dataset.classes:
            fh.write(
                json.dumps(
                    {
                        "name": cls.name,
                        "description": cls.description,
                        "seed_examples": list(cls.seed_examples),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def reduce_to_kshot(full: DatasetSpec, k: int, rng_seed: int) -> DatasetSpec:
    """Keep exactly k seed examples per class, sampled uniformly without replacement.

    Deterministic for a fixed seed. Selected examples keep their original
    relative order, so reducing an already-k-shot dataset returns it unchanged.
    """
    if k < 0:
        raise DatasetValidationError(f"k must be non-negative, got {k}")
    for cls in full.classes:
        if cls.k < k:
            raise DatasetValidationError(
                f"class {cls.name!r} has {cls.k} examples, cannot reduce to k={k}"
            )
    reduced = []
    for class_index, cls in enumerate(full.classes):
        rng = derive_rng("kshot", rng_seed, class_index, cls.name)
        keep = sorted(rng.sample(range(cls.k), k))
        reduced.append(
            ClassSpec(
                name=cls.name,
                description=cls.description,
                seed_examples=tuple(cls.seed_examples[i] for i in keep),
            )
        )
    return DatasetSpec(name=full.name, classes=tuple(reduced))


def validate_labels(examples: Iterable[LabeledExample], dataset: DatasetSpec) -> None:
    names = set(dataset.class_names())
    for i, example in enumerate(examples):
        if example.label not in names:
            raise DatasetValidationError(
                f"example {i}: label {example.label!r} is not a dataset class"
            )


def _example_to_dict(example: LabeledExample) -> dict:
    record: dict = {"text": example.text, "label": example.label, "origin": example.origin}
    if example.provenance is not None:
        record["provenance"] = example.provenance.to_dict()
    return record


def _example_from_dict(record: dict) -> LabeledExample:
    provenance = record.get("provenance")
    return LabeledExample(
        text=record["text"],
        label=record["label"],
        origin=record.get("origin", "seed"),
        provenance=Provenance.from_dict(provenance) if provenance else None,
    )


def emit_dataset(
    examples: Sequence[LabeledExample],
    path: str | Path,
    fmt: str = "jsonl",
) -> None:
    """Write examples to path: seed examples first, then generated ones.

    The partition is stable (input order preserved within each group), so
    emitting the same input twice yields byte-identical files. The csv format
    keeps only (text, label, origin).
    """
    if fmt not in EMIT_FORMATS:
        raise ValueError(f"unknown format {fmt!r}, expected one of {EMIT_FORMATS}")
    path = Path(path)
    ordered = [e for e in examples if e.origin == "seed"] + [
        e for e in examples if e.origin == "generated"
    ]
    with path.open("w", encoding="utf-8", newline="") as fh:
        if fmt == "jsonl":
            for example in ordered:
                fh.write(json.dumps(_example_to_dict(example), ensure_ascii=False) + "\n")
        else:
            writer = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_ALL)
            writer.writerow(["text", "label", "origin"])
            for example in ordered:
                if "\x00" in example.text:
                    raise ValueError(
                        "csv format cannot represent NUL characters; use jsonl"
                    )
                writer.writerow([example.text, example.label, example.origin])


def load_examples(path: str | Path, fmt: str | None = None) -> list[LabeledExample]:
    """Read an example file written by emit_dataset (format inferred from suffix)."""
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    if fmt not in EMIT_FORMATS:
        raise ValueError(f"unknown format {fmt!r}, expected one of {EMIT_FORMATS}")
    examples: list[LabeledExample] = []
    if fmt == "csv":
        with path.open("r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            for lineno, row in enumerate(reader, start=2):
                try:
                    # csv keeps no provenance; synthesize the minimal valid record
                    provenance = None
                    if row["origin"] == "generated":
                        provenance = Provenance(
                            majority_class=row["label"],
                            minority_class=None,
                            alpha=None,
                            resolved_from=row["label"],
                        )
                    examples.append(
                        LabeledExample(
                            text=row["text"],
                            label=row["label"],
                            origin=row["origin"],  # type: ignore[arg-type]
                            provenance=provenance,
                        )
                    )
                except (KeyError, DatasetValidationError) as exc:
                    raise DatasetParseError(f"bad example row: {exc}", path, lineno) from exc
        return examples
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(f"malformed example: {exc.msg}", path, lineno) from exc
            try:
                examples.append(_example_from_dict(record))
            except (KeyError, DatasetValidationError) as exc:
                raise DatasetParseError(f"bad example record: {exc}", path, lineno) from exc
    return examples


def compute_relabel_stats(records: Sequence[tuple]) -> RelabelStats:
    """Relabel statistics over (GenerationRecord, RelabelRecord) pairs.

    A generation counts as relabeled iff the resolved label differs from the
    intended majority class; per-class counts are keyed by that intended class.
    """
    per_class: dict[str, list[int]] = {}
    total = 0
    relabeled = 0
    for generation, relabel in records:
        if relabel.generation.text != generation.text or (
            relabel.generation.intended_label != generation.intended_label
        ):
            raise ValueError("relabel record does not pair with its generation record")
        intended = generation.intended_label
        counts = per_class.setdefault(intended, [0, 0])
        counts[0] += 1
        total += 1
        if relabel.resolved_label != intended:
            counts[1] += 1
            relabeled += 1
    percent = 100.0 * relabeled / total if total else 0.0
    return RelabelStats(
        per_class_counts={name: (g, r) for name, (g, r) in per_class.items()},
        total_generated=total,
        total_relabeled=relabeled,
        percent_relabeled=percent,
    )
