"""End-to-end orchestration: generation, relabeling, manifest, resume.

A run writes four files into its output directory:

* ``generations.jsonl``: one line per kept generation, appended per batch
* ``relabels.jsonl``: one line per relabel outcome, appended per record
* ``augmented.jsonl``: the final dataset (seeds + labeled generations)
* ``manifest.json``: config snapshot + hash, per-class progress, call audit

The two JSONL logs are the source of truth for resume: a completed (class,
batch) generation unit or relabeled record is never re-issued. Per-unit rng
streams are derived from (seed, class_index, batch_index), so a resumed run
produces byte-identical final output, regardless of where it was interrupted
or how work was scheduled across threads.
"""
from __future__ import annotations

import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .backends import Backends
from .config import (
    PipelineConfig,
    config_hash,
    generation_params,
    relabel_params,
)
from .data import DatasetSpec, LabeledExample, Provenance, reduce_to_kshot, emit_dataset
from .mixgen import GenerationRecord, generate_for_class
from .relabel import RelabelRecord, build_index, relabel_all
from .rng import derive_rng

MANIFEST_NAME = "manifest.json"
GENERATIONS_NAME = "generations.jsonl"
RELABELS_NAME = "relabels.jsonl"
AUGMENTED_NAME = "augmented.jsonl"

MANIFEST_SCHEMA_VERSION = 1


class PipelineError(RuntimeError):
    pass


class ConfigDriftError(PipelineError):
    """The resumed run's config does not match the manifest's config hash."""


def read_jsonl_tolerant(path: Path) -> tuple[list[dict], bool]:
    """Read a JSONL file, dropping a torn trailing line from a killed writer.

    Returns (records, clean); clean is False when anything was dropped.
    """
    if not path.exists():
        return [], True
    records: list[dict] = []
    clean = True
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            if i >= len(lines) - 2:  # torn tail write
                clean = False
                break
            raise PipelineError(f"{path}: corrupt line {i + 1} (not at tail)")
    return records, clean


def append_jsonl(path: Path, records: Sequence[dict]) -> None:
    if not records:
        return
    block = "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(block)
        fh.flush()
        os.fsync(fh.fileno())


def write_jsonl_atomic(path: Path, records: Sequence[dict]) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")
        fh.flush()
        os.fsync(fh.fileno())
    tmp.replace(path)


def write_json_atomic(path: Path, obj: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        json.dump(obj, fh, ensure_ascii=False, indent=2)
        fh.write("\n")
        fh.flush()
        os.fsync(fh.fileno())
    tmp.replace(path)


@dataclass
class RunManifest:
    """Append-only progress and audit record for one augmentation run."""

    config: dict
    config_hash: str
    seed: int
    dataset: dict
    status: str = "running"
    generation: dict = field(default_factory=dict)
    relabel: dict = field(default_factory=lambda: {"done": 0, "total": None, "oos_suspects": 0})
    ledger: dict = field(default_factory=dict)
    duplicate_generated_texts: int = 0
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "config": self.config,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "dataset": self.dataset,
            "status": self.status,
            "generation": self.generation,
            "relabel": self.relabel,
            "ledger": self.ledger,
            "duplicate_generated_texts": self.duplicate_generated_texts,
            "wall_time_s": self.wall_time_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(
            config=d["config"],
            config_hash=d["config_hash"],
            seed=d["seed"],
            dataset=d["dataset"],
            status=d.get("status", "running"),
            generation=d.get("generation", {}),
            relabel=d.get("relabel", {"done": 0, "total": None, "oos_suspects": 0}),
            ledger=d.get("ledger", {}),
            duplicate_generated_texts=d.get("duplicate_generated_texts", 0),
            wall_time_s=d.get("wall_time_s", 0.0),
        )

    def save(self, path: Path) -> None:
        write_json_atomic(path, self.to_dict())

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        with Path(path).open("r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @property
    def any_shortfall(self) -> bool:
        return any(entry.get("shortfall") for entry in self.generation.values())


@dataclass
class AugmentedDataset:
    """Seed examples plus labeled generations, with the run's audit manifest."""

    examples: list[LabeledExample]
    manifest: RunManifest


def _generation_line(class_index: int, record: GenerationRecord, position: int, batch_size: int) -> dict:
    line = record.to_dict()
    line["class_index"] = class_index
    line["position"] = position
    line["batch_size"] = batch_size
    return line


def _load_generation_state(
    path: Path, dataset: DatasetSpec
) -> dict[str, dict[int, list[GenerationRecord]]]:
    """Group persisted generations by class and batch, dropping partial batches.

    Compacts the file in place when torn or partial content was found, so the
    append log stays consistent with what resume believes happened.
    """
    raw, clean = read_jsonl_tolerant(path)
    groups: dict[str, dict[int, list[dict]]] = {}
    for line in raw:
        groups.setdefault(line["intended_label"], {}).setdefault(line["batch_index"], []).append(
            line
        )
    state: dict[str, dict[int, list[GenerationRecord]]] = {}
    kept_lines: list[dict] = []
    dropped = False
    for name in dataset.class_names():
        batches = groups.get(name, {})
        complete: dict[int, list[GenerationRecord]] = {}
        for batch_index in sorted(batches):
            lines = sorted(batches[batch_index], key=lambda d: d["position"])
            expected = lines[0]["batch_size"]
            if len(lines) != expected or [d["position"] for d in lines] != list(range(expected)):
                dropped = True  # partial batch from a mid-batch kill: re-issue it
                continue
            complete[batch_index] = [GenerationRecord.from_dict(d) for d in lines]
            kept_lines.extend(lines)
        state[name] = complete
    if not clean or dropped:
        write_jsonl_atomic(path, kept_lines)
    return state


def _load_relabel_state(path: Path) -> dict[int, RelabelRecord]:
    raw, clean = read_jsonl_tolerant(path)
    done: dict[int, RelabelRecord] = {}
    for line in raw:
        done.setdefault(line["record_index"], RelabelRecord.from_dict(line))
    if not clean:
        write_jsonl_atomic(
            path,
            [dict(done[i].to_dict(), record_index=i) for i in sorted(done)],
        )
    return done


def _effective_dataset(dataset: DatasetSpec, config: PipelineConfig) -> DatasetSpec:
    if config.zero_shot and dataset.k > 0:
        return reduce_to_kshot(dataset, 0, config.rng_seed)
    return dataset


def run_augmentation(
    dataset: DatasetSpec, config: PipelineConfig, backends: Backends
) -> tuple[AugmentedDataset, RunManifest]:
    """Run both stages from scratch; the output directory must not already
    hold a manifest (resume an interrupted run instead of overwriting it)."""
    config.validate()
    out_dir = _require_out_dir(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / MANIFEST_NAME
    if manifest_path.exists():
        raise PipelineError(
            f"{manifest_path} already exists; resume it or choose a fresh output directory"
        )
    manifest = RunManifest(
        config=config.to_sections(),
        config_hash=config_hash(config),
        seed=config.rng_seed,
        dataset={"name": dataset.name, "k": dataset.k, "classes": len(dataset.classes)},
    )
    manifest.save(manifest_path)
    return _execute(dataset, config, backends, out_dir, manifest)


@dataclass
class ResumeHandle:
    """A validated pointer to an interrupted run's manifest."""

    manifest_path: Path
    manifest: RunManifest

    def run(
        self, dataset: DatasetSpec, config: PipelineConfig, backends: Backends
    ) -> tuple[AugmentedDataset, RunManifest]:
        config.validate()
        current = config_hash(config)
        if current != self.manifest.config_hash:
            raise ConfigDriftError(
                "config drift: manifest was written with config hash "
                f"{self.manifest.config_hash[:12]}..., current is {current[:12]}..."
            )
        return _execute(dataset, config, backends, self.manifest_path.parent, self.manifest)


def resume(manifest_path: str | Path) -> ResumeHandle:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise PipelineError(f"no manifest at {manifest_path}")
    return ResumeHandle(manifest_path=manifest_path, manifest=RunManifest.load(manifest_path))


def _require_out_dir(config: PipelineConfig) -> Path:
    if not config.output_dir:
        raise PipelineError("config.run.output_dir is required to run the pipeline")
    return Path(config.output_dir)


def _execute(
    dataset: DatasetSpec,
    config: PipelineConfig,
    backends: Backends,
    out_dir: Path,
    manifest: RunManifest,
) -> tuple[AugmentedDataset, RunManifest]:
    start = time.monotonic()
    effective = _effective_dataset(dataset, config)
    manifest_path = out_dir / MANIFEST_NAME
    generations_path = out_dir / GENERATIONS_NAME
    relabels_path = out_dir / RELABELS_NAME
    io_lock = threading.Lock()

    gen_params = generation_params(config)
    persisted = _load_generation_state(generations_path, effective)

    def run_class(class_index: int) -> list[GenerationRecord]:
        name = effective.classes[class_index].name
        entry = manifest.generation.get(name)
        done = persisted.get(name, {})
        if entry and entry.get("complete"):
            records = [r for b in sorted(done) for r in done[b]][: config.N_per_class]
            if len(records) != entry.get("records", len(records)):
                raise PipelineError(
                    f"class {name!r}: generation log holds {len(records)} records but the "
                    f"manifest recorded {entry.get('records')}; the log was modified or lost"
                )
            return records

        def on_batch(batch_index: int, batch_records: list[GenerationRecord]) -> None:
            lines = [
                _generation_line(class_index, record, position, len(batch_records))
                for position, record in enumerate(batch_records)
            ]
            with io_lock:
                append_jsonl(generations_path, lines)
                slot = manifest.generation.setdefault(
                    name, {"records": 0, "batches_done": [], "complete": False, "shortfall": False}
                )
                slot["records"] += len(batch_records)
                slot["batches_done"] = sorted(set(slot["batches_done"]) | {batch_index})
                manifest.save(manifest_path)

        records = generate_for_class(
            effective,
            name,
            config.N_per_class,
            config.n_per_call,
            backends,
            lambda batch_index: derive_rng(config.rng_seed, class_index, batch_index),
            params=gen_params,
            t=config.t,
            mixup_enabled=config.mixup_enabled,
            include_descriptions=config.include_descriptions,
            budget_factor=config.budget_factor,
            done=done,
            on_batch=on_batch,
        )
        with io_lock:
            slot = manifest.generation.setdefault(
                name, {"records": 0, "batches_done": [], "complete": False, "shortfall": False}
            )
            slot["records"] = len(records)
            slot["complete"] = True
            slot["shortfall"] = len(records) < config.N_per_class
            manifest.save(manifest_path)
        return records

    workers = min(config.backends.max_in_flight, len(effective.classes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_class = list(pool.map(run_class, range(len(effective.classes))))
    else:
        per_class = [run_class(i) for i in range(len(effective.classes))]

    all_records: list[GenerationRecord] = [r for records in per_class for r in records]

    relabel_records: list[RelabelRecord] | None = None
    if config.relabel_enabled:
        index = build_index(effective, backends)
        done_relabels = _load_relabel_state(relabels_path)
        manifest.relabel["total"] = len(all_records)

        def on_record(record_index: int, record: RelabelRecord) -> None:
            line = dict(record.to_dict(), record_index=record_index)
            with io_lock:
                append_jsonl(relabels_path, [line])
                manifest.relabel["done"] = manifest.relabel.get("done", 0) + 1
                manifest.save(manifest_path)

        relabel_records = relabel_all(
            all_records,
            effective,
            index,
            backends,
            params=relabel_params(config),
            candidate_m=config.candidate_m,
            oos_tau=config.oos_tau,
            done=done_relabels,
            on_record=on_record,
            max_workers=config.backends.max_in_flight,
        )
        manifest.relabel["done"] = len(relabel_records)
        manifest.relabel["oos_suspects"] = sum(1 for r in relabel_records if r.oos_suspect)

    examples = assemble_examples(effective, all_records, relabel_records)
    emit_dataset(examples, out_dir / AUGMENTED_NAME, "jsonl")

    seen: set[str] = set()
    duplicates = 0
    for record in all_records:
        if record.text in seen:
            duplicates += 1
        seen.add(record.text)
    manifest.duplicate_generated_texts = duplicates
    manifest.ledger = backends.ledger.summary()
    manifest.wall_time_s += time.monotonic() - start
    manifest.status = "complete_with_shortfall" if manifest.any_shortfall else "complete"
    manifest.save(manifest_path)
    return AugmentedDataset(examples=examples, manifest=manifest), manifest


def assemble_examples(
    dataset: DatasetSpec,
    records: Sequence[GenerationRecord],
    relabels: Sequence[RelabelRecord] | None,
) -> list[LabeledExample]:
    """Seeds in class order, then generations in generation order.

    With relabeling, a generation's label is its resolved label; without, the
    intended majority class (the pre-relabel dataset).
    """
    if relabels is not None and len(relabels) != len(records):
        raise ValueError("relabel records must align one-to-one with generations")
    names = set(dataset.class_names())
    for i, record in enumerate(records):
        if record.intended_label not in names:
            raise ValueError(
                f"generation {i}: intended label {record.intended_label!r} is not a dataset class"
            )
    examples: list[LabeledExample] = []
    for cls in dataset.classes:
        for text in cls.seed_examples:
            examples.append(LabeledExample(text=text, label=cls.name, origin="seed"))
    for i, record in enumerate(records):
        label = relabels[i].resolved_label if relabels is not None else record.intended_label
        examples.append(
            LabeledExample(
                text=record.text,
                label=label,
                origin="generated",
                provenance=Provenance(
                    majority_class=record.assignment.majority_class,
                    minority_class=record.assignment.minority_class,
                    alpha=record.assignment.alpha,
                    resolved_from=record.intended_label,
                ),
            )
        )
    return examples
