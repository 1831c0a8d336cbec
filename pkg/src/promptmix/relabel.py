"""Relabeling of generated examples with an LLM classifier.

For each generation: retrieve the closest candidate classes by embedding
similarity, ask the chat backend to classify the sentence against those
candidates, then snap the free-text answer back onto a valid dataset class.
Every generation is relabeled, good and bad alike.
"""
from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

from .backends import (
    Backends,
    ChatMessage,
    CompletionParams,
    EmbeddingVector,
    cosine,
)
from .data import DatasetSpec
from .mixgen import GenerationRecord
from .prompts import class_section, template

DEFAULT_CANDIDATE_M = 5
DEFAULT_OOS_TAU = 0.35

_STRIP_QUOTES = "\"'“”‘’`"


@dataclass(frozen=True)
class ClassEmbeddingIndex:
    """Per-class unit vectors: one per seed example, or one per class name in zero-shot."""

    per_class_vectors: dict[str, tuple[EmbeddingVector, ...]]
    dimension: int

    def __post_init__(self) -> None:
        for name, vectors in self.per_class_vectors.items():
            if not vectors:
                raise ValueError(f"class {name!r} has no vectors")
            for v in vectors:
                if v.dimension != self.dimension:
                    raise ValueError(
                        f"class {name!r}: vector dimension {v.dimension} != {self.dimension}"
                    )


@dataclass(frozen=True)
class RelabelRecord:
    """Outcome of relabeling one generation."""

    generation: GenerationRecord
    candidates: tuple[str, ...]
    raw_prediction: str
    resolved_label: str
    resolution_similarity: float
    was_relabeled: bool
    oos_suspect: bool = False

    def __post_init__(self) -> None:
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError("candidate classes must be distinct")
        if self.was_relabeled != (self.resolved_label != self.generation.intended_label):
            raise ValueError("was_relabeled is inconsistent with the resolved label")

    def to_dict(self) -> dict:
        return {
            "generation": self.generation.to_dict(),
            "candidates": list(self.candidates),
            "raw_prediction": self.raw_prediction,
            "resolved_label": self.resolved_label,
            "resolution_similarity": self.resolution_similarity,
            "was_relabeled": self.was_relabeled,
            "oos_suspect": self.oos_suspect,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RelabelRecord":
        return cls(
            generation=GenerationRecord.from_dict(d["generation"]),
            candidates=tuple(d["candidates"]),
            raw_prediction=d["raw_prediction"],
            resolved_label=d["resolved_label"],
            resolution_similarity=d["resolution_similarity"],
            was_relabeled=d["was_relabeled"],
            oos_suspect=d.get("oos_suspect", False),
        )


def build_index(dataset: DatasetSpec, backends: Backends) -> ClassEmbeddingIndex:
    """Embed every seed example per class; with no seeds (k=0), embed class names."""
    per_class: dict[str, tuple[EmbeddingVector, ...]] = {}
    for cls in dataset.classes:
        texts = cls.seed_examples if cls.seed_examples else (cls.name,)
        per_class[cls.name] = tuple(backends.embedder.embed(text) for text in texts)
    dimension = next(iter(per_class.values()))[0].dimension
    return ClassEmbeddingIndex(per_class_vectors=per_class, dimension=dimension)


def score_classes(index: ClassEmbeddingIndex, query: EmbeddingVector) -> dict[str, float]:
    """Class score = max cosine over that class's vectors."""
    return {
        name: max(cosine(query, v) for v in vectors)
        for name, vectors in index.per_class_vectors.items()
    }


def rank_candidates(
    index: ClassEmbeddingIndex,
    query_text: str,
    backends: Backends,
    m: int = DEFAULT_CANDIDATE_M,
) -> list[str]:
    """Top-m classes by max-cosine to the query embedding.

    Ties break by ascending class name; returns min(m, |classes|) names.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    query = backends.embedder.embed(query_text)
    scores = score_classes(index, query)
    ranked = sorted(scores, key=lambda name: (-scores[name], name))
    return ranked[: min(m, len(ranked))]


def build_relabel_prompt(
    dataset: DatasetSpec, candidates: Sequence[str], sentence: str
) -> list[ChatMessage]:
    """Candidate class blocks, the sentence, and a one-class-name instruction."""
    if not candidates:
        raise ValueError("candidates must be non-empty")
    classes = [dataset.get_class(name) for name in candidates]
    section = class_section(classes, include_descriptions=True)
    question = template("relabel_question").format(sentence=sentence)
    return [ChatMessage(role="user", content=f"{section}\n\n{question}")]


def _normalize_prediction(raw: str) -> str:
    text = raw.strip()
    while True:
        previous = text
        text = text.strip().strip(_STRIP_QUOTES).rstrip(".").strip()
        if text == previous:
            return text


class _NameVectorCache:
    """Lazily embeds class names once; safe under concurrent resolution."""

    def __init__(self, backends: Backends) -> None:
        self._backends = backends
        self._vectors: dict[str, EmbeddingVector] = {}
        self._lock = threading.Lock()

    def get(self, name: str) -> EmbeddingVector:
        with self._lock:
            cached = self._vectors.get(name)
        if cached is not None:
            return cached
        vector = self._backends.embedder.embed(name)
        with self._lock:
            self._vectors.setdefault(name, vector)
        return vector


def resolve_prediction(
    raw: str,
    dataset: DatasetSpec,
    backends: Backends,
    *,
    name_cache: _NameVectorCache | None = None,
) -> tuple[str, float]:
    """Snap a free-text class prediction onto a valid dataset class.

    An exact class-name match (after trimming surrounding quotes/periods)
    resolves with similarity 1.0 and no embedding calls; otherwise the class
    whose name embedding is closest to the prediction wins, ties broken by
    ascending class name.
    """
    if not raw.strip():
        raise ValueError("prediction must be non-empty")
    normalized = _normalize_prediction(raw)
    names = dataset.class_names()
    if normalized in names:
        return normalized, 1.0
    cache = name_cache or _NameVectorCache(backends)
    query_text = normalized if normalized else raw.strip()
    query = backends.embedder.embed(query_text)
    similarities = {name: cosine(query, cache.get(name)) for name in names}
    best = sorted(names, key=lambda name: (-similarities[name], name))[0]
    return best, similarities[best]


def relabel_all(
    records: Sequence[GenerationRecord],
    dataset: DatasetSpec,
    index: ClassEmbeddingIndex,
    backends: Backends,
    *,
    params: CompletionParams,
    candidate_m: int = DEFAULT_CANDIDATE_M,
    oos_tau: float = DEFAULT_OOS_TAU,
    done: dict[int, RelabelRecord] | None = None,
    on_record: Callable[[int, RelabelRecord], None] | None = None,
    max_workers: int = 1,
) -> list[RelabelRecord]:
    """Relabel every generation (no quality filter), preserving input order.

    Already-done records (by input index) are reused without backend calls,
    which makes interrupted runs resumable. With max_workers > 1 the remaining
    records fan out over a thread pool; output order stays index-ordered.
    """
    done = done or {}
    results: dict[int, RelabelRecord] = dict(done)
    name_cache = _NameVectorCache(backends)

    def process(i: int) -> RelabelRecord:
        generation = records[i]
        candidates = rank_candidates(index, generation.text, backends, m=candidate_m)
        messages = build_relabel_prompt(dataset, candidates, generation.text)
        raw, _ = backends.chat.complete(messages, params)
        resolved, similarity = resolve_prediction(
            raw, dataset, backends, name_cache=name_cache
        )
        record = RelabelRecord(
            generation=generation,
            candidates=tuple(candidates),
            raw_prediction=raw,
            resolved_label=resolved,
            resolution_similarity=similarity,
            was_relabeled=resolved != generation.intended_label,
            oos_suspect=similarity < oos_tau,
        )
        if on_record is not None:
            on_record(i, record)
        return record

    pending = [i for i in range(len(records)) if i not in results]
    if max_workers > 1 and len(pending) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            for i, record in zip(pending, pool.map(process, pending)):
                results[i] = record
    else:
        for i in pending:
            results[i] = process(i)
    return [results[i] for i in range(len(records))]
