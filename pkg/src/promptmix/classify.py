"""Nearest-neighbor + LLM classification: the no-training baseline.

Classifies arbitrary text with the same machinery the relabeler uses:
candidate retrieval by embedding similarity, a candidate-list classification
prompt, and resolution of the free-text answer onto a valid class.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from .backends import Backends, CompletionParams
from .data import DatasetSpec, LabeledExample
from .relabel import (
    ClassEmbeddingIndex,
    _NameVectorCache,
    build_relabel_prompt,
    rank_candidates,
    resolve_prediction,
)


@dataclass(frozen=True)
class EvaluationReport:
    accuracy: float
    confusion: dict[str, dict[str, int]]  # gold -> predicted -> count
    predictions: tuple[str, ...]


def nn_classify(
    text: str,
    dataset: DatasetSpec,
    index: ClassEmbeddingIndex,
    backends: Backends,
    *,
    params: CompletionParams,
    candidate_m: int = 5,
    name_cache: _NameVectorCache | None = None,
) -> str:
    candidates = rank_candidates(index, text, backends, m=candidate_m)
    messages = build_relabel_prompt(dataset, candidates, text)
    raw, _ = backends.chat.complete(messages, params)
    resolved, _ = resolve_prediction(raw, dataset, backends, name_cache=name_cache)
    return resolved


def evaluate_accuracy(
    test_examples: Sequence[LabeledExample],
    dataset: DatasetSpec,
    index: ClassEmbeddingIndex,
    backends: Backends,
    *,
    params: CompletionParams,
    candidate_m: int = 5,
    max_workers: int = 1,
) -> EvaluationReport:
    """Accuracy of nn_classify against gold labels, with per-class confusion counts."""
    if not test_examples:
        raise ValueError("test set is empty")
    names = set(dataset.class_names())
    for i, example in enumerate(test_examples):
        if example.label not in names:
            raise ValueError(f"test example {i}: unknown label {example.label!r}")
    cache = _NameVectorCache(backends)

    def predict(example: LabeledExample) -> str:
        return nn_classify(
            example.text,
            dataset,
            index,
            backends,
            params=params,
            candidate_m=candidate_m,
            name_cache=cache,
        )

    if max_workers > 1 and len(test_examples) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            predictions = list(pool.map(predict, test_examples))
    else:
        predictions = [predict(example) for example in test_examples]

    confusion: dict[str, dict[str, int]] = {}
    correct = 0
    for example, predicted in zip(test_examples, predictions):
        row = confusion.setdefault(example.label, {})
        row[predicted] = row.get(predicted, 0) + 1
        if predicted == example.label:
            correct += 1
    return EvaluationReport(
        accuracy=correct / len(test_examples),
        confusion=confusion,
        predictions=tuple(predictions),
    )
