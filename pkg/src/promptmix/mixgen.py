"""Borderline-example generation: mixing-ratio sampling, class-subset
selection, two-part prompt construction, and completion parsing.

Each generation batch mixes two classes: a focus (majority) class and a
randomly drawn minority class from a small contrastive subset of t classes.
The mixing ratio alpha is drawn from a rounded Beta(5, 2) transform restricted
to (0.5, 1.0] so generations stay on the majority side of the boundary.
"""
from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .backends import Backends, ChatMessage, CompletionParams, text_digest
from .data import DatasetSpec
from .prompts import class_section, template
from .rng import derive_rng

ALPHA_GRID = tuple(m / 20 for m in range(11, 21))  # 0.55, 0.60, ..., 1.00

DEFAULT_SUBSET_SIZE = 4
DEFAULT_N_PER_CALL = 5
DEFAULT_BUDGET_FACTOR = 3


def _round_half_away(value: float) -> int:
    return math.floor(value + 0.5)


@dataclass
class AlphaSampler:
    """Draws mixing ratios: alpha = round(10(x + 1)) / 20 with x ~ Beta(a, b).

    Draws that land exactly on 0.50 are rejected and resampled, keeping the
    emitted grid at {0.55, 0.60, ..., 1.00}.
    """

    beta_a: float = 5.0
    beta_b: float = 2.0
    rng: random.Random = field(default_factory=random.Random)

    def sample(self) -> float:
        while True:
            x = self.rng.betavariate(self.beta_a, self.beta_b)
            alpha = _round_half_away(10.0 * (x + 1.0)) / 20.0
            if alpha != 0.5:
                return alpha


def sample_alpha(sampler: AlphaSampler) -> float:
    return sampler.sample()


@dataclass(frozen=True)
class MixupAssignment:
    """One batch's contract: majority/minority classes, ratio, and the prompt subset."""

    majority_class: str
    minority_class: str | None
    alpha: float | None
    subset: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.subset)) != len(self.subset):
            raise ValueError("subset members must be distinct")
        if self.majority_class not in self.subset:
            raise ValueError("majority class must be in the subset")
        if self.minority_class is not None:
            if self.minority_class == self.majority_class:
                raise ValueError("majority and minority classes must differ")
            if self.minority_class not in self.subset:
                raise ValueError("minority class must be in the subset")
            if self.alpha is None:
                raise ValueError("mixup assignment requires alpha")

    def to_dict(self) -> dict:
        return {
            "majority_class": self.majority_class,
            "minority_class": self.minority_class,
            "alpha": self.alpha,
            "subset": list(self.subset),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixupAssignment":
        return cls(
            majority_class=d["majority_class"],
            minority_class=d.get("minority_class"),
            alpha=d.get("alpha"),
            subset=tuple(d["subset"]),
        )


@dataclass(frozen=True)
class GenerationRecord:
    """One generated utterance plus full mixup provenance."""

    text: str
    assignment: MixupAssignment
    intended_label: str
    batch_index: int
    raw_completion_digest: str

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("generated text must be non-empty")
        if self.intended_label != self.assignment.majority_class:
            raise ValueError("intended label must equal the assignment's majority class")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "intended_label": self.intended_label,
            "batch_index": self.batch_index,
            "raw_completion_digest": self.raw_completion_digest,
            "assignment": self.assignment.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationRecord":
        return cls(
            text=d["text"],
            assignment=MixupAssignment.from_dict(d["assignment"]),
            intended_label=d["intended_label"],
            batch_index=d["batch_index"],
            raw_completion_digest=d["raw_completion_digest"],
        )


def select_assignment(
    classes: Sequence[str],
    focus: str,
    t: int,
    rng: random.Random,
    *,
    mixup_enabled: bool = True,
    alpha_sampler: AlphaSampler | None = None,
) -> MixupAssignment:
    """Draw a fresh subset, minority class, and alpha for one generation batch.

    t >= 2 is required when mixup is enabled (a minority class must exist);
    t = 1 yields the single-class prompt used by the no-mixup ablation.
    """
    if focus not in classes:
        raise ValueError(f"focus class {focus!r} is not in the class list")
    min_t = 2 if mixup_enabled else 1
    if t < min_t:
        raise ValueError(f"t must be >= {min_t}, got {t}")
    if t > len(classes):
        raise ValueError(f"t={t} exceeds the number of classes ({len(classes)})")
    others = [c for c in classes if c != focus]
    companions = rng.sample(others, t - 1)
    minority = None
    alpha = None
    if mixup_enabled:
        minority = rng.choice(companions)
        sampler = alpha_sampler or AlphaSampler(rng=rng)
        alpha = sampler.sample()
    return MixupAssignment(
        majority_class=focus,
        minority_class=minority,
        alpha=alpha,
        subset=tuple([focus] + companions),
    )


def build_generation_prompt(
    dataset: DatasetSpec,
    assignment: MixupAssignment,
    n: int,
    *,
    mixup_enabled: bool = True,
    include_descriptions: bool = True,
) -> list[ChatMessage]:
    """Two-part prompt: class section (names/descriptions/seed examples), then
    the generation instruction with integer percentages. Byte-deterministic."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    classes = [dataset.get_class(name) for name in assignment.subset]
    section = class_section(classes, include_descriptions=include_descriptions)
    if mixup_enabled:
        if assignment.minority_class is None or assignment.alpha is None:
            raise ValueError("mixup prompt requires an assignment with minority class and alpha")
        majority_pct = int(round(assignment.alpha * 100))
        instruction = template("instruction_mixup").format(
            n=n,
            majority=assignment.majority_class,
            minority=assignment.minority_class,
            majority_pct=majority_pct,
            minority_pct=100 - majority_pct,
        )
    else:
        instruction = template("instruction_single").format(
            n=n, majority=assignment.majority_class
        )
    return [ChatMessage(role="user", content=f"{section}\n\n{instruction}")]


_LIST_MARKER = re.compile(r"^\s*(?:\d+[.)]|-)\s*")

_MIN_TOKENS = 3


def parse_generations(completion: str, n_max: int) -> list[str]:
    """Extract up to n_max utterances from a list-shaped completion.

    Keeps lines with a leading list marker (``N.``, ``N)``, or ``-``), strips
    markers (repeatedly, so no output ever starts with one), trims, and drops
    fragments shorter than three whitespace-separated tokens.
    """
    utterances: list[str] = []
    for line in completion.splitlines():
        if not _LIST_MARKER.match(line):
            continue
        text = line
        while True:
            stripped = _LIST_MARKER.sub("", text, count=1)
            if stripped == text:
                break
            text = stripped
        text = text.strip()
        if len(text.split()) < _MIN_TOKENS:
            continue
        utterances.append(text)
        if len(utterances) >= n_max:
            break
    return utterances


BatchRng = Callable[[int], random.Random]


def _batch_rng_factory(rng: random.Random | BatchRng) -> BatchRng:
    if callable(rng) and not isinstance(rng, random.Random):
        return rng
    base = rng.getrandbits(64)
    return lambda batch_index: derive_rng("generation-batch", base, batch_index)


def generate_for_class(
    dataset: DatasetSpec,
    focus: str,
    N: int,
    n_per_call: int,
    backends: Backends,
    rng: random.Random | BatchRng,
    *,
    params: CompletionParams,
    t: int = DEFAULT_SUBSET_SIZE,
    mixup_enabled: bool = True,
    include_descriptions: bool = True,
    budget_factor: int = DEFAULT_BUDGET_FACTOR,
    done: dict[int, list[GenerationRecord]] | None = None,
    on_batch: Callable[[int, list[GenerationRecord]], None] | None = None,
) -> list[GenerationRecord]:
    """Generate N records for one focus class, batch by batch.

    Every batch gets a freshly sampled assignment (new subset, minority class,
    and alpha) from an rng stream derived per batch index, so interrupted runs
    resume identically: batches listed in ``done`` are folded in without any
    backend call. Stops once N records are collected or the call budget
    (budget_factor * ceil(N / n_per_call) batches) is exhausted; fewer than N
    returned records means a yield shortfall.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if n_per_call < 1:
        raise ValueError(f"n_per_call must be >= 1, got {n_per_call}")
    factory = _batch_rng_factory(rng)
    done = done or {}
    budget = budget_factor * math.ceil(N / n_per_call)
    records: list[GenerationRecord] = []
    for batch_index in range(budget):
        if len(records) >= N:
            break
        if batch_index in done:
            records.extend(done[batch_index])
            continue
        batch_rng = factory(batch_index)
        assignment = select_assignment(
            dataset.class_names(), focus, t, batch_rng, mixup_enabled=mixup_enabled
        )
        messages = build_generation_prompt(
            dataset,
            assignment,
            n_per_call,
            mixup_enabled=mixup_enabled,
            include_descriptions=include_descriptions,
        )
        completion, _ = backends.chat.complete(messages, params)
        digest = text_digest(completion)
        batch_records = [
            GenerationRecord(
                text=utterance,
                assignment=assignment,
                intended_label=focus,
                batch_index=batch_index,
                raw_completion_digest=digest,
            )
            for utterance in parse_generations(completion, n_per_call)
        ][: N - len(records)]
        if on_batch is not None:
            on_batch(batch_index, batch_records)
        records.extend(batch_records)
    return records[:N]
