"""Shared test machinery: rule-driven offline backends and toy datasets."""
from __future__ import annotations

import re
from typing import Callable, Sequence

from promptmix.backends import (
    BackendCall,
    Backends,
    CallLedger,
    ChatMessage,
    CompletionParams,
    CrashSwitch,
    EmbeddingVector,
    HashedTokenEmbedder,
    messages_digest,
    text_digest,
)
from promptmix.data import ClassSpec, DatasetSpec

GENERATION_RE = re.compile(
    r'Generate (\d+) new example utterances that belong '
    r'(?:(\d+)% to the class "([^"]+)" and \d+% to the class "([^"]+)"'
    r'|to the class "([^"]+)")'
)
SENTENCE_RE = re.compile(r"^Sentence: (.*)$", re.MULTILINE)
CANDIDATE_RE = re.compile(r"^Class name: (.*)$", re.MULTILINE)


def generation_request(messages: Sequence[ChatMessage]) -> tuple[int, str, str | None] | None:
    """(n, majority, minority) when the prompt is a generation prompt."""
    match = GENERATION_RE.search(messages[-1].content)
    if not match:
        return None
    n = int(match.group(1))
    majority = match.group(3) or match.group(5)
    minority = match.group(4)
    return n, majority, minority


def relabel_request(messages: Sequence[ChatMessage]) -> tuple[str, list[str]] | None:
    """(sentence, candidates) when the prompt is a relabel/classify prompt."""
    content = messages[-1].content
    sentence = SENTENCE_RE.search(content)
    if not sentence:
        return None
    return sentence.group(1), CANDIDATE_RE.findall(content)


def default_rule(messages: Sequence[ChatMessage]) -> str:
    """Generation prompts get n parseable numbered lines; relabel prompts get
    the intended class when present among candidates, else the first one."""
    generation = generation_request(messages)
    if generation is not None:
        n, majority, _ = generation
        digest = messages_digest(messages)[:8]
        return "\n".join(
            f"{i + 1}. sample utterance about {majority} case {digest} variant {i}"
            for i in range(n)
        )
    relabel = relabel_request(messages)
    if relabel is not None:
        sentence, candidates = relabel
        for candidate in candidates:
            if candidate.replace("_", " ") in sentence or candidate in sentence:
                return candidate
        return candidates[0]
    raise AssertionError(f"rule backend got an unrecognized prompt:\n{messages[-1].content}")


class RuleChatBackend:
    """Deterministic chat mock driven by a rule over the prompt text."""

    def __init__(
        self,
        ledger: CallLedger,
        rule: Callable[[Sequence[ChatMessage]], str] = default_rule,
        crash_switch: CrashSwitch | None = None,
    ) -> None:
        self.ledger = ledger
        self.rule = rule
        self._crash = crash_switch

    def complete(
        self, messages: Sequence[ChatMessage], params: CompletionParams
    ) -> tuple[str, BackendCall]:
        if self._crash is not None:
            self._crash.tick()
        text = self.rule(messages).rstrip()
        call = BackendCall(
            kind="chat",
            request_digest=messages_digest(messages),
            response_digest=text_digest(text),
            latency=0.0,
            prompt_tokens=sum(len(m.content.split()) for m in messages),
            completion_tokens=len(text.split()),
            attempt_count=1,
        )
        self.ledger.record(call)
        return text, call


class RecordingChatBackend:
    """Wraps a chat backend, capturing digest -> response for transcript replay."""

    def __init__(self, inner) -> None:
        self.inner = inner
        self.transcript: dict[str, str] = {}

    def complete(self, messages, params):
        text, call = self.inner.complete(messages, params)
        self.transcript[messages_digest(messages)] = text
        return text, call


class ScriptedEmbedder:
    """Strict text -> preset vector mapping; unknown text is a test bug."""

    def __init__(self, vectors: dict[str, Sequence[float]], ledger: CallLedger) -> None:
        self.vectors = dict(vectors)
        self.ledger = ledger

    def embed(self, text: str) -> EmbeddingVector:
        if text not in self.vectors:
            raise AssertionError(f"scripted embedder has no vector for {text!r}")
        values = self.vectors[text]
        norm = sum(v * v for v in values) ** 0.5
        vector = EmbeddingVector(tuple(v / norm for v in values))
        self.ledger.record(
            BackendCall(
                kind="embed",
                request_digest=text_digest(text),
                response_digest="scripted",
                latency=0.0,
                prompt_tokens=0,
                completion_tokens=0,
                attempt_count=1,
            )
        )
        return vector


def rule_backends(
    rule: Callable[[Sequence[ChatMessage]], str] = default_rule,
    crash_after_calls: int | None = None,
) -> Backends:
    ledger = CallLedger()
    crash = CrashSwitch(crash_after_calls) if crash_after_calls is not None else None
    return Backends(
        chat=RuleChatBackend(ledger, rule, crash_switch=crash),
        embedder=HashedTokenEmbedder(ledger=ledger, crash_switch=crash),
        ledger=ledger,
    )


def scripted_backends(
    vectors: dict[str, Sequence[float]],
    rule: Callable[[Sequence[ChatMessage]], str] = default_rule,
) -> Backends:
    ledger = CallLedger()
    return Backends(
        chat=RuleChatBackend(ledger, rule),
        embedder=ScriptedEmbedder(vectors, ledger),
        ledger=ledger,
    )


BANK_CLASSES = (
    ClassSpec(
        "age_limit",
        "Questions about age requirements for opening or holding a bank account.",
        (
            "Can my teenage son open his own account?",
            "What is the minimum age for a current account?",
        ),
    ),
    ClassSpec(
        "atm_support",
        "Questions about using, finding, or getting help with ATMs.",
        (
            "Where is the nearest ATM I can use?",
            "The ATM did not give me a receipt, what do I do?",
        ),
    ),
    ClassSpec(
        "card_arrival",
        "Questions about when and how a newly ordered card will arrive.",
        (
            "When will my new card get here?",
            "My replacement card has not arrived yet, can you track it?",
        ),
    ),
    ClassSpec(
        "exchange_rate",
        "Questions about currency exchange rates applied to transactions.",
        (
            "What exchange rate do you use for euro payments?",
            "Why did my transfer use a worse exchange rate than advertised?",
        ),
    ),
)


def bank_dataset() -> DatasetSpec:
    return DatasetSpec("banking_toy", BANK_CLASSES)


def two_class_dataset() -> DatasetSpec:
    return DatasetSpec("banking_pair", BANK_CLASSES[:2])


def many_class_dataset(n_classes: int, k: int = 2, name: str = "wide") -> DatasetSpec:
    classes = []
    for i in range(n_classes):
        seeds = tuple(f"seed number {j} about topic area {i:03d}" for j in range(k))
        classes.append(
            ClassSpec(
                name=f"intent_{i:03d}",
                description=f"Requests and questions concerning topic area {i:03d}.",
                seed_examples=seeds,
            )
        )
    return DatasetSpec(name, tuple(classes))


def zero_shot_dataset() -> DatasetSpec:
    classes = tuple(
        ClassSpec(cls.name, cls.description, ()) for cls in BANK_CLASSES
    )
    return DatasetSpec("banking_zero", classes)
