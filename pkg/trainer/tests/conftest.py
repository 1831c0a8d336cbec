from __future__ import annotations

import json
import os
import random
from pathlib import Path

import pytest

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")
os.environ.setdefault("TOKENIZERS_PARALLELISM", "false")

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criterion check")
    import transformers

    transformers.utils.logging.set_verbosity_error()
    transformers.utils.logging.disable_progress_bar()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and item.get_closest_marker("acceptance"):
        label = item.get_closest_marker("acceptance").kwargs.get("label", item.name)
        _ACCEPTANCE_RESULTS.append((label, report.outcome.upper()))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label, outcome in _ACCEPTANCE_RESULTS:
        status = "PASS" if outcome == "PASSED" else outcome
        terminalreporter.write_line(f"{status}  {label}")


def build_tiny_model_dir(out_dir: Path, corpus: list[str], num_labels: int = 2) -> Path:
    """Save a small randomly initialized encoder + word-level tokenizer.

    Stands in for a hub checkpoint in offline tests; train() loads it through
    the same local-path route users can point model_id at.
    """
    from tokenizers import Tokenizer, models, normalizers, pre_tokenizers
    from tokenizers.processors import TemplateProcessing
    from transformers import (
        DistilBertConfig,
        DistilBertForSequenceClassification,
        PreTrainedTokenizerFast,
    )

    vocab = {"[PAD]": 0, "[UNK]": 1, "[CLS]": 2, "[SEP]": 3}
    for line in corpus:
        for token in line.lower().split():
            vocab.setdefault(token, len(vocab))
    tokenizer = Tokenizer(models.WordLevel(vocab, unk_token="[UNK]"))
    tokenizer.normalizer = normalizers.Lowercase()
    tokenizer.pre_tokenizer = pre_tokenizers.Whitespace()
    tokenizer.post_processor = TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B [SEP]",
        special_tokens=[("[CLS]", 2), ("[SEP]", 3)],
    )
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tokenizer,
        pad_token="[PAD]",
        unk_token="[UNK]",
        cls_token="[CLS]",
        sep_token="[SEP]",
    )
    config = DistilBertConfig(
        vocab_size=len(vocab),
        dim=64,
        n_layers=2,
        n_heads=2,
        hidden_dim=128,
        max_position_embeddings=64,
        num_labels=num_labels,
    )
    import torch

    torch.manual_seed(0)
    model = DistilBertForSequenceClassification(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(out_dir)
    fast.save_pretrained(out_dir)
    return out_dir


def write_examples(path: Path, pairs: list[tuple[str, str]], origin: str = "seed") -> Path:
    lines = []
    for text, label in pairs:
        record = {"text": text, "label": label, "origin": origin}
        if origin == "generated":
            record["provenance"] = {
                "majority_class": label,
                "minority_class": None,
                "alpha": None,
                "resolved_from": label,
            }
        lines.append(json.dumps(record, ensure_ascii=False))
    path.write_text("\n".join(lines) + "\n")
    return path


class TopicWorld:
    """Synthetic text universe: each class owns a disjoint token pool, split
    into a clean half (A) and a reserved half (B) for false-positive noise."""

    def __init__(self, n_classes: int, seed: int = 0):
        self.n_classes = n_classes
        self.rng = random.Random(seed)

    def class_name(self, i: int) -> str:
        return f"topic_{i}"

    def sentence(self, i: int, group: str) -> str:
        offsets = range(6) if group == "A" else range(6, 12)
        pool = [f"topic{i}word{j}" for j in offsets]
        return "please " + " ".join(self.rng.sample(pool, 4))

    def true_class_of(self, text: str) -> str:
        token = text.split()[1]  # every content token encodes its class
        return self.class_name(int(token.removeprefix("topic").split("word")[0]))

    def corpus_tokens(self) -> list[str]:
        return [
            f"topic{i}word{j}" for i in range(self.n_classes) for j in range(12)
        ] + ["please"]
