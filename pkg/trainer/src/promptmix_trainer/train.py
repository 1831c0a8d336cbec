"""Fine-tune a compact encoder classifier on an emitted dataset.

A linear classification head sits on the encoder's [CLS] representation
(AutoModelForSequenceClassification). Training runs a fixed number of epochs
with AdamW and no early stopping; results are deterministic per seed up to
framework nondeterminism.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import torch

logger = logging.getLogger(__name__)

LABELS_FILE = "label_space.json"


@dataclass(frozen=True)
class TrainConfig:
    model_id: str = "distilbert-base-uncased"
    epochs: int = 5
    learning_rate: float = 4e-5
    weight_decay: float = 1e-2
    batch_size: int = 16
    seed: int = 0
    max_length: int = 128

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        with Path(path).open("r", encoding="utf-8") as fh:
            raw = json.load(fh)
        unknown = set(raw) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class TrainResult:
    artifact_dir: Path
    labels: list[str]
    epoch_losses: list[float]
    train_accuracy: float


@dataclass
class EvalResult:
    accuracy: float
    per_class: dict[str, dict[str, int]]
    predictions: list[str]


def _load_model_and_tokenizer(model_id: str, num_labels: int):
    from transformers import AutoModelForSequenceClassification, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(model_id)
    model = AutoModelForSequenceClassification.from_pretrained(
        model_id, num_labels=num_labels, ignore_mismatched_sizes=True
    )
    return model, tokenizer


def _encode(tokenizer, texts: list[str], max_length: int):
    return tokenizer(
        texts, padding=True, truncation=True, max_length=max_length, return_tensors="pt"
    )


def train(train_file: str | Path, config: TrainConfig, out_dir: str | Path) -> TrainResult:
    """Fine-tune on the labeled file; saves model, tokenizer, and label space."""
    from .data import label_space, load_labeled_file

    pairs = load_labeled_file(train_file)
    labels = label_space(pairs)
    if len(labels) < 2:
        raise ValueError(f"need at least 2 classes to train, found {len(labels)}")
    label_to_id = {label: i for i, label in enumerate(labels)}

    torch.manual_seed(config.seed)
    model, tokenizer = _load_model_and_tokenizer(config.model_id, len(labels))
    encoded = _encode(tokenizer, [text for text, _ in pairs], config.max_length)
    targets = torch.tensor([label_to_id[label] for _, label in pairs])

    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    shuffler = torch.Generator().manual_seed(config.seed)
    model.train()
    epoch_losses: list[float] = []
    for epoch in range(config.epochs):
        order = torch.randperm(len(pairs), generator=shuffler)
        losses = []
        for start in range(0, len(pairs), config.batch_size):
            batch = order[start : start + config.batch_size]
            output = model(
                input_ids=encoded["input_ids"][batch],
                attention_mask=encoded["attention_mask"][batch],
                labels=targets[batch],
            )
            output.loss.backward()
            optimizer.step()
            optimizer.zero_grad()
            losses.append(float(output.loss.detach()))
        mean_loss = sum(losses) / len(losses)
        epoch_losses.append(mean_loss)
        logger.info("epoch %d/%d: loss %.4f", epoch + 1, config.epochs, mean_loss)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(out_dir)
    tokenizer.save_pretrained(out_dir)
    (out_dir / LABELS_FILE).write_text(json.dumps(labels))

    train_accuracy = _accuracy(model, encoded, targets, config.batch_size)
    return TrainResult(
        artifact_dir=out_dir,
        labels=labels,
        epoch_losses=epoch_losses,
        train_accuracy=train_accuracy,
    )


def _accuracy(model, encoded, targets: torch.Tensor, batch_size: int) -> float:
    model.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, len(targets), batch_size):
            logits = model(
                input_ids=encoded["input_ids"][start : start + batch_size],
                attention_mask=encoded["attention_mask"][start : start + batch_size],
            ).logits
            correct += int((logits.argmax(-1) == targets[start : start + batch_size]).sum())
    return correct / len(targets)


def evaluate(
    artifact_dir: str | Path, test_file: str | Path, *, batch_size: int = 32, max_length: int = 128
) -> EvalResult:
    """Accuracy and per-class report of a saved classifier on a labeled file."""
    from transformers import AutoModelForSequenceClassification, AutoTokenizer

    from .data import load_labeled_file

    artifact_dir = Path(artifact_dir)
    labels: list[str] = json.loads((artifact_dir / LABELS_FILE).read_text())
    pairs = load_labeled_file(test_file)
    if not pairs:
        raise ValueError(f"{test_file}: empty test file")
    unknown = sorted({label for _, label in pairs} - set(labels))
    if unknown:
        raise ValueError(f"test labels outside the model's label space: {unknown}")

    model = AutoModelForSequenceClassification.from_pretrained(artifact_dir)
    tokenizer = AutoTokenizer.from_pretrained(artifact_dir)
    model.eval()

    predictions: list[str] = []
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start : start + batch_size]
            encoded = _encode(tokenizer, [text for text, _ in chunk], max_length)
            logits = model(**encoded).logits
            predictions.extend(labels[i] for i in logits.argmax(-1).tolist())

    per_class: dict[str, dict[str, int]] = {
        label: {"support": 0, "correct": 0} for label in labels
    }
    correct = 0
    for (text, gold), predicted in zip(pairs, predictions):
        per_class[gold]["support"] += 1
        if predicted == gold:
            per_class[gold]["correct"] += 1
            correct += 1
    return EvalResult(
        accuracy=correct / len(pairs),
        per_class=per_class,
        predictions=predictions,
    )


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
