"""Run configuration: YAML loading, validation, hashing, backend construction.

The config file is a single YAML document with sections ``dataset``,
``generation``, ``relabel``, ``backends``, and ``run``. Unknown keys are
rejected so typos fail fast.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .backends import (
    Backends,
    CallLedger,
    CompletionParams,
    OpenAIChatBackend,
    OpenAIEmbeddingBackend,
    RateLimiter,
    RetryPolicy,
)

BACKEND_MODES = ("openai", "mock")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class BackendSettings:
    mode: str = "openai"
    base_url: str = "https://api.openai.com/v1"
    chat_model: str = "gpt-3.5-turbo-0613"
    embed_model: str = "all-mpnet-base-v2"
    temperature: float = 1.0
    max_tokens: int = 512
    max_in_flight: int = 4
    retries: int = 3
    requests_per_minute: float | None = None
    request_timeout: float = 60.0
    transcript: str | None = None
    crash_after_calls: int | None = None


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one augmentation run needs, minus the dataset content itself."""

    dataset_path: str
    N_per_class: int
    dataset_name: str | None = None
    zero_shot: bool = False
    n_per_call: int = 5
    t: int = 4
    mixup_enabled: bool = True
    include_descriptions: bool = True
    budget_factor: int = 3
    relabel_enabled: bool = True
    candidate_m: int = 5
    oos_tau: float = 0.35
    relabel_temperature: float = 0.0
    relabel_max_tokens: int = 64
    rng_seed: int = 0
    output_dir: str | None = None
    backends: BackendSettings = field(default_factory=BackendSettings)

    def validate(self) -> None:
        if self.N_per_class < 1:
            raise ConfigError(f"N_per_class must be >= 1, got {self.N_per_class}")
        if self.n_per_call < 1:
            raise ConfigError(f"n_per_call must be >= 1, got {self.n_per_call}")
        min_t = 2 if self.mixup_enabled else 1
        if self.t < min_t:
            raise ConfigError(
                f"t must be >= {min_t} (mixup {'enabled' if self.mixup_enabled else 'disabled'}),"
                f" got {self.t}"
            )
        if self.candidate_m < 1:
            raise ConfigError(f"candidate_m must be >= 1, got {self.candidate_m}")
        if not -1.0 <= self.oos_tau <= 1.0:
            raise ConfigError(f"oos_tau must be a cosine value in [-1, 1], got {self.oos_tau}")
        if self.budget_factor < 1:
            raise ConfigError(f"budget_factor must be >= 1, got {self.budget_factor}")
        if self.backends.mode not in BACKEND_MODES:
            raise ConfigError(
                f"backends.mode must be one of {BACKEND_MODES}, got {self.backends.mode!r}"
            )
        if self.backends.retries < 1:
            raise ConfigError(f"backends.retries must be >= 1, got {self.backends.retries}")
        if self.backends.max_in_flight < 1:
            raise ConfigError(
                f"backends.max_in_flight must be >= 1, got {self.backends.max_in_flight}"
            )

    def to_sections(self) -> dict:
        return {
            "dataset": {
                "path": self.dataset_path,
                "name": self.dataset_name,
                "zero_shot": self.zero_shot,
            },
            "generation": {
                "N_per_class": self.N_per_class,
                "n_per_call": self.n_per_call,
                "t": self.t,
                "mixup_enabled": self.mixup_enabled,
                "include_descriptions": self.include_descriptions,
                "budget_factor": self.budget_factor,
            },
            "relabel": {
                "enabled": self.relabel_enabled,
                "candidate_m": self.candidate_m,
                "oos_tau": self.oos_tau,
                "temperature": self.relabel_temperature,
                "max_tokens": self.relabel_max_tokens,
            },
            "backends": {
                "mode": self.backends.mode,
                "base_url": self.backends.base_url,
                "chat_model": self.backends.chat_model,
                "embed_model": self.backends.embed_model,
                "temperature": self.backends.temperature,
                "max_tokens": self.backends.max_tokens,
                "max_in_flight": self.backends.max_in_flight,
                "retries": self.backends.retries,
                "requests_per_minute": self.backends.requests_per_minute,
                "request_timeout": self.backends.request_timeout,
                "transcript": self.backends.transcript,
                "crash_after_calls": self.backends.crash_after_calls,
            },
            "run": {"seed": self.rng_seed, "output_dir": self.output_dir},
        }


_SECTION_KEYS = {
    "dataset": {"path", "name", "zero_shot"},
    "generation": {
        "N_per_class",
        "n_per_call",
        "t",
        "mixup_enabled",
        "include_descriptions",
        "budget_factor",
    },
    "relabel": {"enabled", "candidate_m", "oos_tau", "temperature", "max_tokens"},
    "backends": {
        "mode",
        "base_url",
        "chat_model",
        "embed_model",
        "temperature",
        "max_tokens",
        "max_in_flight",
        "retries",
        "requests_per_minute",
        "request_timeout",
        "transcript",
        "crash_after_calls",
    },
    "run": {"seed", "output_dir"},
}


def _check_keys(section: str, mapping: dict) -> None:
    unknown = set(mapping) - _SECTION_KEYS[section]
    if unknown:
        raise ConfigError(f"unknown keys in section {section!r}: {sorted(unknown)}")


def config_from_sections(sections: dict) -> PipelineConfig:
    if not isinstance(sections, dict):
        raise ConfigError("config must be a mapping of sections")
    unknown = set(sections) - set(_SECTION_KEYS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    dataset = sections.get("dataset") or {}
    generation = sections.get("generation") or {}
    relabel = sections.get("relabel") or {}
    backends = sections.get("backends") or {}
    run = sections.get("run") or {}
    for name, mapping in (
        ("dataset", dataset),
        ("generation", generation),
        ("relabel", relabel),
        ("backends", backends),
        ("run", run),
    ):
        if not isinstance(mapping, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        _check_keys(name, mapping)
    if "path" not in dataset:
        raise ConfigError("dataset.path is required")
    if "N_per_class" not in generation:
        raise ConfigError("generation.N_per_class is required")
    defaults = BackendSettings()
    settings = BackendSettings(
        mode=backends.get("mode", defaults.mode),
        base_url=backends.get("base_url", defaults.base_url),
        chat_model=backends.get("chat_model", defaults.chat_model),
        embed_model=backends.get("embed_model", defaults.embed_model),
        temperature=float(backends.get("temperature", defaults.temperature)),
        max_tokens=int(backends.get("max_tokens", defaults.max_tokens)),
        max_in_flight=int(backends.get("max_in_flight", defaults.max_in_flight)),
        retries=int(backends.get("retries", defaults.retries)),
        requests_per_minute=backends.get("requests_per_minute"),
        request_timeout=float(backends.get("request_timeout", defaults.request_timeout)),
        transcript=backends.get("transcript"),
        crash_after_calls=backends.get("crash_after_calls"),
    )
    config = PipelineConfig(
        dataset_path=str(dataset["path"]),
        dataset_name=dataset.get("name"),
        zero_shot=bool(dataset.get("zero_shot", False)),
        N_per_class=int(generation["N_per_class"]),
        n_per_call=int(generation.get("n_per_call", 5)),
        t=int(generation.get("t", 4)),
        mixup_enabled=bool(generation.get("mixup_enabled", True)),
        include_descriptions=bool(generation.get("include_descriptions", True)),
        budget_factor=int(generation.get("budget_factor", 3)),
        relabel_enabled=bool(relabel.get("enabled", True)),
        candidate_m=int(relabel.get("candidate_m", 5)),
        oos_tau=float(relabel.get("oos_tau", 0.35)),
        relabel_temperature=float(relabel.get("temperature", 0.0)),
        relabel_max_tokens=int(relabel.get("max_tokens", 64)),
        rng_seed=int(run.get("seed", 0)),
        output_dir=run.get("output_dir"),
        backends=settings,
    )
    config.validate()
    return config


def load_config(path: str | Path) -> PipelineConfig:
    with Path(path).open("r", encoding="utf-8") as fh:
        sections = yaml.safe_load(fh)
    config = config_from_sections(sections or {})
    # relative paths in the file resolve against the file's directory
    base = Path(path).resolve().parent
    updates: dict = {}
    if config.dataset_path and not Path(config.dataset_path).is_absolute():
        updates["dataset_path"] = str(base / config.dataset_path)
    if config.output_dir and not Path(config.output_dir).is_absolute():
        updates["output_dir"] = str(base / config.output_dir)
    if config.backends.transcript and not Path(config.backends.transcript).is_absolute():
        updates["backends"] = replace(
            config.backends, transcript=str(base / config.backends.transcript)
        )
    return replace(config, **updates) if updates else config


def config_hash(config: PipelineConfig) -> str:
    """Hash of every semantic knob.

    run.output_dir is excluded so a moved output directory still resumes, and
    backends.crash_after_calls is excluded because fault injection is resume
    scaffolding, not part of what the run computes.
    """
    sections = config.to_sections()
    sections["run"] = {k: v for k, v in sections["run"].items() if k != "output_dir"}
    sections["backends"] = {
        k: v for k, v in sections["backends"].items() if k != "crash_after_calls"
    }
    payload = json.dumps(sections, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def build_backends(config: PipelineConfig) -> Backends:
    settings = config.backends
    if settings.mode == "mock":
        if not settings.transcript:
            raise ConfigError("backends.transcript is required in mock mode")
        return Backends.offline(
            settings.transcript, crash_after_calls=settings.crash_after_calls
        )
    ledger = CallLedger()
    retry = RetryPolicy(max_attempts=settings.retries)
    limiter = RateLimiter(settings.requests_per_minute)
    chat = OpenAIChatBackend(
        settings.base_url,
        ledger=ledger,
        retry=retry,
        rate_limiter=limiter,
        max_in_flight=settings.max_in_flight,
    )
    embedder = OpenAIEmbeddingBackend(
        settings.base_url,
        settings.embed_model,
        request_timeout=settings.request_timeout,
        ledger=ledger,
        retry=retry,
        rate_limiter=limiter,
        max_in_flight=settings.max_in_flight,
    )
    return Backends(chat=chat, embedder=embedder, ledger=ledger)


def generation_params(config: PipelineConfig) -> CompletionParams:
    return CompletionParams(
        model=config.backends.chat_model,
        temperature=config.backends.temperature,
        max_tokens=config.backends.max_tokens,
        request_timeout=config.backends.request_timeout,
    )


def relabel_params(config: PipelineConfig) -> CompletionParams:
    return CompletionParams(
        model=config.backends.chat_model,
        temperature=config.relabel_temperature,
        max_tokens=config.relabel_max_tokens,
        request_timeout=config.backends.request_timeout,
    )
