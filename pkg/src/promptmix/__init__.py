"""PromptMix: borderline-example augmentation and relabeling for few-shot
text classification."""

from .backends import (
    BackendCall,
    BackendError,
    Backends,
    ChatMessage,
    CompletionParams,
    EmbeddingVector,
    HashedTokenEmbedder,
    MalformedResponseError,
    OpenAIChatBackend,
    OpenAIEmbeddingBackend,
    PermanentError,
    TranscriptChatBackend,
    TransientError,
    cosine,
    messages_digest,
)
from .classify import EvaluationReport, evaluate_accuracy, nn_classify
from .config import BackendSettings, ConfigError, PipelineConfig, build_backends, load_config
from .data import (
    ClassSpec,
    DatasetParseError,
    DatasetSpec,
    DatasetValidationError,
    LabeledExample,
    Provenance,
    RelabelStats,
    compute_relabel_stats,
    emit_dataset,
    load_dataset,
    load_examples,
    reduce_to_kshot,
    validate_labels,
)
from .mixgen import (
    ALPHA_GRID,
    AlphaSampler,
    GenerationRecord,
    MixupAssignment,
    build_generation_prompt,
    generate_for_class,
    parse_generations,
    sample_alpha,
    select_assignment,
)
from .pipeline import (
    AugmentedDataset,
    ConfigDriftError,
    PipelineError,
    RunManifest,
    resume,
    run_augmentation,
)
from .relabel import (
    ClassEmbeddingIndex,
    RelabelRecord,
    build_index,
    build_relabel_prompt,
    rank_candidates,
    relabel_all,
    resolve_prediction,
)

__version__ = "0.1.0"
