"""Style and dialect sentence representation learning at desk scale.

The package learns sentence embeddings that track linguistic form rather
than content: weak supervision comes from a proximity hierarchy over
provenance metadata (same comment > same author > same community >
cross-community) combined with binary linguistic features. On top of the
representations it ships similarity scoring, classification baselines,
and an embedding-alignment objective for supervised fine-tuning of a
language model.
"""

__version__ = "0.1.0"

from .corpus import (
    CorpusSplit,
    SentenceRecord,
    ingest_and_filter,
    load_corpus,
    proximity_score,
    split_by_author,
    write_corpus_jsonl,
)
from .encoder import (
    EncoderConfig,
    RunningMean,
    Vocab,
    center_and_normalize,
    encode_layers,
    layer_attention_pool,
)
from .errors import ConfigError, DataError, IdlxError, NumericError, UsageError
from .features import (
    FeatureCache,
    FeatureInventory,
    FeatureVector,
    extract_llm,
    extract_rules,
    jaccard,
    load_inventory,
)
from .objectives import (
    LossBreakdown,
    LossConfig,
    combined_objective,
    feature_bce_loss,
    margin_ranking_loss,
    margin_schedule,
    supcon_loss,
    variance_decorrelation_loss,
)
from .sampler import ProximityBatch, assemble_training_batch, sample_anchor_group
from .synth import SynthConfig, generate_corpus, synthetic_inventory
from .trainer import (
    TrainConfig,
    TrainState,
    embed_corpus,
    init_train_state,
    load_train_state,
    run_feature_stage,
    run_pretrain_stage,
    save_train_state,
    validate,
)

__all__ = [
    "CorpusSplit", "SentenceRecord", "ingest_and_filter", "load_corpus",
    "proximity_score", "split_by_author", "write_corpus_jsonl",
    "EncoderConfig", "RunningMean", "Vocab", "center_and_normalize",
    "encode_layers", "layer_attention_pool",
    "IdlxError", "UsageError", "DataError", "ConfigError", "NumericError",
    "FeatureCache", "FeatureInventory", "FeatureVector",
    "extract_llm", "extract_rules", "jaccard", "load_inventory",
    "LossBreakdown", "LossConfig", "combined_objective", "feature_bce_loss",
    "margin_ranking_loss", "margin_schedule", "supcon_loss",
    "variance_decorrelation_loss",
    "ProximityBatch", "assemble_training_batch", "sample_anchor_group",
    "SynthConfig", "generate_corpus", "synthetic_inventory",
    "TrainConfig", "TrainState", "embed_corpus", "init_train_state",
    "load_train_state", "run_feature_stage", "run_pretrain_stage",
    "save_train_state", "validate",
]
