"""Bundle exporter: dense ViT patch features + verb/object cross-attention."""

from .backends import (
    SyntheticAttentionBackend,
    SyntheticFeatureBackend,
    TorchEditAttentionBackend,
    TorchViTFeatureBackend,
    get_attention_backend,
    get_feature_backend,
    patch_grid_stats,
)
from .config import (
    DEFAULT_TIMESTEPS,
    FEATURES_FINAL,
    FEATURES_SPREAD4,
    LAYERS_ALL,
    ExtractionConfig,
    config_hash,
    resolve_layers,
)
from .errors import (
    ConfigError,
    ExtractError,
    ExtractionFailedError,
    InputError,
    ManifestMismatchError,
    ModelSetupError,
    PromptError,
    TokenAlignmentError,
    UsageError,
)
from .export import (
    ExportResult,
    TripletRow,
    export_dataset,
    extract_attention,
    extract_features,
    load_working_image,
    read_triplet_csv,
)
from .prompts import (
    DEFAULT_AGENT,
    DEFAULT_TEMPLATE,
    PromptTemplate,
    find_span,
    normalize_token,
    tokenize,
)

__version__ = "0.1.0"
