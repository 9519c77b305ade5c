"""Training-free visual affordance heatmaps.

Composes part-level geometric prototypes (PCA over dense patch features)
with verb-conditioned cross-attention maps, scores candidate parts with NSS,
and evaluates fused heatmaps with KLD/SIM/NSS.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    AffordmapError,
    ArgumentError,
    CorruptError,
    DegenerateFeaturesError,
    DegenerateMapError,
    EmptyAttentionError,
    EmptyDatasetError,
    EngineError,
    EvaluationFailedError,
    FormatError,
    IoError,
    MissingInputError,
    NoViablePartError,
    ShapeMismatchError,
    ValidationError,
)
from .tensor_io import (
    SampleBundle,
    SampleMeta,
    load_ground_truth,
    load_meta,
    read_array,
    read_sample_bundle,
    write_array,
)
from .interaction import aggregate_layers, gaussian_blur, normalize_01, upsample_bilinear
from .geometry import (
    PartBasis,
    Roi,
    cosine_probe,
    pca_decompose,
    project_into_reference_basis,
    roi_from_attention,
)
from .fusion import (
    FusionConfig,
    FusionResult,
    fuse,
    nss_score,
    run_interaction_only,
    run_pipeline,
    select_component,
)
from .metrics import MetricTriple, kld, miou, nss_eval, sim
from .eval_harness import (
    DatasetIndex,
    EvalRecord,
    Report,
    emit_report,
    evaluate,
    index_dataset,
    render_overlay,
)

__all__ = [
    "__version__",
    # errors
    "AffordmapError", "ValidationError", "EngineError",
    "FormatError", "CorruptError", "MissingInputError", "ShapeMismatchError",
    "ArgumentError", "EmptyDatasetError", "IoError", "EmptyAttentionError",
    "DegenerateFeaturesError", "NoViablePartError", "DegenerateMapError",
    "EvaluationFailedError",
    # tensor io
    "read_array", "write_array", "read_sample_bundle", "load_meta",
    "load_ground_truth", "SampleMeta", "SampleBundle",
    # interaction
    "aggregate_layers", "upsample_bilinear", "normalize_01", "gaussian_blur",
    # geometry
    "Roi", "PartBasis", "roi_from_attention", "pca_decompose",
    "cosine_probe", "project_into_reference_basis",
    # fusion
    "FusionConfig", "FusionResult", "nss_score", "select_component",
    "fuse", "run_pipeline", "run_interaction_only",
    # metrics
    "MetricTriple", "kld", "sim", "nss_eval", "miou",
    # eval harness
    "DatasetIndex", "EvalRecord", "Report", "index_dataset", "evaluate",
    "emit_report", "render_overlay",
]
