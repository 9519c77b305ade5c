"""Extraction configuration and its provenance hash.

Layer selections may be symbolic ("final", "spread4", "all") because the
concrete layer count belongs to the backend; they resolve to index tuples
once a backend is in hand.  The config hash keys the output manifest so a
tree can never silently mix settings.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

from .errors import ConfigError

FEATURES_FINAL = "final"
FEATURES_SPREAD4 = "spread4"
LAYERS_ALL = "all"
HEAD_REDUCE_MEAN = "mean"

# mid-denoising steps of a nominal schedule; recorded in meta.json rather
# than hidden, since different steps genuinely change the recorded maps
DEFAULT_TIMESTEPS = (10, 15, 20)

_FEATURE_PRESETS = (FEATURES_FINAL, FEATURES_SPREAD4, LAYERS_ALL)


@dataclass(frozen=True)
class ExtractionConfig:
    feature_layers: tuple[int, ...] | str = FEATURES_FINAL
    attn_layers: tuple[int, ...] | str = LAYERS_ALL
    timesteps: tuple[int, ...] = DEFAULT_TIMESTEPS
    head_reduce: str = HEAD_REDUCE_MEAN
    working_size: int = 224

    def __post_init__(self):
        for name, value, presets in (
            ("feature_layers", self.feature_layers, _FEATURE_PRESETS),
            ("attn_layers", self.attn_layers, (LAYERS_ALL,)),
        ):
            if isinstance(value, str):
                if value not in presets:
                    raise ConfigError(f"{name}: unknown preset {value!r}; use one of {presets}")
            else:
                object.__setattr__(self, name, tuple(int(x) for x in value))
                if len(getattr(self, name)) == 0:
                    raise ConfigError(f"{name}: at least one layer required")
        if len(self.timesteps) == 0:
            raise ConfigError("timesteps: at least one step required")
        object.__setattr__(self, "timesteps", tuple(int(t) for t in self.timesteps))
        if any(t < 0 for t in self.timesteps):
            raise ConfigError(f"timesteps must be non-negative, got {self.timesteps}")
        if self.head_reduce != HEAD_REDUCE_MEAN:
            raise ConfigError(f"head_reduce: only {HEAD_REDUCE_MEAN!r} is supported")
        if self.working_size < 16:
            raise ConfigError(f"working_size must be >= 16, got {self.working_size}")


def resolve_layers(selection: tuple[int, ...] | str, num_layers: int) -> tuple[int, ...]:
    """Turn a symbolic or explicit layer selection into concrete indices."""
    if num_layers < 1:
        raise ConfigError(f"backend reports {num_layers} layers")
    if selection == FEATURES_FINAL:
        return (num_layers - 1,)
    if selection == FEATURES_SPREAD4:
        if num_layers < 4:
            raise ConfigError(f"'{FEATURES_SPREAD4}' needs >= 4 layers, backend has {num_layers}")
        # equally spaced quarters ending at the final layer
        return tuple(round((i + 1) * num_layers / 4) - 1 for i in range(4))
    if selection == LAYERS_ALL:
        return tuple(range(num_layers))
    layers = tuple(int(x) for x in selection)
    bad = [x for x in layers if not 0 <= x < num_layers]
    if bad:
        raise ConfigError(f"layer indices {bad} out of range for {num_layers}-layer backend")
    if len(set(layers)) != len(layers):
        raise ConfigError(f"duplicate layer indices in {layers}")
    return layers


def config_hash(cfg: ExtractionConfig, feature_model: str, attn_model: str) -> str:
    """Short stable digest of everything that shapes the exported tensors."""
    payload = {
        "config": asdict(cfg),
        "feature_model": feature_model,
        "attn_model": attn_model,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]
