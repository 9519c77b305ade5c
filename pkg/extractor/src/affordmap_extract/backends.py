"""Feature and attention backends.

The synthetic pair is fully deterministic and model-free: features are a
fixed random lift of per-patch color statistics, verb attention is color
affinity to a verb-keyed anchor, object attention is saturation (a stand-in
for foreground saliency).  They exist so the full export/eval loop runs at
desk scale; the torch-backed pair wraps real checkpoints and refuses loudly
when torch or weights are absent.
"""

from __future__ import annotations

import colorsys
import hashlib
import os
from pathlib import Path

import numpy as np

from .errors import ConfigError, ModelSetupError

_PATCH = 16


def _seeded_rng(*key: object) -> np.random.Generator:
    digest = hashlib.sha256("\x1f".join(str(k) for k in key).encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def patch_grid_stats(image: np.ndarray, patch: int) -> np.ndarray:
    """[S,S,3] image in [0,1] -> [H,W,7] per-patch stats.

    Channels: mean RGB (3), std RGB (3), mean absolute horizontal gradient (1).
    """
    s = image.shape[0]
    if image.ndim != 3 or image.shape[1] != s or image.shape[2] != 3:
        raise ConfigError(f"expected square [S,S,3] image, got {image.shape}")
    if s % patch != 0:
        raise ConfigError(f"image side {s} not divisible by patch size {patch}")
    h = s // patch
    tiles = image.reshape(h, patch, h, patch, 3).transpose(0, 2, 1, 3, 4)
    mean = tiles.mean(axis=(2, 3))
    std = tiles.std(axis=(2, 3))
    grad = np.abs(np.diff(tiles, axis=3)).mean(axis=(2, 3, 4), keepdims=False)
    return np.concatenate([mean, std, grad[..., None]], axis=-1)


class SyntheticFeatureBackend:
    """Deterministic stand-in for a dense self-supervised ViT."""

    name = "synthetic-vit-s16"
    num_layers = 12
    patch_size = _PATCH
    channels = 32

    def features(self, image: np.ndarray, layer_ids: tuple[int, ...]) -> np.ndarray:
        """[S,S,3] -> [H,W,C] float32; multi-layer selections are mean-fused."""
        stats = patch_grid_stats(image, self.patch_size)
        acc = np.zeros((*stats.shape[:2], self.channels), dtype=np.float64)
        for layer in layer_ids:
            rng = _seeded_rng("synthetic-vit", layer)
            w = rng.normal(size=(stats.shape[-1], self.channels))
            b = rng.normal(scale=0.1, size=self.channels)
            acc += np.tanh(stats @ w + b) * (1.0 + 0.05 * layer)
        return (acc / len(layer_ids)).astype(np.float32)


class SyntheticAttentionBackend:
    """Deterministic stand-in for cross-attention recording in an editor.

    Verb attention peaks where patch color matches a verb-keyed anchor hue,
    with a uniform floor so maps stay diffuse the way real attention is;
    object attention follows saturation.  Layers, timesteps, and heads each
    perturb the sharpness deterministically before the head mean is taken.
    """

    name = "synthetic-edit"
    num_layers = 8
    num_heads = 4
    patch_size = _PATCH
    _FLOOR = 0.12
    _SIGMA = 0.18

    @staticmethod
    def verb_anchor_color(phrase: str) -> tuple[float, float, float]:
        digest = hashlib.sha256(f"anchor:{phrase}".encode("utf-8")).digest()
        hue = int.from_bytes(digest[:4], "little") / 2**32
        return colorsys.hsv_to_rgb(hue, 1.0, 1.0)

    def _verb_map(self, mean_rgb: np.ndarray, phrase: str, layer: int, timesteps) -> np.ndarray:
        anchor = np.asarray(self.verb_anchor_color(phrase))
        d2 = ((mean_rgb - anchor) ** 2).sum(axis=-1)
        acc = np.zeros(d2.shape, dtype=np.float64)
        for t in timesteps:
            sigma = self._SIGMA * (1.0 + 0.015 * t)
            base = np.exp(-d2 / (2.0 * sigma * sigma))
            for head in range(self.num_heads):
                power = 1.0 + 0.06 * layer + 0.03 * head
                acc += self._FLOOR + (1.0 - self._FLOOR) * base**power
        return acc / (len(timesteps) * self.num_heads)

    def _object_map(self, mean_rgb: np.ndarray, layer: int, timesteps) -> np.ndarray:
        sat = mean_rgb.max(axis=-1) - mean_rgb.min(axis=-1)
        acc = np.zeros(sat.shape, dtype=np.float64)
        for t in timesteps:
            for head in range(self.num_heads):
                power = 1.0 + 0.05 * layer + 0.02 * head + 0.01 * t
                acc += sat**power
        return acc / (len(timesteps) * self.num_heads)

    def attention(
        self,
        image: np.ndarray,
        tokens: list[str],
        verb_span: tuple[int, int],
        object_span: tuple[int, int],
        layer_ids: tuple[int, ...],
        timesteps: tuple[int, ...],
    ) -> tuple[np.ndarray, np.ndarray]:
        """Returns (attn_verb, attn_object), each [L,H,W] float32 non-negative."""
        mean_rgb = patch_grid_stats(image, self.patch_size)[..., :3]
        verb_phrase = " ".join(tokens[verb_span[0] : verb_span[1]])
        av = np.stack([self._verb_map(mean_rgb, verb_phrase, l, timesteps) for l in layer_ids])
        ao = np.stack([self._object_map(mean_rgb, l, timesteps) for l in layer_ids])
        return av.astype(np.float32), ao.astype(np.float32)


def _require_torch(backend: str, extra_hint: str):
    try:
        import torch
    except ImportError as exc:
        raise ModelSetupError(
            f"{backend} backend requires torch: pip install 'affordmap-extract[torch]'. "
            f"{extra_hint}"
        ) from exc
    return torch


def _require_weights(backend: str, env_var: str) -> Path:
    path = os.environ.get(env_var, "")
    if not path or not Path(path).is_file():
        raise ModelSetupError(
            f"{backend} backend needs local weights: download a TorchScript export of the "
            f"model and point {env_var} at the .pt file (no network fetch is attempted)"
        )
    return Path(path)


class TorchViTFeatureBackend:
    """Dense patch features from a TorchScript ViT export.

    The scripted module must map a [1,3,S,S] float tensor to [H,W,C] patch
    features with class/register tokens already dropped.
    """

    name = "torch-vit"
    patch_size = _PATCH

    def __init__(self):
        torch = _require_torch(self.name, "Set AFFORDMAP_VIT_WEIGHTS to the checkpoint.")
        self._torch = torch
        self._model = torch.jit.load(_require_weights(self.name, "AFFORDMAP_VIT_WEIGHTS"))
        self._model.eval()
        self.num_layers = int(getattr(self._model, "num_layers", 12))

    def features(self, image: np.ndarray, layer_ids: tuple[int, ...]) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            x = torch.from_numpy(image.astype(np.float32)).permute(2, 0, 1)[None]
            out = self._model(x, torch.tensor(list(layer_ids)))
        return np.asarray(out, dtype=np.float32)


class TorchEditAttentionBackend:
    """Cross-attention stacks from a TorchScript editing-model export.

    The scripted module must accept (image, token_ids, span starts/ends,
    layer ids, timesteps) and return head-meaned [L,H,W] stacks for the verb
    and object spans.
    """

    name = "torch-edit"
    patch_size = _PATCH

    def __init__(self):
        torch = _require_torch(self.name, "Set AFFORDMAP_EDIT_WEIGHTS to the checkpoint.")
        self._torch = torch
        self._model = torch.jit.load(_require_weights(self.name, "AFFORDMAP_EDIT_WEIGHTS"))
        self._model.eval()
        self.num_layers = int(getattr(self._model, "num_layers", 8))

    def attention(self, image, tokens, verb_span, object_span, layer_ids, timesteps):
        torch = self._torch
        with torch.no_grad():
            x = torch.from_numpy(image.astype(np.float32)).permute(2, 0, 1)[None]
            av, ao = self._model(
                x,
                [" ".join(tokens)],
                torch.tensor([*verb_span, *object_span]),
                torch.tensor(list(layer_ids)),
                torch.tensor(list(timesteps)),
            )
        return np.asarray(av, dtype=np.float32), np.asarray(ao, dtype=np.float32)


_FEATURE_BACKENDS = {
    "synthetic": SyntheticFeatureBackend,
    "torch-vit": TorchViTFeatureBackend,
}
_ATTENTION_BACKENDS = {
    "synthetic": SyntheticAttentionBackend,
    "torch-edit": TorchEditAttentionBackend,
}


def get_feature_backend(name: str):
    if name not in _FEATURE_BACKENDS:
        raise ConfigError(f"unknown feature backend {name!r}; have {sorted(_FEATURE_BACKENDS)}")
    return _FEATURE_BACKENDS[name]()


def get_attention_backend(name: str):
    if name not in _ATTENTION_BACKENDS:
        raise ConfigError(f"unknown attention backend {name!r}; have {sorted(_ATTENTION_BACKENDS)}")
    return _ATTENTION_BACKENDS[name]()
