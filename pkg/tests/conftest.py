"""Shared synthetic fixtures: feature grids, attention stacks, bundle trees."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from affordmap.interaction import normalize_01, upsample_bilinear
from affordmap.tensor_io import write_array

GRID = 16
CHANNELS = 8
# grid-coordinate regions of the synthetic "mug": the object body and the
# handle part the verb attention concentrates on
BODY = (slice(3, 13), slice(3, 13))
HANDLE = (slice(6, 10), slice(3, 6))
HANDLE_CENTER = (7.5, 4.0)


def mug_arrays(seed: int = 7, grid: int = GRID, channels: int = CHANNELS):
    """Features with a distinct handle cluster + handle-localized verb attention.

    Returns (features [g,g,C], attn_verb [2,g,g], attn_object [2,g,g]).
    """
    rng = np.random.default_rng(seed)
    feats = rng.normal(0.0, 0.02, size=(grid, grid, channels)).astype(np.float32)
    v_body = np.zeros(channels, np.float32)
    v_body[0] = 1.0
    v_handle = np.zeros(channels, np.float32)
    v_handle[0] = 0.3
    v_handle[1] = 1.2
    feats[BODY] += v_body
    feats[HANDLE] += v_handle - v_body

    attn_obj = np.zeros((grid, grid), np.float32)
    attn_obj[BODY] = 1.0
    yy, xx = np.mgrid[0:grid, 0:grid]
    cy, cx = HANDLE_CENTER
    attn_verb = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 2.5**2)).astype(np.float32)
    return feats, np.stack([attn_verb, attn_verb]), np.stack([attn_obj, attn_obj])


def write_bundle(
    bundle_dir: Path,
    features: np.ndarray,
    attn_verb: np.ndarray,
    attn_object: np.ndarray,
    verb: str = "hold",
    obj: str = "mug",
    **meta_overrides,
) -> Path:
    bundle_dir = Path(bundle_dir)
    bundle_dir.mkdir(parents=True, exist_ok=True)
    write_array(bundle_dir / "features.npy", features)
    write_array(bundle_dir / "attn_verb.npy", attn_verb)
    write_array(bundle_dir / "attn_object.npy", attn_object)
    meta = {
        "image_path": "image.jpg",
        "verb": verb,
        "object": obj,
        "prompt": f"add a hand to {verb} the {obj}",
        "layer_ids": list(range(attn_verb.shape[0])),
        "grid_h": features.shape[0],
        "grid_w": features.shape[1],
        "source_model": "synthetic",
    }
    meta.update(meta_overrides)
    (bundle_dir / "meta.json").write_text(json.dumps(meta), encoding="utf-8")
    return bundle_dir


def make_dataset(root: Path, n: int, seed0: int = 100, gt_size: int = 48) -> Path:
    """Flat-layout dataset of n mug samples with verb-map-derived gt.npy files."""
    root = Path(root)
    for i in range(n):
        feats, sv, so = mug_arrays(seed=seed0 + i)
        d = write_bundle(root / "hold" / "mug" / f"img_{i:03d}", feats, sv, so)
        gt = upsample_bilinear(normalize_01(sv.mean(axis=0)), gt_size, gt_size)
        write_array(d / "gt.npy", gt)
    return root


def mass_fraction(m: np.ndarray, region) -> float:
    return float(m[region].sum()) / float(m.sum())


@pytest.fixture
def mug_bundle(tmp_path: Path) -> Path:
    feats, sv, so = mug_arrays()
    return write_bundle(tmp_path / "bundle", feats, sv, so)
