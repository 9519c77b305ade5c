"""Attention-map post-processing: layer aggregation, resizing, normalization, blur.

A SpatialMap is plain ``float32 [h, w]``; an AttentionStack is ``float32
[layers, h, w]`` with non-negative, head-averaged values.  Everything here is
a pure function of its arguments.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .errors import ArgumentError, ShapeMismatchError


def _require_map(m: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2:
        raise ShapeMismatchError(f"{name}: expected a 2-D map, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ArgumentError(f"{name}: map contains non-finite values")
    return m.astype(np.float32, copy=False)


def aggregate_layers(stack: np.ndarray, layer_subset: list[int] | None = None) -> np.ndarray:
    """Mean over selected layers of an [L, h, w] attention stack.

    ``layer_subset`` of None means all layers; indices must lie in [0, L).
    """
    stack = np.asarray(stack, dtype=np.float32)
    if stack.ndim != 3:
        raise ShapeMismatchError(f"attention stack must be [layers, h, w], got shape {stack.shape}")
    layers = stack.shape[0]
    if layers < 1:
        raise ShapeMismatchError("attention stack needs at least one layer")
    if layer_subset is None:
        sel = list(range(layers))
    else:
        sel = [int(i) for i in layer_subset]
        if not sel:
            raise ArgumentError("layer subset must not be empty")
        bad = [i for i in sel if not 0 <= i < layers]
        if bad:
            raise ArgumentError(f"layer indices {bad} out of range for {layers} layers")
    return stack[sel].mean(axis=0, dtype=np.float64).astype(np.float32)


def upsample_bilinear(m: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers (align-corners-false) and edge clamp."""
    m = _require_map(m, "map")
    out_h, out_w = int(out_h), int(out_w)
    if out_h < 1 or out_w < 1:
        raise ArgumentError(f"output size must be positive, got {out_h}x{out_w}")
    in_h, in_w = m.shape
    if (out_h, out_w) == (in_h, in_w):
        return m.copy()

    src_r = (np.arange(out_h, dtype=np.float64) + 0.5) * (in_h / out_h) - 0.5
    src_c = (np.arange(out_w, dtype=np.float64) + 0.5) * (in_w / out_w) - 0.5
    r0 = np.floor(src_r)
    c0 = np.floor(src_c)
    fr = (src_r - r0)[:, None]
    fc = (src_c - c0)[None, :]
    # clamping both neighbor indices reproduces edge-pixel replication at the borders
    r0i = np.clip(r0.astype(np.int64), 0, in_h - 1)
    r1i = np.clip(r0.astype(np.int64) + 1, 0, in_h - 1)
    c0i = np.clip(c0.astype(np.int64), 0, in_w - 1)
    c1i = np.clip(c0.astype(np.int64) + 1, 0, in_w - 1)

    m64 = m.astype(np.float64)
    top = m64[np.ix_(r0i, c0i)] * (1.0 - fc) + m64[np.ix_(r0i, c1i)] * fc
    bot = m64[np.ix_(r1i, c0i)] * (1.0 - fc) + m64[np.ix_(r1i, c1i)] * fc
    return (top * (1.0 - fr) + bot * fr).astype(np.float32)


def normalize_01(m: np.ndarray) -> np.ndarray:
    """Min-max stretch to [0, 1]; constant maps collapse to all-zeros."""
    m = _require_map(m, "map")
    mn = float(m.min())
    mx = float(m.max())
    if mx == mn:
        return np.zeros_like(m)
    return ((m - mn) / (mx - mn)).astype(np.float32)


def gaussian_blur(m: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian, kernel radius ceil(3*sigma), reflect-padded borders.

    sigma 0 is the identity.  The half-sample symmetric border (cv2's
    BORDER_REFLECT / np.pad 'symmetric') conserves total mass exactly for a
    normalized symmetric kernel, which the metrics downstream rely on.
    """
    m = _require_map(m, "map")
    sigma = float(sigma)
    if not math.isfinite(sigma) or sigma < 0:
        raise ArgumentError(f"sigma must be finite and >= 0, got {sigma}")
    if sigma == 0.0:
        return m.copy()
    radius = math.ceil(3.0 * sigma)
    out = ndimage.gaussian_filter(
        m.astype(np.float64), sigma=sigma, mode="reflect", radius=radius
    )
    return out.astype(np.float32)
