"""Part-level geometric prototypes from dense patch features.

The central object is a PartBasis: the top-k PCA directions over the patch
vectors inside an attention-derived region of interest, together with their
signed projection maps.  PCA lives on mean-centered raw features with the
1/N covariance convention; eigenvector sign is pinned by requiring that each
component's maximum-|value| in-ROI projection be positive, so results are
bit-stable across runs and platforms.

Every public operation bumps ``OP_CALLS[<name>]`` — the evaluation harness
uses the counter to prove that interaction-only scoring never enters this
module.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import (
    ArgumentError,
    DegenerateFeaturesError,
    EmptyAttentionError,
    FormatError,
    ShapeMismatchError,
)
from .tensor_io import read_array, write_array

OP_CALLS: Counter[str] = Counter()

# 4-connectivity for component labeling
_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

MIN_ROI_AREA = 4


@dataclass(frozen=True)
class Roi:
    """Half-open grid box [row0, row1) x [col0, col1); area >= 4 patches."""

    row0: int
    col0: int
    row1: int
    col1: int

    def __post_init__(self) -> None:
        if not (0 <= self.row0 < self.row1 and 0 <= self.col0 < self.col1):
            raise ArgumentError(f"degenerate roi bounds {self}")
        if self.area < MIN_ROI_AREA:
            raise ArgumentError(f"roi area {self.area} below minimum {MIN_ROI_AREA}")

    @property
    def height(self) -> int:
        return self.row1 - self.row0

    @property
    def width(self) -> int:
        return self.col1 - self.col0

    @property
    def area(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class PartBasis:
    """Top-k PCA basis over ROI patch features.

    directions: [k, channels] orthonormal rows; explained_var: [k] descending
    (1/N eigenvalues); projections: [k, grid_h, grid_w] signed scores, zero
    outside the ROI.  The ROI is carried along because component selection
    takes quantiles over in-ROI values only.
    """

    k: int
    directions: np.ndarray
    explained_var: np.ndarray
    mean_vec: np.ndarray
    projections: np.ndarray
    roi: Roi

    @property
    def channels(self) -> int:
        return self.directions.shape[1]


def _require_features(features: np.ndarray) -> np.ndarray:
    features = np.asarray(features)
    if features.ndim != 3:
        raise ShapeMismatchError(f"features must be [H, W, C], got shape {features.shape}")
    if features.shape[2] < 2:
        raise ShapeMismatchError(f"features need >= 2 channels, got {features.shape[2]}")
    if not np.isfinite(features).all():
        raise ArgumentError("features contain non-finite values")
    return features.astype(np.float32, copy=False)


def _grow_to_min_area(r0: int, c0: int, r1: int, c1: int, grid_h: int, grid_w: int) -> tuple[int, int, int, int]:
    # grow the smaller dimension (ties: rows), high side first, until area >= 4
    while (r1 - r0) * (c1 - c0) < MIN_ROI_AREA:
        grow_rows = (r1 - r0) <= (c1 - c0)
        if grow_rows and r1 - r0 >= grid_h:
            grow_rows = False
        if not grow_rows and c1 - c0 >= grid_w:
            if r1 - r0 >= grid_h:
                raise ArgumentError(
                    f"grid {grid_h}x{grid_w} too small to host a roi of area >= {MIN_ROI_AREA}"
                )
            grow_rows = True
        if grow_rows:
            if r1 < grid_h:
                r1 += 1
            else:
                r0 -= 1
        else:
            if c1 < grid_w:
                c1 += 1
            else:
                c0 -= 1
    return r0, c0, r1, c1


def roi_from_attention(obj_attn: np.ndarray, rel_threshold: float = 0.4, margin: float = 0.1) -> Roi:
    """Bounding box of the largest 4-connected blob of high object attention.

    Pixels >= rel_threshold * max(obj_attn) are kept (scale-invariant), the
    largest component's box is expanded by margin * (box side) per side,
    clamped to the grid, then grown to the minimum legal area if needed.
    """
    OP_CALLS["roi_from_attention"] += 1
    obj_attn = np.asarray(obj_attn, dtype=np.float32)
    if obj_attn.ndim != 2:
        raise ShapeMismatchError(f"attention map must be 2-D, got shape {obj_attn.shape}")
    if not np.isfinite(obj_attn).all():
        raise ArgumentError("attention map contains non-finite values")
    if obj_attn.min() < 0:
        raise ArgumentError("attention map must be non-negative")
    if not 0.0 < rel_threshold < 1.0:
        raise ArgumentError(f"rel_threshold must lie in (0, 1), got {rel_threshold}")
    if margin < 0:
        raise ArgumentError(f"margin must be >= 0, got {margin}")
    peak = float(obj_attn.max())
    if peak <= 0.0:
        raise EmptyAttentionError("object attention is all-zero; cannot derive a roi")

    mask = obj_attn >= rel_threshold * peak
    labels, _ = ndimage.label(mask, structure=_CROSS)
    sizes = np.bincount(labels.ravel())[1:]
    best = int(np.argmax(sizes)) + 1  # ties: first label in scan order
    rows, cols = np.nonzero(labels == best)
    r0, r1 = int(rows.min()), int(rows.max()) + 1
    c0, c1 = int(cols.min()), int(cols.max()) + 1

    grid_h, grid_w = obj_attn.shape
    er = math.floor(margin * (r1 - r0) + 0.5)
    ec = math.floor(margin * (c1 - c0) + 0.5)
    r0 = max(0, r0 - er)
    r1 = min(grid_h, r1 + er)
    c0 = max(0, c0 - ec)
    c1 = min(grid_w, c1 + ec)
    r0, c0, r1, c1 = _grow_to_min_area(r0, c0, r1, c1, grid_h, grid_w)
    return Roi(r0, c0, r1, c1)


def _check_roi_in_grid(roi: Roi, grid_h: int, grid_w: int) -> None:
    if roi.row1 > grid_h or roi.col1 > grid_w:
        raise ShapeMismatchError(f"roi {roi} exceeds grid {grid_h}x{grid_w}")


def pca_decompose(features: np.ndarray, roi: Roi, k: int) -> PartBasis:
    """Top-k PCA of mean-centered ROI patch vectors (1/N covariance).

    Implemented through the thin SVD of the centered data matrix; the test
    suite checks it against a dense covariance eigendecomposition.  Each
    direction is sign-flipped so its largest-|value| in-ROI projection is
    positive.
    """
    OP_CALLS["pca_decompose"] += 1
    features = _require_features(features)
    grid_h, grid_w, channels = features.shape
    _check_roi_in_grid(roi, grid_h, grid_w)
    n = roi.area
    k = int(k)
    if not 1 <= k <= min(channels, n):
        raise ArgumentError(f"k={k} out of range [1, {min(channels, n)}] for {n} patches x {channels} channels")

    patch = features[roi.row0 : roi.row1, roi.col0 : roi.col1].reshape(n, channels).astype(np.float64)
    mean_vec = patch.mean(axis=0)
    centered = patch - mean_vec
    if float((centered**2).sum()) / n < 1e-18:
        raise DegenerateFeaturesError("all roi patch vectors are identical; no variance to decompose")

    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    eigvals = (singular**2) / n
    directions = vt[:k].copy()
    proj = centered @ directions.T  # [n, k]
    for i in range(k):
        anchor = int(np.argmax(np.abs(proj[:, i])))
        if proj[anchor, i] < 0:
            directions[i] = -directions[i]
            proj[:, i] = -proj[:, i]

    projections = np.zeros((k, grid_h, grid_w), dtype=np.float32)
    projections[:, roi.row0 : roi.row1, roi.col0 : roi.col1] = (
        proj.T.reshape(k, roi.height, roi.width).astype(np.float32)
    )
    return PartBasis(
        k=k,
        directions=directions.astype(np.float32),
        explained_var=eigvals[:k].astype(np.float32),
        mean_vec=mean_vec.astype(np.float32),
        projections=projections,
        roi=roi,
    )


def cosine_probe(features: np.ndarray, probe: np.ndarray) -> np.ndarray:
    """Signed per-patch cosine similarity to a probe vector, in [-1, 1].

    Zero-norm patches map to similarity 0 by convention.
    """
    OP_CALLS["cosine_probe"] += 1
    features = _require_features(features)
    probe = np.asarray(probe, dtype=np.float64).reshape(-1)
    if probe.shape[0] != features.shape[2]:
        raise ShapeMismatchError(
            f"probe has {probe.shape[0]} channels, features have {features.shape[2]}"
        )
    pnorm = float(np.linalg.norm(probe))
    if pnorm < 1e-12:
        raise ArgumentError("probe vector has zero norm")

    flat = features.reshape(-1, features.shape[2]).astype(np.float64)
    norms = np.linalg.norm(flat, axis=1)
    dots = flat @ probe
    out = np.zeros(flat.shape[0], dtype=np.float64)
    nz = norms > 0
    out[nz] = dots[nz] / (norms[nz] * pnorm)
    return np.clip(out, -1.0, 1.0).reshape(features.shape[:2]).astype(np.float32)


def project_into_reference_basis(features: np.ndarray, basis: PartBasis) -> np.ndarray:
    """Full-grid signed projections of arbitrary features onto a reference basis."""
    OP_CALLS["project_into_reference_basis"] += 1
    features = _require_features(features)
    if features.shape[2] != basis.channels:
        raise ShapeMismatchError(
            f"features have {features.shape[2]} channels, basis expects {basis.channels}"
        )
    centered = features.astype(np.float64) - basis.mean_vec.astype(np.float64)
    out = centered @ basis.directions.astype(np.float64).T  # [H, W, k]
    return np.moveaxis(out, 2, 0).astype(np.float32)


def save_basis(basis: PartBasis, npy_path: str | Path, json_path: str | Path) -> None:
    """Serialize directions ++ eigenvalues into one flat array plus a JSON sidecar."""
    flat = np.concatenate([basis.directions.ravel(), basis.explained_var]).astype(np.float32)
    write_array(npy_path, flat)
    sidecar = {
        "k": basis.k,
        "channels": basis.channels,
        "directions_offset": 0,
        "directions_shape": [basis.k, basis.channels],
        "explained_var_offset": basis.k * basis.channels,
        "explained_var_shape": [basis.k],
        "mean_vec": [float(v) for v in basis.mean_vec],
        "roi": [basis.roi.row0, basis.roi.col0, basis.roi.row1, basis.roi.col1],
    }
    Path(json_path).write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")


def load_basis(npy_path: str | Path, json_path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, Roi]:
    """Inverse of save_basis: returns (directions, explained_var, mean_vec, roi)."""
    flat = read_array(npy_path)
    try:
        sidecar = json.loads(Path(json_path).read_text(encoding="utf-8"))
        k, channels = int(sidecar["k"]), int(sidecar["channels"])
        off = int(sidecar["explained_var_offset"])
        directions = flat[:off].reshape(k, channels)
        explained_var = flat[off : off + k]
        mean_vec = np.asarray(sidecar["mean_vec"], dtype=np.float32)
        roi = Roi(*(int(v) for v in sidecar["roi"]))
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{json_path}: malformed basis sidecar: {exc}") from exc
    return directions, explained_var, mean_vec, roi
