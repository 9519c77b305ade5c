"""Verb-conditioned fusion of interaction attention with geometric part bases.

Pipeline per sample: aggregate attention layers, crop a ROI from the object
map, PCA-decompose the ROI features, score every part component (and its
negation) against the verb map with NSS, then multiply the winning rectified
projection into the verb map and smooth.

Scoring roles: the verb attention is the continuous saliency map; each
candidate component contributes the fixation mask (its top-quantile in-ROI
rectified values).  Candidate order is interleaved — (0,+), (0,-), (1,+),
(1,-), ... — so the argmax tie-break (lowest index, then positive sign)
falls out of a plain first-strict-maximum scan.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .errors import (
    AffordmapError,
    ArgumentError,
    NoViablePartError,
    ShapeMismatchError,
)
from .geometry import PartBasis, Roi, pca_decompose, roi_from_attention
from .interaction import aggregate_layers, gaussian_blur, normalize_01
from .tensor_io import SampleBundle

# blur_sigma is expressed in pixels at this reference resolution and scaled
# proportionally to the actual map height before use
REFERENCE_RESOLUTION = 224.0


@dataclass(frozen=True)
class FusionConfig:
    k: int = 3
    fixation_quantile: float = 0.8
    consider_negated_components: bool = True
    blur_sigma: float = 3.0
    roi_threshold: float = 0.4
    roi_margin: float = 0.1

    def __post_init__(self) -> None:
        if not 1 <= self.k <= 10:
            raise ArgumentError(f"k must lie in [1, 10], got {self.k}")
        if not 0.0 < self.fixation_quantile < 1.0:
            raise ArgumentError(f"fixation_quantile must lie in (0, 1), got {self.fixation_quantile}")
        if not 0.0 < self.roi_threshold < 1.0:
            raise ArgumentError(f"roi_threshold must lie in (0, 1), got {self.roi_threshold}")
        if not 0.0 <= self.roi_margin < 1.0:
            raise ArgumentError(f"roi_margin must lie in [0, 1), got {self.roi_margin}")
        if not self.blur_sigma >= 0.0:
            raise ArgumentError(f"blur_sigma must be >= 0, got {self.blur_sigma}")


INTERACTION_ONLY_SENTINEL = -1


@dataclass
class FusionResult:
    """Output of one pipeline run, intermediates retained for inspection.

    selected_component is -1 in interaction-only mode.  component_scores is
    ordered like the candidate scan: [c0+, c0-, c1+, c1-, ...] when negated
    components are considered, [c0+, c1+, ...] otherwise; excluded candidates
    hold -inf.
    """

    selected_component: int
    selected_sign: int
    component_scores: np.ndarray
    affordance_map: np.ndarray
    verb_map: np.ndarray
    part_map: np.ndarray
    roi: Roi | None = None
    basis: PartBasis | None = None
    config: FusionConfig = field(default_factory=FusionConfig)


@contextmanager
def _stage(name: str) -> Iterator[None]:
    # tag engine errors with the pipeline stage they escaped from
    try:
        yield
    except AffordmapError as exc:
        if exc.stage is None:
            exc.stage = name
        raise


def nss_score(saliency: np.ndarray, fixation_mask: np.ndarray) -> float:
    """Mean of the z-normalized saliency map at fixation pixels.

    Population (1/N) std; a near-constant saliency map (std < 1e-8) scores 0.
    """
    saliency = np.asarray(saliency, dtype=np.float64)
    fixation_mask = np.asarray(fixation_mask)
    if saliency.shape != fixation_mask.shape:
        raise ShapeMismatchError(
            f"saliency shape {saliency.shape} != fixation mask shape {fixation_mask.shape}"
        )
    if saliency.ndim != 2:
        raise ShapeMismatchError(f"saliency must be 2-D, got shape {saliency.shape}")
    if not np.isfinite(saliency).all():
        raise ArgumentError("saliency map contains non-finite values")
    fix = fixation_mask > 0
    if not fix.any():
        raise ArgumentError("fixation mask has no positive pixels")
    std = float(saliency.std())
    if std < 1e-8:
        return 0.0
    z = (saliency - saliency.mean()) / std
    return float(z[fix].mean())


def _candidates(k: int, negated: bool) -> list[tuple[int, int]]:
    if negated:
        return [(i, s) for i in range(k) for s in (1, -1)]
    return [(i, 1) for i in range(k)]


def select_component(
    basis: PartBasis, verb_map: np.ndarray, cfg: FusionConfig
) -> tuple[int, int, np.ndarray]:
    """Pick the part component whose top-quantile mask best predicts the verb map.

    Returns (index, sign, scores).  Components whose rectified projection is
    all-zero are excluded with a -inf score; if nothing survives, raises
    NoViablePartError.
    """
    verb_map = np.asarray(verb_map, dtype=np.float32)
    if verb_map.shape != basis.projections.shape[1:]:
        raise ShapeMismatchError(
            f"verb map shape {verb_map.shape} != projection grid {basis.projections.shape[1:]}"
        )
    cands = _candidates(basis.k, cfg.consider_negated_components)
    scores = np.full(len(cands), -np.inf, dtype=np.float32)
    roi = basis.roi
    best_idx: int | None = None
    for pos, (i, sign) in enumerate(cands):
        rect = np.maximum(basis.projections[i] * sign, 0.0)
        roi_vals = rect[roi.row0 : roi.row1, roi.col0 : roi.col1]
        if float(roi_vals.max()) <= 0.0:
            continue
        thresh = float(np.quantile(roi_vals, cfg.fixation_quantile))
        mask = (rect >= thresh) & (rect > 0)
        scores[pos] = nss_score(verb_map, mask)
        if best_idx is None or scores[pos] > scores[best_idx]:
            best_idx = pos
    if best_idx is None:
        raise NoViablePartError("every component's rectified projection is all-zero")
    index, sign = cands[best_idx]
    return index, sign, scores


def _fusion_norm(m: np.ndarray) -> np.ndarray:
    # like normalize_01, but a constant *positive* map acts as the
    # multiplicative identity instead of vanishing
    mn = float(m.min())
    mx = float(m.max())
    if mx == mn:
        return np.ones_like(m) if mx > 0 else np.zeros_like(m)
    return normalize_01(m)


def fuse(verb_map: np.ndarray, part_map: np.ndarray, cfg: FusionConfig) -> np.ndarray:
    """normalize(blur(normalize(verb) * normalize(part))) with cfg.blur_sigma."""
    verb_map = np.asarray(verb_map, dtype=np.float32)
    part_map = np.asarray(part_map, dtype=np.float32)
    if verb_map.shape != part_map.shape:
        raise ShapeMismatchError(
            f"verb map shape {verb_map.shape} != part map shape {part_map.shape}"
        )
    if verb_map.min() < 0 or part_map.min() < 0:
        raise ArgumentError("fuse expects non-negative maps")
    product = _fusion_norm(verb_map) * _fusion_norm(part_map)
    return normalize_01(gaussian_blur(product, cfg.blur_sigma))


def _scaled_sigma(cfg: FusionConfig, grid_h: int) -> float:
    return cfg.blur_sigma * grid_h / REFERENCE_RESOLUTION


def run_pipeline(
    bundle: SampleBundle, cfg: FusionConfig, layer_subset: list[int] | None = None
) -> FusionResult:
    """Full fusion chain on one sample bundle; deterministic in inputs + config.

    k is clamped to the legal maximum for the actual ROI/channel count so that
    small inputs still produce a result.  Errors carry the stage they arose in
    (aggregate, roi, pca, select, fuse).
    """
    with _stage("aggregate"):
        verb_map = aggregate_layers(bundle.attn_verb, layer_subset)
        obj_map = aggregate_layers(bundle.attn_object, layer_subset)
    with _stage("roi"):
        roi = roi_from_attention(obj_map, cfg.roi_threshold, cfg.roi_margin)
    with _stage("pca"):
        k_eff = min(cfg.k, bundle.features.shape[2], roi.area)
        basis = pca_decompose(bundle.features, roi, k_eff)
    with _stage("select"):
        index, sign, scores = select_component(basis, verb_map, cfg)
    with _stage("fuse"):
        part_map = np.maximum(basis.projections[index] * sign, 0.0).astype(np.float32)
        local = replace(cfg, blur_sigma=_scaled_sigma(cfg, verb_map.shape[0]))
        fused = fuse(verb_map, part_map, local)
    return FusionResult(
        selected_component=index,
        selected_sign=sign,
        component_scores=scores,
        affordance_map=fused,
        verb_map=verb_map,
        part_map=part_map,
        roi=roi,
        basis=basis,
        config=cfg,
    )


def run_interaction_only(
    bundle: SampleBundle, cfg: FusionConfig, layer_subset: list[int] | None = None
) -> FusionResult:
    """Geometry-free baseline: the processed verb map is the affordance map."""
    with _stage("aggregate"):
        verb_map = aggregate_layers(bundle.attn_verb, layer_subset)
    with _stage("fuse"):
        part_map = np.ones_like(verb_map)
        local = replace(cfg, blur_sigma=_scaled_sigma(cfg, verb_map.shape[0]))
        fused = fuse(verb_map, part_map, local)
    return FusionResult(
        selected_component=INTERACTION_ONLY_SENTINEL,
        selected_sign=1,
        component_scores=np.zeros(0, dtype=np.float32),
        affordance_map=fused,
        verb_map=verb_map,
        part_map=part_map,
        roi=None,
        basis=None,
        config=cfg,
    )
