"""Batch evaluation over exported sample bundles with ground-truth heatmaps.

Dataset layout (one directory per sample):

    root/{seen|unseen}/<verb>/<object>/<image_id>/
        features.npy  attn_verb.npy  attn_object.npy  meta.json
        gt.npy | gt.png            ground truth at image resolution
        image.jpg | image.png      optional, enables overlay rendering

A root without seen/unseen subdirectories is treated as a single flat split —
handy for synthetic corpora.  Indexing validates every bundle up front and
skips broken ones with a warning; evaluation metrics are computed at ground
truth resolution with the prediction bilinearly upsampled.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    AffordmapError,
    ArgumentError,
    EmptyDatasetError,
    EvaluationFailedError,
    IoError,
    MissingInputError,
)
from .fusion import FusionConfig, FusionResult, run_interaction_only, run_pipeline
from .interaction import normalize_01, upsample_bilinear
from .metrics import MetricTriple, kld, nss_eval, sim
from .tensor_io import load_ground_truth, read_sample_bundle

log = logging.getLogger("affordmap.eval")

MODE_INTERACTION_ONLY = "interaction_only"
MODE_FUSION = "interaction_x_geometry"
MODES = (MODE_INTERACTION_ONLY, MODE_FUSION)

_GT_NAMES = ("gt.npy", "gt.png")
_IMAGE_NAMES = ("image.jpg", "image.png", "image.jpeg")


@dataclass(frozen=True)
class SampleRef:
    split: str
    verb: str
    object: str
    image_id: str
    bundle_dir: Path
    gt_path: Path


@dataclass
class DatasetIndex:
    root: Path
    split: str
    samples: list[SampleRef]
    warnings: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class EvalRecord:
    verb: str
    object: str
    image_id: str
    metrics: MetricTriple
    selected_component: int
    elapsed_ms: float


@dataclass(frozen=True)
class FailureRecord:
    verb: str
    object: str
    image_id: str
    error: str


@dataclass
class Report:
    per_sample: list[EvalRecord]
    per_pair_macro: dict[tuple[str, str], MetricTriple]
    micro: MetricTriple
    config_echo: FusionConfig
    mode: str
    failures: list[FailureRecord] = field(default_factory=list)


def _find_one(directory: Path, names: tuple[str, ...]) -> Path | None:
    for name in names:
        cand = directory / name
        if cand.is_file():
            return cand
    return None


def _iter_split_dirs(root: Path) -> list[tuple[str, Path]]:
    named = [(s, root / s) for s in ("seen", "unseen") if (root / s).is_dir()]
    if named:
        return named
    return [("flat", root)]


def index_dataset(root: str | Path, split: str | None = None) -> DatasetIndex:
    """Walk the tree, validate every bundle, return a sorted deterministic index.

    ``split`` restricts to "seen" or "unseen"; default indexes whatever is
    present.  Bundles that fail validation or lack ground truth are skipped
    with a warning, never silently.
    """
    root = Path(root)
    if not root.is_dir():
        raise MissingInputError(f"dataset root not found: {root}")
    split_dirs = _iter_split_dirs(root)
    if split is not None:
        split_dirs = [(s, d) for s, d in split_dirs if s == split]
        if not split_dirs:
            raise ArgumentError(f"split {split!r} not present under {root}")

    samples: list[SampleRef] = []
    warnings: list[str] = []
    for split_name, split_dir in split_dirs:
        for verb_dir in sorted(p for p in split_dir.iterdir() if p.is_dir()):
            for obj_dir in sorted(p for p in verb_dir.iterdir() if p.is_dir()):
                for sample_dir in sorted(p for p in obj_dir.iterdir() if p.is_dir()):
                    key = f"{split_name}/{verb_dir.name}/{obj_dir.name}/{sample_dir.name}"
                    gt_path = _find_one(sample_dir, _GT_NAMES)
                    if gt_path is None:
                        warnings.append(f"{key}: no ground truth (gt.npy or gt.png), skipped")
                        continue
                    try:
                        read_sample_bundle(sample_dir)
                    except AffordmapError as exc:
                        warnings.append(f"{key}: invalid bundle ({exc}), skipped")
                        continue
                    samples.append(
                        SampleRef(
                            split=split_name,
                            verb=verb_dir.name,
                            object=obj_dir.name,
                            image_id=sample_dir.name,
                            bundle_dir=sample_dir,
                            gt_path=gt_path,
                        )
                    )
    for w in warnings:
        log.warning("%s", w)
    if not samples:
        raise EmptyDatasetError(f"no valid samples under {root}")
    samples.sort(key=lambda s: (s.split, s.verb, s.object, s.image_id))
    split_label = "+".join(sorted({s.split for s in samples}))
    return DatasetIndex(root=root, split=split_label, samples=samples, warnings=warnings)


def _run_mode(bundle, cfg: FusionConfig, mode: str, layer_subset) -> FusionResult:
    if mode == MODE_INTERACTION_ONLY:
        return run_interaction_only(bundle, cfg, layer_subset)
    return run_pipeline(bundle, cfg, layer_subset)


def _evaluate_one(
    sample: SampleRef,
    cfg: FusionConfig,
    mode: str,
    layer_subset,
    fixation_threshold: float,
    overlay_dir: Path | None,
    overlay_alpha: float,
) -> EvalRecord | FailureRecord:
    start = time.perf_counter()
    try:
        bundle = read_sample_bundle(sample.bundle_dir)
        result = _run_mode(bundle, cfg, mode, layer_subset)
        gt = load_ground_truth(sample.gt_path)
        pred = upsample_bilinear(result.affordance_map, gt.shape[0], gt.shape[1])
        triple = MetricTriple(
            kld=kld(pred, gt),
            sim=sim(pred, gt),
            nss=nss_eval(pred, gt, fixation_threshold),
        )
        if overlay_dir is not None:
            image_path = _find_one(sample.bundle_dir, _IMAGE_NAMES)
            if image_path is not None:
                with Image.open(image_path) as img:
                    rgb = np.asarray(img.convert("RGB"))
                over = render_overlay(rgb, pred, overlay_alpha)
                out_name = f"{sample.verb}_{sample.object}_{sample.image_id}.png"
                Image.fromarray(over).save(overlay_dir / out_name)
    except AffordmapError as exc:
        return FailureRecord(sample.verb, sample.object, sample.image_id, exc.describe())
    except OSError as exc:
        return FailureRecord(sample.verb, sample.object, sample.image_id, f"io: {exc}")
    elapsed_ms = (time.perf_counter() - start) * 1000.0
    return EvalRecord(
        verb=sample.verb,
        object=sample.object,
        image_id=sample.image_id,
        metrics=triple,
        selected_component=result.selected_component,
        elapsed_ms=elapsed_ms,
    )


def _mean_triple(triples: list[MetricTriple]) -> MetricTriple:
    return MetricTriple(
        kld=float(np.mean([t.kld for t in triples])),
        sim=float(np.mean([t.sim for t in triples])),
        nss=float(np.mean([t.nss for t in triples])),
    )


def evaluate(
    index: DatasetIndex,
    cfg: FusionConfig,
    mode: str = MODE_FUSION,
    jobs: int = 1,
    layer_subset: list[int] | None = None,
    fixation_threshold: float = 0.5,
    overlay_dir: str | Path | None = None,
    overlay_alpha: float = 0.6,
) -> Report:
    """Run the pipeline over every indexed sample and aggregate metric means.

    Workers only ever touch their own sample's files, so a thread pool of any
    size yields identical numbers; aggregation happens over the sorted index
    order after all workers finish.  Per-sample failures are recorded and
    excluded from the means.
    """
    if mode not in MODES:
        raise ArgumentError(f"mode must be one of {MODES}, got {mode!r}")
    if jobs < 1:
        raise ArgumentError(f"jobs must be >= 1, got {jobs}")
    if overlay_dir is not None:
        overlay_dir = Path(overlay_dir)
        overlay_dir.mkdir(parents=True, exist_ok=True)

    def worker(sample: SampleRef) -> EvalRecord | FailureRecord:
        return _evaluate_one(
            sample, cfg, mode, layer_subset, fixation_threshold, overlay_dir, overlay_alpha
        )

    if jobs == 1:
        outcomes = [worker(s) for s in index.samples]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(worker, index.samples))

    records = [o for o in outcomes if isinstance(o, EvalRecord)]
    failures = [o for o in outcomes if isinstance(o, FailureRecord)]
    for f in failures:
        log.warning("sample %s/%s/%s failed: %s", f.verb, f.object, f.image_id, f.error)
    if not records:
        raise EvaluationFailedError(
            f"all {len(index.samples)} samples failed to evaluate"
        )

    micro = _mean_triple([r.metrics for r in records])
    pairs: dict[tuple[str, str], list[MetricTriple]] = {}
    for r in records:
        pairs.setdefault((r.verb, r.object), []).append(r.metrics)
    per_pair_macro = {pair: _mean_triple(ts) for pair, ts in sorted(pairs.items())}
    return Report(
        per_sample=records,
        per_pair_macro=per_pair_macro,
        micro=micro,
        config_echo=cfg,
        mode=mode,
        failures=failures,
    )


def _f6(x: float) -> float:
    # fixed 6-decimal formatting, shared by JSON and CSV output
    return float(f"{float(x):.6f}")


def report_to_json_dict(report: Report) -> dict:
    """Deterministic JSON structure; timings are deliberately excluded so the
    file is byte-stable across worker counts and machine speeds."""
    cfg = report.config_echo
    return {
        "mode": report.mode,
        "config": {
            "k": cfg.k,
            "fixation_quantile": cfg.fixation_quantile,
            "consider_negated_components": cfg.consider_negated_components,
            "blur_sigma": cfg.blur_sigma,
            "roi_threshold": cfg.roi_threshold,
            "roi_margin": cfg.roi_margin,
        },
        "n_samples": len(report.per_sample),
        "n_failures": len(report.failures),
        "micro": {
            "kld": _f6(report.micro.kld),
            "sim": _f6(report.micro.sim),
            "nss": _f6(report.micro.nss),
        },
        "per_pair_macro": [
            {
                "verb": verb,
                "object": obj,
                "kld": _f6(t.kld),
                "sim": _f6(t.sim),
                "nss": _f6(t.nss),
            }
            for (verb, obj), t in report.per_pair_macro.items()
        ],
        "per_sample": [
            {
                "verb": r.verb,
                "object": r.object,
                "image_id": r.image_id,
                "kld": _f6(r.metrics.kld),
                "sim": _f6(r.metrics.sim),
                "nss": _f6(r.metrics.nss),
                "component": r.selected_component,
            }
            for r in report.per_sample
        ],
        "failures": [
            {"verb": f.verb, "object": f.object, "image_id": f.image_id, "error": f.error}
            for f in report.failures
        ],
    }


def emit_report(report: Report, out_dir: str | Path, formats: set[str] = frozenset({"json", "csv"})) -> None:
    """Write report.json and/or report.csv with stable field order."""
    bad = set(formats) - {"json", "csv"}
    if bad:
        raise ArgumentError(f"unknown report formats: {sorted(bad)}")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if "json" in formats:
            payload = json.dumps(report_to_json_dict(report), indent=2) + "\n"
            (out_dir / "report.json").write_text(payload, encoding="utf-8")
        if "csv" in formats:
            lines = ["verb,object,image_id,kld,sim,nss,component,ms"]
            for r in report.per_sample:
                lines.append(
                    f"{r.verb},{r.object},{r.image_id},"
                    f"{r.metrics.kld:.6f},{r.metrics.sim:.6f},{r.metrics.nss:.6f},"
                    f"{r.selected_component},{r.elapsed_ms:.6f}"
                )
            (out_dir / "report.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write report to {out_dir}: {exc}") from exc


def jet_colormap(m: np.ndarray) -> np.ndarray:
    """Piecewise-linear jet: [..., 3] float RGB in [0, 1] for m in [0, 1]."""
    m = np.asarray(m, dtype=np.float64)
    r = np.clip(1.5 - np.abs(4.0 * m - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * m - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * m - 1.0), 0.0, 1.0)
    return np.stack([r, g, b], axis=-1)


def diverging_colormap(m: np.ndarray) -> np.ndarray:
    """Blue-white-red map for signed data in [-1, 1] (negative=blue, positive=red)."""
    m = np.clip(np.asarray(m, dtype=np.float64), -1.0, 1.0)
    r = np.clip(1.0 + np.minimum(m, 0.0), 0.0, 1.0)
    g = 1.0 - np.abs(m)
    b = np.clip(1.0 - np.maximum(m, 0.0), 0.0, 1.0)
    return np.stack([r, g, b], axis=-1)


def render_overlay(image: np.ndarray, heat: np.ndarray, alpha: float) -> np.ndarray:
    """Blend a jet-colored heatmap over an RGB uint8 image.

    out = (1 - alpha*m) * image + alpha*m * colormap(m), with m the map
    normalized to [0, 1] and resized to the image if needed.  alpha 0 returns
    the image unchanged.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ArgumentError(f"image must be [H, W, 3], got shape {image.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ArgumentError(f"alpha must lie in [0, 1], got {alpha}")
    h, w = image.shape[:2]
    heat = np.asarray(heat, dtype=np.float32)
    if heat.shape != (h, w):
        heat = upsample_bilinear(heat, h, w)
    m = normalize_01(heat).astype(np.float64)
    color = jet_colormap(m) * 255.0
    blend = (1.0 - alpha * m)[..., None] * image.astype(np.float64) + (alpha * m)[..., None] * color
    return np.clip(np.rint(blend), 0, 255).astype(np.uint8)
