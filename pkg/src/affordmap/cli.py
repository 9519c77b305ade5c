"""Command-line entry point: fuse, eval, pca-inspect, probe-sim, overlay.

Exit codes: 0 success, 1 runtime failure, 2 usage/validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .errors import AffordmapError, ArgumentError, EngineError, ValidationError
from .eval_harness import (
    MODE_FUSION,
    MODE_INTERACTION_ONLY,
    diverging_colormap,
    emit_report,
    evaluate,
    index_dataset,
    render_overlay,
)
from .fusion import FusionConfig, run_interaction_only, run_pipeline
from .geometry import pca_decompose, cosine_probe, roi_from_attention, save_basis
from .interaction import aggregate_layers, upsample_bilinear
from .tensor_io import read_array, read_sample_bundle, write_array

log = logging.getLogger("affordmap.cli")

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    level = _LOG_LEVELS.get(os.environ.get("AFFORDMAP_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("affordmap").setLevel(level)


def _parse_layers(spec: str | None) -> list[int] | None:
    if spec is None or spec == "all":
        return None
    try:
        return [int(tok) for tok in spec.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ArgumentError(f"--layers expects comma-separated integers, got {spec!r}") from exc


def _add_fusion_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=3, help="number of PCA components (default 3)")
    p.add_argument("--fixation-quantile", type=float, default=0.8,
                   help="in-ROI quantile that binarizes a component into fixations (default 0.8)")
    p.add_argument("--sigma", type=float, default=3.0,
                   help="blur sigma in pixels at 224-px reference resolution (default 3.0)")
    p.add_argument("--roi-threshold", type=float, default=0.4,
                   help="relative attention threshold for the ROI crop (default 0.4)")
    p.add_argument("--roi-margin", type=float, default=0.1,
                   help="ROI expansion as a fraction of the box side (default 0.1)")
    p.add_argument("--no-negated-components", action="store_true",
                   help="score only the positive lobe of each component")
    p.add_argument("--layers", default=None,
                   help="comma-separated attention layer indices (default: all)")


def _config_from_args(args: argparse.Namespace) -> FusionConfig:
    return FusionConfig(
        k=args.k,
        fixation_quantile=args.fixation_quantile,
        consider_negated_components=not args.no_negated_components,
        blur_sigma=args.sigma,
        roi_threshold=args.roi_threshold,
        roi_margin=args.roi_margin,
    )


def _load_image(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def _bundle_image(bundle_dir: Path, grid_h: int, grid_w: int) -> np.ndarray:
    for name in ("image.jpg", "image.png", "image.jpeg"):
        cand = bundle_dir / name
        if cand.is_file():
            return _load_image(cand)
    # no source image shipped with the bundle: render on a black canvas
    return np.zeros((grid_h * 8, grid_w * 8, 3), dtype=np.uint8)


def _say(args: argparse.Namespace, message: str) -> None:
    if not getattr(args, "quiet", False):
        print(message)


def cmd_fuse(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    layers = _parse_layers(args.layers)
    bundle = read_sample_bundle(args.bundle_dir)
    if args.mode == "interaction-only":
        result = run_interaction_only(bundle, cfg, layers)
    else:
        result = run_pipeline(bundle, cfg, layers)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_array(out_dir / "fused.npy", result.affordance_map)
    summary = {
        "mode": args.mode,
        "selected_component": result.selected_component,
        "selected_sign": result.selected_sign,
        "component_scores": [float(f"{s:.6f}") for s in result.component_scores.tolist()],
        "roi": None if result.roi is None
               else [result.roi.row0, result.roi.col0, result.roi.row1, result.roi.col1],
        "grid": [int(result.affordance_map.shape[0]), int(result.affordance_map.shape[1])],
        "config": {
            "k": cfg.k,
            "fixation_quantile": cfg.fixation_quantile,
            "consider_negated_components": cfg.consider_negated_components,
            "blur_sigma": cfg.blur_sigma,
            "roi_threshold": cfg.roi_threshold,
            "roi_margin": cfg.roi_margin,
        },
    }
    (out_dir / "result.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    image = _bundle_image(Path(args.bundle_dir), *result.affordance_map.shape)
    overlay = render_overlay(image, result.affordance_map, args.alpha)
    Image.fromarray(overlay).save(out_dir / "overlay.png")
    _say(args, f"component={result.selected_component} sign={result.selected_sign:+d} out={out_dir}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    layers = _parse_layers(args.layers)
    mode = MODE_INTERACTION_ONLY if args.mode == "interaction-only" else MODE_FUSION
    split = None if args.split == "auto" else args.split
    index = index_dataset(args.dataset_root, split)
    out_dir = Path(args.out_dir)
    overlay_dir = None if args.no_overlays else out_dir / "overlays"
    report = evaluate(
        index,
        cfg,
        mode=mode,
        jobs=args.jobs,
        layer_subset=layers,
        fixation_threshold=args.fixation_threshold,
        overlay_dir=overlay_dir,
        overlay_alpha=args.alpha,
    )
    formats = {"json", "csv"} if args.format == "both" else {args.format}
    emit_report(report, out_dir, formats)
    _say(
        args,
        f"KLD={report.micro.kld:.6f} SIM={report.micro.sim:.6f} "
        f"NSS={report.micro.nss:.6f} n={len(report.per_sample)}",
    )
    return 0


def _save_signed_png(signed: np.ndarray, path: Path, upscale: int = 8) -> None:
    peak = float(np.abs(signed).max())
    m = signed / peak if peak > 0 else signed
    big = upsample_bilinear(m, m.shape[0] * upscale, m.shape[1] * upscale)
    rgb = np.clip(np.rint(diverging_colormap(big) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(rgb).save(path)


def cmd_pca_inspect(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    layers = _parse_layers(args.layers)
    bundle = read_sample_bundle(args.bundle_dir)
    obj_map = aggregate_layers(bundle.attn_object, layers)
    roi = roi_from_attention(obj_map, cfg.roi_threshold, cfg.roi_margin)
    basis = pca_decompose(bundle.features, roi, args.k)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_basis(basis, out_dir / "basis.npy", out_dir / "basis.json")
    for i in range(basis.k):
        _save_signed_png(basis.projections[i], out_dir / f"component_{i}.png")
    _say(args, f"k={basis.k} roi=({roi.row0},{roi.col0},{roi.row1},{roi.col1}) out={out_dir}")
    return 0


def cmd_probe_sim(args: argparse.Namespace) -> int:
    bundle = read_sample_bundle(args.bundle_dir)
    grid_h, grid_w = bundle.grid_h, bundle.grid_w
    if not (0 <= args.row < grid_h and 0 <= args.col < grid_w):
        raise ArgumentError(f"probe position ({args.row},{args.col}) outside grid {grid_h}x{grid_w}")
    probe = bundle.features[args.row, args.col]
    sim_map = cosine_probe(bundle.features, probe)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    npy_path = out if out.suffix == ".npy" else out.with_suffix(".npy")
    write_array(npy_path, sim_map)
    _save_signed_png(sim_map, npy_path.with_suffix(".png"))
    _say(args, f"probe=({args.row},{args.col}) self_similarity={sim_map[args.row, args.col]:.6f}")
    return 0


def cmd_overlay(args: argparse.Namespace) -> int:
    image = _load_image(Path(args.image))
    heat = read_array(args.map)
    if heat.ndim != 2:
        raise ArgumentError(f"overlay map must be 2-D, got shape {heat.shape}")
    out = render_overlay(image, heat, args.alpha)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(out).save(out_path)
    _say(args, f"wrote {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="affordmap",
        description="Training-free verb-conditioned affordance heatmaps from exported bundles.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fuse = sub.add_parser("fuse", help="run the fusion pipeline on one bundle")
    p_fuse.add_argument("bundle_dir")
    p_fuse.add_argument("out_dir")
    _add_fusion_flags(p_fuse)
    p_fuse.add_argument("--mode", choices=["fusion", "interaction-only"], default="fusion")
    p_fuse.add_argument("--alpha", type=float, default=0.6, help="overlay blend strength")
    p_fuse.add_argument("--quiet", action="store_true")
    p_fuse.set_defaults(func=cmd_fuse)

    p_eval = sub.add_parser("eval", help="evaluate a dataset of bundles against ground truth")
    p_eval.add_argument("dataset_root")
    p_eval.add_argument("out_dir")
    _add_fusion_flags(p_eval)
    p_eval.add_argument("--mode", choices=["fusion", "interaction-only"], default="fusion")
    p_eval.add_argument("--split", choices=["auto", "seen", "unseen", "flat"], default="auto")
    p_eval.add_argument("--jobs", type=int, default=1, help="parallel evaluation workers")
    p_eval.add_argument("--format", choices=["json", "csv", "both"], default="both")
    p_eval.add_argument("--fixation-threshold", type=float, default=0.5,
                        help="relative GT threshold that synthesizes NSS fixations")
    p_eval.add_argument("--alpha", type=float, default=0.6, help="overlay blend strength")
    p_eval.add_argument("--no-overlays", action="store_true", help="skip overlay rendering")
    p_eval.add_argument("--quiet", action="store_true")
    p_eval.set_defaults(func=cmd_eval)

    p_pca = sub.add_parser("pca-inspect", help="dump PCA component maps and basis files")
    p_pca.add_argument("bundle_dir")
    p_pca.add_argument("out_dir")
    _add_fusion_flags(p_pca)
    p_pca.add_argument("--quiet", action="store_true")
    p_pca.set_defaults(func=cmd_pca_inspect)

    p_probe = sub.add_parser("probe-sim", help="cosine-similarity map of one patch against all")
    p_probe.add_argument("bundle_dir")
    p_probe.add_argument("--row", type=int, required=True)
    p_probe.add_argument("--col", type=int, required=True)
    p_probe.add_argument("--out", required=True, help="output path (.npy; a .png twin is written)")
    p_probe.add_argument("--quiet", action="store_true")
    p_probe.set_defaults(func=cmd_probe_sim)

    p_over = sub.add_parser("overlay", help="blend a saved heatmap over an image")
    p_over.add_argument("image")
    p_over.add_argument("map", help="heatmap .npy file")
    p_over.add_argument("out")
    p_over.add_argument("--alpha", type=float, default=0.6)
    p_over.add_argument("--quiet", action="store_true")
    p_over.set_defaults(func=cmd_overlay)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return exc.code if isinstance(exc.code, int) else 2
    _setup_logging()
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc.describe()}", file=sys.stderr)
        return 2
    except EngineError as exc:
        print(f"error: {exc.describe()}", file=sys.stderr)
        return 1
    except AffordmapError as exc:
        print(f"error: {exc.describe()}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
