"""affordmap-extract: export model features/attention as engine bundles.

Subcommands: extract-features, extract-attn, export-dataset.  Exit codes
follow the engine convention: 0 success, 1 extraction/runtime failure,
2 invalid usage or configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .backends import get_attention_backend, get_feature_backend
from .config import DEFAULT_TIMESTEPS, ExtractionConfig
from .errors import ExtractError, UsageError
from .export import export_dataset, extract_attention, extract_features, read_triplet_csv
from .prompts import DEFAULT_AGENT, DEFAULT_TEMPLATE, PromptTemplate


def _setup_logging():
    level = os.environ.get("AFFORDMAP_LOG", "warn").lower()
    logging.basicConfig(
        level={"error": 40, "warn": 30, "info": 20, "debug": 10}.get(level, 30),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _parse_layer_arg(raw: str) -> tuple[int, ...] | str:
    if raw in ("final", "spread4", "all"):
        return raw
    try:
        return tuple(int(x) for x in raw.split(","))
    except ValueError:
        raise UsageError(f"--layers expects final|spread4|all or comma-separated ints, got {raw!r}")


def _parse_int_list(raw: str, flag: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in raw.split(","))
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated ints, got {raw!r}")


def _config_from_args(args) -> ExtractionConfig:
    return ExtractionConfig(
        feature_layers=_parse_layer_arg(args.layers),
        attn_layers=_parse_layer_arg(args.attn_layers),
        timesteps=_parse_int_list(args.timesteps, "--timesteps"),
        working_size=args.working_size,
    )


def _add_config_flags(sub):
    sub.add_argument("--layers", default="final", help="feature layers: final|spread4|all|i,j,…")
    sub.add_argument("--attn-layers", default="all", help="attention layers: all|i,j,…")
    sub.add_argument(
        "--timesteps", default=",".join(str(t) for t in DEFAULT_TIMESTEPS), help="i,j,…"
    )
    sub.add_argument("--working-size", type=int, default=224)
    sub.add_argument("--template", default=DEFAULT_TEMPLATE)
    sub.add_argument("--agent", default=DEFAULT_AGENT)


def cmd_extract_features(args) -> int:
    cfg = _config_from_args(args)
    backend = get_feature_backend(args.feature_backend)
    feats, fragment = extract_features(args.image, cfg, backend)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    np.save(out_dir / "features.npy", feats)
    (out_dir / "features.meta.json").write_text(
        json.dumps(fragment, indent=2, sort_keys=True) + "\n", "utf-8"
    )
    if not args.quiet:
        print(f"grid={fragment['grid_h']}x{fragment['grid_w']} channels={feats.shape[2]}")
    return 0


def cmd_extract_attn(args) -> int:
    cfg = _config_from_args(args)
    backend = get_attention_backend(args.attn_backend)
    av, ao, fragment = extract_attention(
        args.image, args.verb, args.object, args.agent, cfg, backend, PromptTemplate(args.template)
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    np.save(out_dir / "attn_verb.npy", av)
    np.save(out_dir / "attn_object.npy", ao)
    (out_dir / "attn.meta.json").write_text(
        json.dumps(fragment, indent=2, sort_keys=True) + "\n", "utf-8"
    )
    if not args.quiet:
        print(f"layers={av.shape[0]} grid={av.shape[1]}x{av.shape[2]} prompt={fragment['prompt']!r}")
    return 0


def cmd_export_dataset(args) -> int:
    cfg = _config_from_args(args)
    rows = read_triplet_csv(args.csv)
    result = export_dataset(
        rows,
        args.out_root,
        cfg,
        feature_backend=get_feature_backend(args.feature_backend),
        attn_backend=get_attention_backend(args.attn_backend),
        template=PromptTemplate(args.template),
        force=args.force,
    )
    if not args.quiet:
        print(
            f"exported={result.n_exported} skipped={result.n_skipped} "
            f"failed={result.n_failed} config={result.config_hash}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="affordmap-extract",
        description="Export dense features and verb/object attention bundles",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_feat = sub.add_parser("extract-features", help="features.npy from one image")
    p_feat.add_argument("image")
    p_feat.add_argument("out_dir")
    p_feat.add_argument("--feature-backend", default="synthetic")
    p_feat.set_defaults(func=cmd_extract_features)

    p_attn = sub.add_parser("extract-attn", help="attention stacks from one image")
    p_attn.add_argument("image")
    p_attn.add_argument("out_dir")
    p_attn.add_argument("--verb", required=True)
    p_attn.add_argument("--object", required=True)
    p_attn.add_argument("--attn-backend", default="synthetic")
    p_attn.set_defaults(func=cmd_extract_attn)

    p_exp = sub.add_parser("export-dataset", help="bundle tree from a triplet CSV")
    p_exp.add_argument("csv", help="columns: image_path,verb,object[,agent]")
    p_exp.add_argument("out_root")
    p_exp.add_argument("--feature-backend", default="synthetic")
    p_exp.add_argument("--attn-backend", default="synthetic")
    p_exp.add_argument("--force", action="store_true", help="re-export despite manifest mismatch")
    p_exp.set_defaults(func=cmd_export_dataset)

    for p in (p_feat, p_attn, p_exp):
        _add_config_flags(p)
        p.add_argument("--quiet", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ExtractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
