"""Per-image extraction and batch export of engine-ready bundle trees.

A bundle directory holds features.npy [H,W,C], attn_verb.npy / attn_object.npy
[L,H,W], and meta.json; trees are laid out <out_root>/<verb>/<object>/<id>/ so
the engine's dataset indexer consumes them directly.  Bundles are written into
a temp directory and renamed into place, so a partially written sample never
looks complete and a tree can be read while it is still being produced.
"""

from __future__ import annotations

import csv
import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .backends import get_attention_backend, get_feature_backend
from .config import ExtractionConfig, config_hash, resolve_layers
from .errors import (
    ExtractError,
    ExtractionFailedError,
    InputError,
    ManifestMismatchError,
)
from .prompts import DEFAULT_AGENT, PromptTemplate, normalize_token

log = logging.getLogger("affordmap_extract")

MANIFEST_FILE = "manifest.json"
FAILURES_FILE = "failures.csv"
_BUNDLE_FILES = ("features.npy", "attn_verb.npy", "attn_object.npy", "meta.json")


def load_working_image(path: str | Path, working_size: int) -> np.ndarray:
    """Decode, resize to the square working resolution, scale to [0,1]."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB").resize((working_size, working_size), Image.BILINEAR)
    except FileNotFoundError as exc:
        raise ExtractionFailedError(f"image not found: {path}") from exc
    except OSError as exc:
        raise ExtractionFailedError(f"unreadable image {path}: {exc}") from exc
    return np.asarray(rgb, dtype=np.float32) / 255.0


def extract_features(
    image_path: str | Path, cfg: ExtractionConfig, backend=None
) -> tuple[np.ndarray, dict]:
    """Run the feature backend; returns ([H,W,C] float32, meta fragment)."""
    backend = backend or get_feature_backend("synthetic")
    layer_ids = resolve_layers(cfg.feature_layers, backend.num_layers)
    image = load_working_image(image_path, cfg.working_size)
    feats = backend.features(image, layer_ids)
    fragment = {
        "image_path": str(image_path),
        "layer_ids": list(layer_ids),
        "grid_h": int(feats.shape[0]),
        "grid_w": int(feats.shape[1]),
        "source_model": backend.name,
        "working_size": cfg.working_size,
    }
    return feats, fragment


def extract_attention(
    image_path: str | Path,
    verb: str,
    object: str,
    agent: str = DEFAULT_AGENT,
    cfg: ExtractionConfig = ExtractionConfig(),
    backend=None,
    template: PromptTemplate = PromptTemplate(),
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Record verb/object cross-attention; returns (av, ao, meta fragment)."""
    backend = backend or get_attention_backend("synthetic")
    layer_ids = resolve_layers(cfg.attn_layers, backend.num_layers)
    prompt, tokens, verb_span, object_span = template.render_with_spans(verb, object, agent)
    image = load_working_image(image_path, cfg.working_size)
    av, ao = backend.attention(image, tokens, verb_span, object_span, layer_ids, cfg.timesteps)
    fragment = {
        "verb": normalize_token(verb),
        "object": normalize_token(object),
        "agent": normalize_token(agent),
        "prompt": prompt,
        "attn_layer_ids": list(layer_ids),
        "verb_span": list(verb_span),
        "object_span": list(object_span),
        "timesteps": list(cfg.timesteps),
        "head_reduce": cfg.head_reduce,
        "attn_model": backend.name,
    }
    return av, ao, fragment


@dataclass(frozen=True)
class TripletRow:
    image_path: str
    verb: str
    object: str
    agent: str = DEFAULT_AGENT


def read_triplet_csv(path: str | Path) -> list[TripletRow]:
    """image_path,verb,object[,agent] with a header row; blank agent -> default."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise InputError(f"image list not found: {path}") from exc
    reader = csv.DictReader(text.splitlines())
    required = {"image_path", "verb", "object"}
    have = set(reader.fieldnames or [])
    if not required <= have:
        raise InputError(f"{path}: CSV header must include {sorted(required)}, got {sorted(have)}")
    rows = []
    for i, raw in enumerate(reader):
        if not (raw["image_path"] or "").strip():
            raise InputError(f"{path}: row {i + 2} has empty image_path")
        rows.append(
            TripletRow(
                image_path=raw["image_path"].strip(),
                verb=raw["verb"],
                object=raw["object"],
                agent=(raw.get("agent") or "").strip() or DEFAULT_AGENT,
            )
        )
    if not rows:
        raise InputError(f"{path}: no data rows")
    return rows


@dataclass(frozen=True)
class ExportResult:
    out_root: Path
    config_hash: str
    n_total: int
    n_exported: int
    n_skipped: int
    failures: list[tuple[TripletRow, str]] = field(default_factory=list)

    @property
    def n_failed(self) -> int:
        return len(self.failures)


def _bundle_complete(bundle_dir: Path) -> bool:
    return all((bundle_dir / name).is_file() for name in _BUNDLE_FILES)


def _bundle_dirs(out_root: Path, rows: list[TripletRow]) -> list[Path]:
    """Deterministic target dirs: <verb>/<object>/<image stem>, deduped in row order."""
    seen: dict[Path, int] = {}
    dirs = []
    for row in rows:
        base = out_root / normalize_token(row.verb).replace(" ", "_") / normalize_token(
            row.object
        ).replace(" ", "_")
        stem = Path(row.image_path).stem or "sample"
        target = base / stem
        n = seen.get(target, 0)
        seen[target] = n + 1
        dirs.append(target if n == 0 else base / f"{stem}-{n + 1}")
    return dirs


def export_dataset(
    rows: list[TripletRow],
    out_root: str | Path,
    cfg: ExtractionConfig = ExtractionConfig(),
    feature_backend=None,
    attn_backend=None,
    template: PromptTemplate = PromptTemplate(),
    force: bool = False,
) -> ExportResult:
    """Export every (image, triplet) row to an engine-ready bundle tree.

    Resumable: complete bundle dirs are skipped.  The tree carries a manifest
    keyed by the config hash; exporting under a different config into the same
    tree is refused unless ``force``, which re-exports everything.  Per-row
    failures are recorded in failures.csv and do not stop the batch.
    """
    out_root = Path(out_root)
    feature_backend = feature_backend or get_feature_backend("synthetic")
    attn_backend = attn_backend or get_attention_backend("synthetic")
    digest = config_hash(cfg, feature_backend.name, attn_backend.name)

    manifest_path = out_root / MANIFEST_FILE
    if manifest_path.is_file():
        previous = json.loads(manifest_path.read_text(encoding="utf-8")).get("config_hash")
        if previous != digest and not force:
            raise ManifestMismatchError(
                f"{out_root} was exported with config {previous}, current is {digest}; "
                f"pass force to overwrite"
            )
    out_root.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(
        json.dumps(
            {
                "config_hash": digest,
                "feature_model": feature_backend.name,
                "attn_model": attn_backend.name,
                "head_reduce": cfg.head_reduce,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )

    n_exported = n_skipped = 0
    failures: list[tuple[TripletRow, str]] = []
    for row, bundle_dir in zip(rows, _bundle_dirs(out_root, rows)):
        if _bundle_complete(bundle_dir) and not force:
            n_skipped += 1
            continue
        try:
            feats, feat_frag = extract_features(row.image_path, cfg, feature_backend)
            av, ao, attn_frag = extract_attention(
                row.image_path, row.verb, row.object, row.agent, cfg, attn_backend, template
            )
            _write_bundle(bundle_dir, feats, av, ao, {**feat_frag, **attn_frag}, digest)
            n_exported += 1
        except (ExtractError, OSError) as exc:
            log.warning("skipping %s: %s", row.image_path, exc)
            failures.append((row, str(exc)))

    with (out_root / FAILURES_FILE).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_path", "verb", "object", "error"])
        for row, err in failures:
            writer.writerow([row.image_path, row.verb, row.object, err])

    return ExportResult(out_root, digest, len(rows), n_exported, n_skipped, failures)


def _write_bundle(bundle_dir: Path, feats, av, ao, fragments: dict, digest: str):
    """Stage the four files in a temp dir, then rename into place atomically."""
    meta = dict(fragments)
    meta["source_model"] = f"{meta['source_model']}+{meta.pop('attn_model')}"
    meta["config_hash"] = digest
    if feats.shape[:2] != av.shape[1:] or av.shape != ao.shape:
        raise ExtractionFailedError(
            f"grid mismatch: features {feats.shape} vs attention {av.shape}/{ao.shape}"
        )

    tmp = bundle_dir.parent / f".tmp-{bundle_dir.name}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    np.save(tmp / "features.npy", np.ascontiguousarray(feats, dtype=np.float32))
    np.save(tmp / "attn_verb.npy", np.ascontiguousarray(av, dtype=np.float32))
    np.save(tmp / "attn_object.npy", np.ascontiguousarray(ao, dtype=np.float32))
    (tmp / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", "utf-8")
    if bundle_dir.exists():
        shutil.rmtree(bundle_dir)
    tmp.replace(bundle_dir)
