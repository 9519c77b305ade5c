"""NPY v1.0 array files and the JSON sidecars that bridge extractor and engine.

The writer emits the standard NPY v1.0 layout (magic ``\\x93NUMPY``, version
1.0, python-dict header padded to a 64-byte boundary, C-order little-endian
payload) so files stay readable by mainstream scientific tooling.  The reader
is written against the format description, not against any library, and is
the engine's own validation path for incoming bundles.

Canonical dtype is float32; float64 files are accepted on read and narrowed.
Rank-0 scalars are rejected in both directions: everything in this system is
a spatial map, an attention stack, or a feature grid.
"""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    CorruptError,
    FormatError,
    IoError,
    MissingInputError,
    ShapeMismatchError,
)

MAGIC = b"\x93NUMPY"
VERSION = bytes((1, 0))
_HEADER_ALIGN = 64

FEATURES_FILE = "features.npy"
ATTN_VERB_FILE = "attn_verb.npy"
ATTN_OBJECT_FILE = "attn_object.npy"
META_FILE = "meta.json"


def _shape_repr(shape: tuple[int, ...]) -> str:
    if len(shape) == 1:
        return f"({shape[0]},)"
    return "(" + ", ".join(str(d) for d in shape) + ")"


def write_array(path: str | Path, arr: np.ndarray) -> None:
    """Write ``arr`` to ``path`` as NPY v1.0, '<f4', C order.

    float64 input is narrowed to float32; other dtypes are rejected.
    """
    arr = np.asarray(arr)
    if arr.dtype == np.float64:
        arr = arr.astype(np.float32)
    if arr.dtype != np.float32:
        raise FormatError(f"only float32/float64 arrays can be written, got dtype {arr.dtype}")
    if arr.ndim == 0:
        raise FormatError("rank-0 scalars are not valid map files")
    arr = np.ascontiguousarray(arr)

    header = (
        "{'descr': '<f4', 'fortran_order': False, "
        f"'shape': {_shape_repr(arr.shape)}, }}"
    ).encode("latin1")
    # pad with spaces so magic+version+len+header is 64-aligned, newline-terminated
    base = len(MAGIC) + len(VERSION) + 2
    total = base + len(header) + 1
    pad = (-total) % _HEADER_ALIGN
    header = header + b" " * pad + b"\n"
    if len(header) > 0xFFFF:
        raise FormatError("header too large for NPY v1.0")

    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(VERSION)
            fh.write(len(header).to_bytes(2, "little"))
            fh.write(header)
            fh.write(arr.tobytes(order="C"))
    except OSError as exc:
        raise IoError(f"cannot write array file {path}: {exc}") from exc


def read_array(path: str | Path) -> np.ndarray:
    """Read an NPY v1.0 file; returns a float32 C-order array.

    Tolerates arbitrary whitespace padding in the dict header.  Fortran-order
    files and dtypes other than '<f4'/'<f8' are rejected.
    """
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise MissingInputError(f"array file not found: {path}") from exc
    except OSError as exc:
        raise IoError(f"cannot read array file {path}: {exc}") from exc

    if len(data) < 10 or data[:6] != MAGIC:
        raise FormatError(f"{path}: missing NPY magic header")
    if data[6:8] != VERSION:
        raise FormatError(f"{path}: unsupported NPY version {data[6]}.{data[7]} (need 1.0)")
    header_len = int.from_bytes(data[8:10], "little")
    header_end = 10 + header_len
    if len(data) < header_end:
        raise FormatError(f"{path}: truncated header")

    try:
        meta = ast.literal_eval(data[10:header_end].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"{path}: unparsable header dict") from exc
    if not isinstance(meta, dict) or not {"descr", "fortran_order", "shape"} <= set(meta):
        raise FormatError(f"{path}: header missing required keys")

    descr = meta["descr"]
    if descr not in ("<f4", "<f8"):
        raise FormatError(f"{path}: unsupported dtype {descr!r}")
    if meta["fortran_order"] is not False:
        raise FormatError(f"{path}: fortran-order payloads are not supported")
    shape = meta["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(d, int) and d >= 0 for d in shape):
        raise FormatError(f"{path}: malformed shape {shape!r}")
    if len(shape) == 0:
        raise FormatError(f"{path}: rank-0 scalars are not valid map files")

    itemsize = 4 if descr == "<f4" else 8
    expected = int(np.prod(shape, dtype=np.int64)) * itemsize
    payload = data[header_end:]
    if len(payload) != expected:
        raise CorruptError(
            f"{path}: payload holds {len(payload)} bytes, header declares {expected}"
        )
    arr = np.frombuffer(payload, dtype=descr).reshape(shape)
    return np.ascontiguousarray(arr.astype(np.float32, copy=True))


@dataclass(frozen=True)
class SampleMeta:
    """Sidecar describing one exported sample (one image + one verb/object pair)."""

    image_path: str
    verb: str
    object: str
    prompt: str
    layer_ids: tuple[int, ...]
    grid_h: int
    grid_w: int
    source_model: str
    extras: dict = field(default_factory=dict, compare=False)


_META_REQUIRED = ("image_path", "verb", "object", "prompt", "layer_ids", "grid_h", "grid_w", "source_model")


def load_meta(path: str | Path) -> SampleMeta:
    """Parse meta.json; verb/object are normalized to lowercase tokens."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise MissingInputError(f"meta file not found: {path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable meta.json: {exc}") from exc

    missing = [k for k in _META_REQUIRED if k not in raw]
    if missing:
        raise FormatError(f"{path}: meta.json missing keys {missing}")
    verb = str(raw["verb"]).strip().lower()
    obj = str(raw["object"]).strip().lower()
    if not verb or not obj:
        raise FormatError(f"{path}: verb and object must be non-empty tokens")
    grid_h, grid_w = int(raw["grid_h"]), int(raw["grid_w"])
    if grid_h < 1 or grid_w < 1:
        raise FormatError(f"{path}: grid dims must be positive, got {grid_h}x{grid_w}")
    extras = {k: v for k, v in raw.items() if k not in _META_REQUIRED}
    return SampleMeta(
        image_path=str(raw["image_path"]),
        verb=verb,
        object=obj,
        prompt=str(raw["prompt"]),
        layer_ids=tuple(int(x) for x in raw["layer_ids"]),
        grid_h=grid_h,
        grid_w=grid_w,
        source_model=str(raw["source_model"]),
        extras=extras,
    )


@dataclass(frozen=True)
class SampleBundle:
    """One loaded sample: features [H,W,C], attention stacks [L,H,W], metadata."""

    features: np.ndarray
    attn_verb: np.ndarray
    attn_object: np.ndarray
    meta: SampleMeta

    @property
    def grid_h(self) -> int:
        return self.features.shape[0]

    @property
    def grid_w(self) -> int:
        return self.features.shape[1]


def _check_attention(name: str, arr: np.ndarray) -> None:
    if arr.ndim != 3:
        raise ShapeMismatchError(f"{name}: expected [layers, H, W], got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ShapeMismatchError(f"{name}: needs at least one layer")
    if not np.isfinite(arr).all():
        raise CorruptError(f"{name}: non-finite attention values")
    if arr.min() < 0:
        raise CorruptError(f"{name}: attention values must be non-negative")


def read_sample_bundle(bundle_dir: str | Path) -> SampleBundle:
    """Load and cross-validate one bundle directory.

    Raises MissingInputError when a required file is absent and
    ShapeMismatchError when the spatial grids disagree with each other or
    with meta.json.
    """
    bundle_dir = Path(bundle_dir)
    for name in (FEATURES_FILE, ATTN_VERB_FILE, ATTN_OBJECT_FILE, META_FILE):
        if not (bundle_dir / name).is_file():
            raise MissingInputError(f"bundle {bundle_dir} is missing {name}")

    features = read_array(bundle_dir / FEATURES_FILE)
    attn_verb = read_array(bundle_dir / ATTN_VERB_FILE)
    attn_object = read_array(bundle_dir / ATTN_OBJECT_FILE)
    meta = load_meta(bundle_dir / META_FILE)

    if features.ndim != 3:
        raise ShapeMismatchError(f"{FEATURES_FILE}: expected [H, W, C], got shape {features.shape}")
    if features.shape[2] < 2:
        raise ShapeMismatchError(f"{FEATURES_FILE}: needs >= 2 channels, got {features.shape[2]}")
    if not np.isfinite(features).all():
        raise CorruptError(f"{FEATURES_FILE}: non-finite feature values")
    _check_attention(ATTN_VERB_FILE, attn_verb)
    _check_attention(ATTN_OBJECT_FILE, attn_object)

    grid = (meta.grid_h, meta.grid_w)
    got = {
        FEATURES_FILE: features.shape[:2],
        ATTN_VERB_FILE: attn_verb.shape[1:],
        ATTN_OBJECT_FILE: attn_object.shape[1:],
    }
    bad = {name: shape for name, shape in got.items() if shape != grid}
    if bad:
        raise ShapeMismatchError(
            f"bundle {bundle_dir}: meta declares grid {grid} but got {bad}"
        )
    return SampleBundle(features=features, attn_verb=attn_verb, attn_object=attn_object, meta=meta)


def load_ground_truth(path: str | Path) -> np.ndarray:
    """Load a GT heatmap: float32 .npy as-is, 8-bit grayscale PNG rescaled to [0,1]."""
    path = Path(path)
    if path.suffix == ".npy":
        gt = read_array(path)
        if gt.ndim != 2:
            raise ShapeMismatchError(f"{path}: ground truth must be 2-D, got shape {gt.shape}")
        if gt.min() < 0:
            raise CorruptError(f"{path}: ground truth must be non-negative")
        return gt
    try:
        with Image.open(path) as img:
            gray = img.convert("L")
            return np.asarray(gray, dtype=np.float32) / 255.0
    except FileNotFoundError as exc:
        raise MissingInputError(f"ground truth not found: {path}") from exc
    except OSError as exc:
        raise FormatError(f"{path}: unreadable image: {exc}") from exc
