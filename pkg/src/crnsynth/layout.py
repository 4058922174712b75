"""Semantic layouts: loading, one-hot encoding, downsampling, class masks.

A layout is a (H, W, C) float array whose channels hold per-pixel class
weights. At source resolution every pixel is one-hot; block-average
downsampling turns boundaries soft while preserving the per-pixel
partition of unity, which the class-masked diversity loss relies on.
Class index 0 is 'void' (label unspecified) and is treated as an ordinary
channel everywhere.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BoundsError, DimensionError, InvariantError, ManifestError

VOID_CLASS = 0
PARTITION_TOL = 1e-6


@dataclass(frozen=True)
class LabelGrid:
    """Integer class index per pixel."""
    labels: np.ndarray  # (H, W) int

    def __post_init__(self):
        if self.labels.ndim != 2 or self.labels.size == 0:
            raise DimensionError(f"label grid must be non-empty 2-D, got shape {self.labels.shape}")
        if self.labels.min() < 0:
            raise BoundsError("negative class label")

    @property
    def shape(self):
        return self.labels.shape


def load_remap_table(path):
    """Reads a JSON object of raw-id string -> train-id int."""
    with open(path) as fh:
        raw = json.load(fh)
    table = {int(k): int(v) for k, v in raw.items()}
    if any(v < 0 for v in table.values()):
        raise BoundsError("remap table contains a negative train id")
    return table


def num_classes_for_remap(remap):
    """Channel count implied by a remap table: distinct train ids plus void.

    Train ids must form the contiguous range 1..K (0 allowed as an
    explicit void mapping) so that `max + 1` and `distinct + void` agree.
    """
    ids = sorted(set(remap.values()) - {VOID_CLASS})
    if ids != list(range(1, len(ids) + 1)):
        raise BoundsError(f"remap train ids must be contiguous 1..K, got {ids}")
    return len(ids) + 1


def load_label_map(path, remap_table=None, *, strict=False):
    """Loads an 8-bit single-channel label image into a LabelGrid.

    Unmapped raw ids go to void unless ``strict``, in which case the
    offending id is named in the error.
    """
    try:
        img = Image.open(path)
    except OSError as exc:
        raise OSError(f"cannot read label map {path}: {exc}") from exc
    if img.mode not in ("L", "P", "I", "I;16"):
        raise DimensionError(f"label map {path} must be single-channel, got mode {img.mode!r}")
    raw = np.asarray(img).astype(np.int64)
    if remap_table is None:
        return LabelGrid(raw)
    if strict:
        unknown = sorted(set(np.unique(raw).tolist()) - set(remap_table))
        if unknown:
            raise BoundsError(f"label map {path} contains unmapped raw ids {unknown}")
    lut = np.full(max(int(raw.max()), max(remap_table, default=0)) + 1, VOID_CLASS, dtype=np.int64)
    for raw_id, train_id in remap_table.items():
        if raw_id < lut.size:
            lut[raw_id] = train_id
    return LabelGrid(lut[raw])


def one_hot(grid, num_classes, *, dtype=np.float32):
    """One-hot encodes a LabelGrid into a (H, W, C) layout array."""
    labels = grid.labels if isinstance(grid, LabelGrid) else labels_arg(grid)
    if labels.max() >= num_classes:
        raise BoundsError(f"label {int(labels.max())} out of range for {num_classes} classes")
    h, w = labels.shape
    layout = np.zeros((h, w, num_classes), dtype=dtype)
    np.put_along_axis(layout, labels[..., None], 1, axis=2)
    return layout


def labels_arg(obj):
    arr = np.asarray(obj)
    if arr.ndim != 2:
        raise DimensionError(f"expected 2-D labels, got shape {arr.shape}")
    return arr


def argmax_labels(layout):
    return LabelGrid(layout.argmax(axis=2))


def validate_partition(values, tol=PARTITION_TOL):
    sums = values.sum(axis=2)
    err = float(np.abs(sums - 1.0).max())
    if err > tol:
        raise InvariantError(f"per-pixel channel sums deviate from 1 by {err:.3g} (tol {tol:g})")


def downsample_layout(layout, target_h, target_w):
    """Block-average pooling per channel; the pool must tile exactly."""
    h, w, c = layout.shape
    if target_h <= 0 or target_w <= 0 or h % target_h or w % target_w:
        raise DimensionError(
            f"cannot downsample {h}x{w} to {target_h}x{target_w}: non-integer block")
    fh, fw = h // target_h, w // target_w
    if fh == 1 and fw == 1:
        return layout
    blocks = layout.reshape(target_h, fh, target_w, fw, c)
    return blocks.mean(axis=(1, 3), dtype=layout.dtype)


def class_masks(layout, tap_resolutions):
    """Per-class spatial masks at each tap resolution.

    Returns one (C, h, w) array per requested (h, w); masks at each
    resolution sum to 1 per pixel.
    """
    out = []
    for (th, tw) in tap_resolutions:
        down = downsample_layout(layout, th, tw)
        validate_partition(down)
        out.append(np.ascontiguousarray(down.transpose(2, 0, 1)))
    return out


def load_reference_image(path):
    """Loads an RGB reference image into floats in [0, 1]."""
    try:
        img = Image.open(path)
    except OSError as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    arr = np.asarray(img.convert("RGB") if img.mode not in ("RGB",) else img)
    if arr.dtype == np.uint8:
        scale = 255.0
    elif arr.dtype == np.uint16:
        scale = 65535.0
    else:
        raise DimensionError(f"unsupported image depth {arr.dtype} in {path}")
    return (arr / scale).astype(np.float32)


def save_image(path, values):
    """Writes a float image in [0, 1] (clamped here) as 8-bit RGB."""
    arr = np.clip(values, 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)


@dataclass
class DatasetPair:
    layout_path: str
    image_path: str


class Dataset:
    """Paired (layout, reference) records from a JSONL manifest.

    Pairs are loaded eagerly; desk-scale sets are tiny. Resolutions must
    be divisible by the cascade's total downsampling factor, checked by
    the trainer against the model config.
    """

    def __init__(self, pairs, num_classes, remap_table=None, strict=False):
        self.num_classes = num_classes
        self.layouts = []
        self.images = []
        self.pairs = list(pairs)
        for pair in self.pairs:
            grid = load_label_map(pair.layout_path, remap_table, strict=strict)
            layout = one_hot(grid, num_classes)
            image = load_reference_image(pair.image_path)
            if image.shape[:2] != layout.shape[:2]:
                raise DimensionError(
                    f"layout {pair.layout_path} is {layout.shape[:2]} but image "
                    f"{pair.image_path} is {image.shape[:2]}")
            self.layouts.append(layout)
            self.images.append(image)

    @classmethod
    def from_manifest(cls, manifest_path, num_classes, remap_table=None, strict=False):
        base = Path(manifest_path).parent
        pairs = []
        with open(manifest_path) as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if "layout" not in rec or "image" not in rec:
                    raise ManifestError(f"{manifest_path}:{line_no}: record needs "
                                        f"'layout' and 'image' keys")
                pairs.append(DatasetPair(str(base / rec["layout"]), str(base / rec["image"])))
        if not pairs:
            raise ManifestError(f"{manifest_path}: no pairs")
        return cls(pairs, num_classes, remap_table, strict)

    def __len__(self):
        return len(self.layouts)

    def __getitem__(self, i):
        return self.layouts[i], self.images[i]

    def mean_image(self):
        return np.mean(np.stack(self.images), axis=0)
