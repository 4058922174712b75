"""Synthetic desk-scale datasets.

Generates paired label maps and reference images for training runs that
fit on one CPU: layouts are random axis-aligned regions, references give
each class a palette color modulated by smooth gradients and a per-pair
tint so the set is diverse but memorizable.
"""

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .layout import one_hot


def random_label_grid(rng, h, w, num_classes):
    labels = np.full((h, w), rng.integers(1, num_classes), dtype=np.int64)
    for _ in range(rng.integers(4, 9)):
        cls = int(rng.integers(0, num_classes))
        y0 = int(rng.integers(0, h - 1))
        x0 = int(rng.integers(0, w - 1))
        y1 = int(rng.integers(y0 + 1, h + 1))
        x1 = int(rng.integers(x0 + 1, w + 1))
        labels[y0:y1, x0:x1] = cls
    return labels


def _palette(rng, num_classes):
    return rng.uniform(0.1, 0.9, (num_classes, 3))


def reference_from_labels(labels, palette, tint, rng):
    h, w = labels.shape
    img = palette[labels]
    ramp = np.linspace(-0.08, 0.08, w)[None, :, None]
    img = img + ramp + tint[None, None, :]
    img += rng.normal(0.0, 0.015, img.shape)
    return np.clip(img, 0.0, 1.0)


def make_synthetic_dataset(out_dir, n_pairs=8, size=(64, 128), num_classes=6,
                           seed=0, shared_layout_refs=0):
    """Writes label maps, reference images, and a JSONL manifest.

    ``shared_layout_refs > 0`` appends that many extra pairs that reuse
    pair 0's layout with differently-tinted references (diversity runs).
    Returns the manifest path.
    """
    out_dir = Path(out_dir)
    (out_dir / "layouts").mkdir(parents=True, exist_ok=True)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    h, w = size
    palette = _palette(rng, num_classes)
    records = []
    first_labels = None
    for i in range(n_pairs + shared_layout_refs):
        if i < n_pairs:
            labels = random_label_grid(rng, h, w, num_classes)
            if first_labels is None:
                first_labels = labels
        else:
            labels = first_labels
        tint = rng.uniform(-0.25, 0.25, 3)
        img = reference_from_labels(labels, palette, tint, rng)
        lp = out_dir / "layouts" / f"pair{i:03d}.png"
        ip = out_dir / "images" / f"pair{i:03d}.png"
        Image.fromarray(labels.astype(np.uint8), mode="L").save(lp)
        Image.fromarray((img * 255.0 + 0.5).astype(np.uint8)).save(ip)
        records.append({"layout": str(lp.relative_to(out_dir)),
                        "image": str(ip.relative_to(out_dir))})
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return manifest


def layout_pair_for_diversity(size=(16, 32), num_classes=4, seed=0):
    """One layout with two visibly different references, as arrays."""
    rng = np.random.default_rng(seed)
    h, w = size
    labels = random_label_grid(rng, h, w, num_classes)
    palette_a = _palette(rng, num_classes)
    palette_b = _palette(rng, num_classes)
    ref_a = reference_from_labels(labels, palette_a, np.array([0.2, 0.2, 0.1]), rng)
    ref_b = reference_from_labels(labels, palette_b, np.array([-0.2, -0.2, -0.1]), rng)
    layout = one_hot_from_labels(labels, num_classes)
    return layout, ref_a.astype(np.float32), ref_b.astype(np.float32)


def one_hot_from_labels(labels, num_classes):
    from .layout import LabelGrid
    return one_hot(LabelGrid(labels), num_classes)
