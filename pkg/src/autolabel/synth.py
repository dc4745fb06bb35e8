"""Synthetic corpora with known latent classes.

Images are rectangles on a slot grid; every rectangle belongs to one of
a few latent classes, each with a constant high-magnitude feature
signature painted onto the coarse feature grid (padded by one cell so
bilinear upsampling never blends a mask pixel with the background).
Ground-truth rasters carry the latent class per rectangle with 255
elsewhere, which makes recovered-cluster quality measurable exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .interchange import (
    InstanceMap,
    ManifestEntry,
    ManifestParams,
    PseudoLabelRaster,
    save_manifest,
    split_corpus,
    write_label_png,
    write_tensor,
)

FEATURE_GRID = 64
CHANNELS = 256


@dataclass(frozen=True)
class SynthSpec:
    n_images: int = 12
    n_classes: int = 4
    image_size: int = 256
    slot_count: int = 4  # slots per side
    rect_size: int = 32
    signature_scale: float = 20.0
    noise: float = 0.05
    min_instances: int = 2
    max_instances: int = 6
    seed: int = 0


def class_signatures(n_classes: int, scale: float) -> np.ndarray:
    sigs = np.zeros((n_classes, CHANNELS), dtype=np.float32)
    for c in range(n_classes):
        sigs[c, c] = scale
    return sigs


def make_image(
    spec: SynthSpec, index: int
) -> tuple[InstanceMap, np.ndarray, PseudoLabelRaster, list[int]]:
    """One synthetic image: instance map, features, ground truth, classes per id."""
    rng = np.random.default_rng([spec.seed, index])
    size = spec.image_size
    scale = size // FEATURE_GRID
    slot_px = size // spec.slot_count
    sigs = class_signatures(spec.n_classes, spec.signature_scale)

    n_slots = spec.slot_count**2
    n_inst = int(rng.integers(spec.min_instances, spec.max_instances + 1))
    n_inst = min(n_inst, n_slots)
    slots = rng.choice(n_slots, size=n_inst, replace=False)

    ids = np.zeros((size, size), dtype=np.uint16)
    gt = np.full((size, size), 255, dtype=np.uint8)
    feats = rng.uniform(-spec.noise, spec.noise, size=(CHANNELS, FEATURE_GRID, FEATURE_GRID))
    feats = feats.astype(np.float32)
    classes: list[int] = []
    for i, slot in enumerate(sorted(int(s) for s in slots)):
        cls = int(rng.integers(spec.n_classes))
        classes.append(cls)
        sy, sx = divmod(slot, spec.slot_count)
        y0 = sy * slot_px + (slot_px - spec.rect_size) // 2
        x0 = sx * slot_px + (slot_px - spec.rect_size) // 2
        y1, x1 = y0 + spec.rect_size, x0 + spec.rect_size
        ids[y0:y1, x0:x1] = i + 1
        gt[y0:y1, x0:x1] = cls
        # feature cells under the rect, grown one cell against blending
        cy0, cx0 = max(y0 // scale - 1, 0), max(x0 // scale - 1, 0)
        cy1 = min(y1 // scale + 1, FEATURE_GRID)
        cx1 = min(x1 // scale + 1, FEATURE_GRID)
        feats[:, cy0:cy1, cx0:cx1] += sigs[cls][:, None, None]
    return (
        InstanceMap.from_ids(ids),
        feats,
        PseudoLabelRaster(width=size, height=size, labels=gt),
        classes,
    )


def make_corpus(
    root: str | Path,
    spec: SynthSpec,
    ratio: tuple[int, int] = (7, 3),
    params: ManifestParams | None = None,
) -> Path:
    """Write a full corpus (maps, features, ground truth, manifest); returns manifest path."""
    root = Path(root)
    for sub in ("maps", "feats", "gt"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(spec.n_images):
        image_id = f"img_{i:04d}"
        imap, feats, gt, _ = make_image(spec, i)
        write_tensor(imap.ids, root / "maps" / f"{image_id}.alpt")
        write_tensor(feats, root / "feats" / f"{image_id}.alpt")
        write_label_png(gt, root / "gt" / f"{image_id}.png")
        entries.append(
            ManifestEntry(
                image_id=image_id,
                instance_map_path=f"maps/{image_id}.alpt",
                feature_map_path=f"feats/{image_id}.alpt",
                source_width=spec.image_size,
                source_height=spec.image_size,
            )
        )
    manifest = split_corpus(entries, ratio, seed=spec.seed, params=params)
    path = root / "manifest.tsv"
    save_manifest(manifest, path)
    return path


def random_instance_map(
    rng: np.random.Generator,
    size: int = 256,
    max_rects: int = 6,
    side_range: tuple[int, int] = (8, 256),
) -> InstanceMap:
    """Instance map of random rectangles with widely varying proportions.

    Later rectangles overwrite earlier ones, and fully hidden ids are
    renumbered away, so the result is always canonical.
    """
    n = int(rng.integers(1, max_rects + 1))
    ids = np.zeros((size, size), dtype=np.uint16)
    for i in range(n):
        w = int(rng.integers(side_range[0], min(side_range[1], size) + 1))
        h = int(rng.integers(side_range[0], min(side_range[1], size) + 1))
        y0 = int(rng.integers(0, size - h + 1))
        x0 = int(rng.integers(0, size - w + 1))
        ids[y0 : y0 + h, x0 : x0 + w] = i + 1
    present = np.unique(ids)
    present = present[present != 0]
    remap = np.zeros(int(ids.max()) + 1, dtype=np.uint16)
    remap[present] = np.arange(1, present.size + 1, dtype=np.uint16)
    return InstanceMap.from_ids(remap[ids])
