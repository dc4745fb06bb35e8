"""Export images into the pipeline's interchange layout.

Per image: the backend's raw masks are flattened into one uint16
instance-id raster (overlaps resolved by descending predicted quality,
ties by generation order; ids renumbered densely so the consumer's
contiguity contract holds), and the encoder features are written as a
(256, 64, 64) float32 tensor. A corpus manifest ties it all together.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .alpt import write_tensor
from .backends import FEATURE_SHAPE, RawMask

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@dataclass
class ExportRecord:
    image_id: str
    instance_map_path: str
    feature_map_path: str
    original_width: int
    original_height: int
    grid: int
    mask_count: int


def flatten_masks(masks: list[RawMask], height: int, width: int) -> np.ndarray:
    """Collapse possibly-overlapping masks into a dense uint16 id raster.

    Masks claim pixels in (score desc, order asc) priority; a mask that
    ends up with no pixels is dropped, and surviving masks are
    renumbered 1..M in priority order.
    """
    raster = np.zeros((height, width), dtype=np.uint16)
    next_id = 0
    for mask in sorted(masks, key=lambda m: (-m.score, m.order)):
        if mask.bits.shape != (height, width):
            raise ValueError(
                f"mask shape {mask.bits.shape} does not match image {height}x{width}"
            )
        free = mask.bits & (raster == 0)
        if not free.any():
            continue
        next_id += 1
        if next_id > 65535:
            raise ValueError("more than 65535 surviving masks")
        raster[free] = next_id
    return raster


def export_image(image: np.ndarray, backend, out_dir: str | Path, image_id: str) -> ExportRecord:
    """Write one image's instance map + feature tensor; returns the record."""
    out_dir = Path(out_dir)
    (out_dir / "maps").mkdir(parents=True, exist_ok=True)
    (out_dir / "feats").mkdir(parents=True, exist_ok=True)
    height, width = image.shape[:2]
    masks = backend.generate_masks(image)
    raster = flatten_masks(masks, height, width)
    feats = backend.encode_features(image)
    if feats.shape != FEATURE_SHAPE or feats.dtype != np.float32:
        raise ValueError(f"backend produced {feats.dtype} {feats.shape}, expected f32 {FEATURE_SHAPE}")
    map_rel = f"maps/{image_id}.alpt"
    feat_rel = f"feats/{image_id}.alpt"
    write_tensor(raster, out_dir / map_rel)
    write_tensor(feats, out_dir / feat_rel)
    return ExportRecord(
        image_id=image_id,
        instance_map_path=map_rel,
        feature_map_path=feat_rel,
        original_width=width,
        original_height=height,
        grid=backend.grid,
        mask_count=int(raster.max()),
    )


def split_records(records: list[ExportRecord], ratio: tuple[int, int], seed: int) -> list[str]:
    """Train/val tag per record: seeded shuffle, round-half-up train share."""
    ordered = sorted(range(len(records)), key=lambda i: records[i].image_id)
    perm = np.random.default_rng(seed).permutation(len(ordered))
    train_parts, val_parts = ratio
    n_train = int(np.floor(len(records) * train_parts / (train_parts + val_parts) + 0.5))
    splits = [""] * len(records)
    for rank, j in enumerate(perm):
        splits[ordered[j]] = "train" if rank < n_train else "val"
    return splits


def write_manifest(
    records: list[ExportRecord],
    splits: list[str],
    path: str | Path,
    seed: int,
    sigma: float,
    k: int,
    batch_size: int,
) -> None:
    """Corpus manifest in the consumer's line-oriented TSV format."""
    lines = [
        f"# seed={seed}",
        f"# sigma={sigma!r}",
        f"# k={k}",
        f"# batch_size={batch_size}",
        "image_id\tsplit\tinstance_map\tfeature_map\twidth\theight",
    ]
    for record, split in zip(records, splits):
        lines.append(
            "\t".join(
                (
                    record.image_id,
                    split,
                    record.instance_map_path,
                    record.feature_map_path,
                    str(record.original_width),
                    str(record.original_height),
                )
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_export_log(records: list[ExportRecord], path: str | Path) -> None:
    lines = ["image_id\twidth\theight\tgrid\tmasks"]
    lines += [
        f"{r.image_id}\t{r.original_width}\t{r.original_height}\t{r.grid}\t{r.mask_count}"
        for r in records
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def find_images(images_dir: str | Path) -> list[Path]:
    images_dir = Path(images_dir)
    return sorted(
        p for p in images_dir.iterdir()
        if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()
    )


def export_directory(
    images_dir: str | Path,
    out_dir: str | Path,
    backend,
    ratio: tuple[int, int] = (7, 3),
    seed: int = 0,
    sigma: float = 0.3,
    k: int = 16,
    batch_size: int = 4096,
) -> tuple[list[ExportRecord], list[tuple[str, str]]]:
    """Export every image in a directory; per-image failures are logged, not fatal."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records: list[ExportRecord] = []
    failures: list[tuple[str, str]] = []
    for path in find_images(images_dir):
        image_id = path.stem
        try:
            records.append(export_image(load_image(path), backend, out_dir, image_id))
        except (MemoryError, OSError, ValueError) as exc:
            failures.append((image_id, f"{type(exc).__name__}: {exc}"))
            log.warning("skipping %s: %s", image_id, exc)
    if records:
        splits = split_records(records, ratio, seed)
        write_manifest(records, splits, out_dir / "manifest.tsv", seed, sigma, k, batch_size)
        write_export_log(records, out_dir / "export_records.tsv")
    if failures:
        (out_dir / "errors.log").write_text(
            "\n".join(f"{image_id}\t{err}" for image_id, err in failures) + "\n",
            encoding="utf-8",
        )
    return records, failures
