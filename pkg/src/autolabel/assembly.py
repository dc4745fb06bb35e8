"""Label assignment and per-image pseudo-label raster composition.

Every surviving mask gets the cluster index of its pooled feature
vector; masks are then painted onto an all-255 canvas in descending
area order, so smaller instances overwrite larger ones wherever they
overlap. The canonical output is the single-channel index raster; the
colorized RGB raster is derived from it for visualization only.
"""

from __future__ import annotations

import colorsys
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import featalign
from .clustering import ClusterModel, predict_batch
from .featalign import PseudoFeatureLabel, bilinear_upsample, extract_pfl
from .interchange import (
    IGNORE_LABEL,
    CorpusManifest,
    ManifestEntry,
    PseudoLabelRaster,
    load_instance_map,
    read_tensor,
    write_label_png,
    write_rgb_png,
)
from .maskops import BinaryMask, FilterConfig

log = logging.getLogger(__name__)

WHITE = (255, 255, 255)


def _bitrev8(i: int) -> int:
    return int(f"{i:08b}"[::-1], 2)


def _base_color_table() -> np.ndarray:
    """256 fixed, pairwise distinct colors; (255,255,255) never appears.

    Hues are bit-reversed for maximal spread, cycled through four
    saturation/value tiers; collisions fall back to linear probing on
    the blue channel, so the table is a pure function of nothing.
    """
    tiers = [(0.95, 0.95), (0.70, 0.95), (0.95, 0.60), (0.55, 0.80)]
    table: list[tuple[int, int, int]] = []
    seen: set[tuple[int, int, int]] = {WHITE}
    for i in range(256):
        hue = _bitrev8(i) / 256.0
        s, v = tiers[i % 4]
        rgb = tuple(int(round(c * 255)) for c in colorsys.hsv_to_rgb(hue, s, v))
        while rgb in seen:
            rgb = (rgb[0], rgb[1], (rgb[2] + 1) % 256)
        seen.add(rgb)
        table.append(rgb)
    return np.array(table, dtype=np.uint8)


_BASE_TABLE = _base_color_table()


@dataclass(frozen=True)
class Palette:
    colors: np.ndarray  # uint8, shape (k, 3)

    @classmethod
    def generate(cls, k: int, seed: int) -> "Palette":
        if not 1 <= k <= 256:
            raise ValueError(f"palette size must be in [1, 256], got {k}")
        perm = np.random.default_rng(seed).permutation(256)[:k]
        return cls(colors=_BASE_TABLE[perm].copy())

    @property
    def k(self) -> int:
        return self.colors.shape[0]

    def save_tsv(self, path: str | Path) -> None:
        lines = ["class\tr\tg\tb"]
        lines += [f"{c}\t{r}\t{g}\t{b}" for c, (r, g, b) in enumerate(self.colors)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def assign_labels(
    pfls: list[PseudoFeatureLabel], model: ClusterModel
) -> dict[tuple[str, int], int]:
    """Cluster index for every pooled vector, keyed by (image_id, instance_id)."""
    if not pfls:
        return {}
    X = np.stack([p.vector for p in pfls])
    pcls = predict_batch(model, X)
    return {(p.image_id, p.instance_id): int(c) for p, c in zip(pfls, pcls)}


def compose_raster(
    masks: list[BinaryMask], labels: dict[int, int], width: int, height: int
) -> PseudoLabelRaster:
    """Paint labeled masks over an all-ignore canvas.

    Order is descending pixel_count (ties ascending instance_id); the
    output is therefore independent of the input list order, and
    overlaps resolve in favor of the smaller instance.
    """
    raster = PseudoLabelRaster.full_ignore(width, height)
    for mask in sorted(masks, key=lambda m: (-m.pixel_count, m.instance_id)):
        if (mask.width, mask.height) != (width, height):
            raise ValueError(
                f"mask {mask.instance_id} is {mask.width}x{mask.height}, raster is {width}x{height}"
            )
        if mask.instance_id not in labels:
            raise KeyError(f"no label for mask {mask.instance_id}")
        raster.labels[mask.bits] = labels[mask.instance_id]
    return raster


def compose_binary_raster(masks: list[BinaryMask], width: int, height: int) -> PseudoLabelRaster:
    """Class-free baseline: stack all masks as one class (0)."""
    return compose_raster(masks, {m.instance_id: 0 for m in masks}, width, height)


def colorize(raster: PseudoLabelRaster, palette: Palette) -> np.ndarray:
    """Map class c to palette[c] and 255 to white; bijective on used classes."""
    raster.validate(palette.k)
    lut = np.zeros((256, 3), dtype=np.uint8)
    lut[: palette.k] = palette.colors
    lut[IGNORE_LABEL] = WHITE
    return lut[raster.labels]


def decode_colorized(rgb: np.ndarray, palette: Palette) -> PseudoLabelRaster:
    """Invert colorize; raises on colors outside the palette."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    packed = (
        rgb[:, :, 0].astype(np.uint32) << 16
        | rgb[:, :, 1].astype(np.uint32) << 8
        | rgb[:, :, 2].astype(np.uint32)
    )
    lookup = {
        (int(r) << 16 | int(g) << 8 | int(b)): c
        for c, (r, g, b) in enumerate(palette.colors)
    }
    lookup[255 << 16 | 255 << 8 | 255] = IGNORE_LABEL
    labels = np.empty(packed.shape, dtype=np.uint8)
    for code in np.unique(packed):
        if int(code) not in lookup:
            raise ValueError(f"color {int(code):06x} not in palette")
        labels[packed == code] = lookup[int(code)]
    return PseudoLabelRaster(width=rgb.shape[1], height=rgb.shape[0], labels=labels)


@dataclass
class ImageBuildStats:
    image_id: str
    split: str
    masks_total: int
    masks_kept: int
    masks_gated: int
    masks_emptied: int
    ignored_pixels: int
    class_pixels: dict[int, int]


@dataclass
class BuildStats:
    images_ok: int = 0
    images_failed: int = 0
    rows: list[ImageBuildStats] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)


def build_image(
    entry: ManifestEntry,
    model: ClusterModel,
    sigma: float,
    normalize: bool = False,
    pfl_vectors: dict[int, np.ndarray] | None = None,
) -> tuple[PseudoLabelRaster, ImageBuildStats]:
    """Compose one image's pseudo-label raster at native resolution.

    Pooled vectors are recomputed unless pfl_vectors already holds one
    per surviving mask (the extract stage's output); both routes give
    identical rasters.
    """
    imap = load_instance_map(entry.instance_map_path)
    cfg = FilterConfig(sigma=sigma)
    native, resized, gated, emptied = featalign.surviving_masks(imap, cfg)
    labels: dict[int, int] = {}
    if resized:
        ids = [m.instance_id for m in resized]
        if pfl_vectors is not None and all(i in pfl_vectors for i in ids):
            X = np.stack([pfl_vectors[i] for i in ids])
        else:
            feats = read_tensor(entry.feature_map_path)
            aligned = bilinear_upsample(feats)
            X = np.stack(
                [extract_pfl(aligned, m, entry.image_id, normalize).vector for m in resized]
            )
        labels = {i: int(c) for i, c in zip(ids, predict_batch(model, X))}
    raster = compose_raster(native, labels, entry.source_width, entry.source_height)
    hist = np.bincount(raster.labels.ravel(), minlength=256)
    stats = ImageBuildStats(
        image_id=entry.image_id,
        split=entry.split,
        masks_total=imap.instance_count,
        masks_kept=len(native),
        masks_gated=gated,
        masks_emptied=emptied,
        ignored_pixels=int(hist[IGNORE_LABEL]),
        class_pixels={c: int(n) for c, n in enumerate(hist[:255]) if n},
    )
    return raster, stats


def _build_worker(args) -> tuple[str, ImageBuildStats | None, str | None]:
    entry, model, sigma, normalize, pfl_vectors, out_root, palette = args
    try:
        raster, stats = build_image(entry, model, sigma, normalize, pfl_vectors)
        split_dir = Path(out_root) / entry.split
        write_label_png(raster, split_dir / "labels" / f"{entry.image_id}.png")
        write_rgb_png(colorize(raster, palette), split_dir / "color" / f"{entry.image_id}.png")
        return entry.image_id, stats, None
    except Exception as exc:  # noqa: BLE001 - per-image isolation is the contract
        return entry.image_id, None, f"{type(exc).__name__}: {exc}"


def build_dataset(
    manifest: CorpusManifest,
    model: ClusterModel,
    out_root: str | Path,
    palette: Palette,
    sigma: float,
    normalize: bool = False,
    workers: int = 1,
    pfl_index: dict[str, dict[int, np.ndarray]] | None = None,
) -> BuildStats:
    """Emit index + color PNGs and stats for every manifest entry.

    Output layout: <root>/{train,val}/labels/<id>.png,
    <root>/{train,val}/color/<id>.png, <root>/stats.tsv,
    <root>/palette.tsv. Fully deterministic given (manifest, model,
    palette); per-image failures are tallied and the run continues.
    """
    out_root = Path(out_root)
    for split in ("train", "val"):
        (out_root / split / "labels").mkdir(parents=True, exist_ok=True)
        (out_root / split / "color").mkdir(parents=True, exist_ok=True)
    entries = sorted(manifest.entries, key=lambda e: e.image_id)
    jobs = [
        (
            e,
            model,
            sigma,
            normalize,
            None if pfl_index is None else pfl_index.get(e.image_id),
            str(out_root),
            palette,
        )
        for e in entries
    ]
    stats = BuildStats()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_build_worker, jobs))
    else:
        results = [_build_worker(j) for j in jobs]
    for image_id, row, err in results:
        if err is None:
            stats.images_ok += 1
            stats.rows.append(row)
        else:
            stats.images_failed += 1
            stats.failures.append((image_id, err))
            log.warning("build failed for %s: %s", image_id, err)
    palette.save_tsv(out_root / "palette.tsv")
    _write_build_stats(stats, out_root / "stats.tsv")
    return stats


def _write_build_stats(stats: BuildStats, path: Path) -> None:
    lines = [
        "image_id\tsplit\tmasks_total\tmasks_kept\tmasks_gated\tmasks_emptied"
        "\tignored_pixels\tclass_pixels"
    ]
    totals = {"total": 0, "kept": 0, "gated": 0, "emptied": 0, "ignored": 0}
    class_totals: dict[int, int] = {}
    for r in stats.rows:
        hist = ",".join(f"{c}:{n}" for c, n in sorted(r.class_pixels.items()))
        lines.append(
            f"{r.image_id}\t{r.split}\t{r.masks_total}\t{r.masks_kept}"
            f"\t{r.masks_gated}\t{r.masks_emptied}\t{r.ignored_pixels}\t{hist}"
        )
        totals["total"] += r.masks_total
        totals["kept"] += r.masks_kept
        totals["gated"] += r.masks_gated
        totals["emptied"] += r.masks_emptied
        totals["ignored"] += r.ignored_pixels
        for c, n in r.class_pixels.items():
            class_totals[c] = class_totals.get(c, 0) + n
    hist = ",".join(f"{c}:{n}" for c, n in sorted(class_totals.items()))
    lines.append(
        f"__total__\t-\t{totals['total']}\t{totals['kept']}\t{totals['gated']}"
        f"\t{totals['emptied']}\t{totals['ignored']}\t{hist}"
    )
    if stats.failures:
        for image_id, err in stats.failures:
            lines.append(f"__failed__\t{image_id}\t-\t-\t-\t-\t-\t{err}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
