"""Feature-map upsampling and per-mask pooled feature vectors.

The encoder emits a coarse (256, 64, 64) float32 feature map per image.
It is bilinearly upsampled to the 256x256 mask grid, and each surviving
binary mask is reduced to one 256-dim vector: the mean of the aligned
features over the mask's pixels. Those vectors are what the clustering
stage consumes.

Interpolation uses half-pixel centers: the source coordinate for output
index d is (d + 0.5) * (in / out) - 0.5, clamped to the valid range.
Pooling accumulates in float64 in row-major pixel order, one pixel at a
time, so results are reproducible bit-for-bit regardless of mask size.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .interchange import ManifestEntry, load_instance_map, read_tensor
from .maskops import BinaryMask, FilterConfig, decompose, filter_gate, resize_mask

log = logging.getLogger(__name__)

ALIGNED_SIZE = 256

# pooling accumulates sequentially in chunks; value only affects memory
_POOL_CHUNK = 16384


class EmptyMaskError(ValueError):
    """Pooling was asked to average over a mask with no pixels."""


@dataclass
class PseudoFeatureLabel:
    """Pooled descriptor of one mask: mean aligned feature over its pixels."""

    vector: np.ndarray  # float32, shape (channels,)
    image_id: str
    instance_id: int
    pixel_count_at_256: int


def bilinear_upsample(f: np.ndarray, out_h: int = ALIGNED_SIZE, out_w: int = ALIGNED_SIZE) -> np.ndarray:
    """Upsample a channels-first (C, H, W) map by bilinear interpolation.

    Interpolation is separable, so each axis becomes one banded weight
    matrix (two non-zeros per output index) applied as a matrix
    product; that keeps the hot path inside BLAS. Arithmetic runs in
    float64 and the result is cast to float32. Outputs are convex
    combinations of source values, so each channel stays inside its
    source min/max.
    """
    f = np.asarray(f)
    if f.ndim != 3:
        raise ValueError(f"expected (channels, height, width), got shape {f.shape}")
    if not np.isfinite(f).all():
        raise ValueError("feature map contains non-finite values")
    channels, in_h, in_w = f.shape
    wy = _lerp_weights(in_h, out_h)
    wxt = np.ascontiguousarray(_lerp_weights(in_w, out_w).T)
    out = np.empty((channels, out_h, out_w), dtype=np.float32)
    # small channel chunks keep the float64 intermediates cache-resident
    chunk = 16
    buf = np.empty((min(chunk, channels), out_h, out_w))
    for s in range(0, channels, chunk):
        data = f[s : s + chunk].astype(np.float64)
        rows = np.tensordot(wy, data, axes=(1, 1)).transpose(1, 0, 2)  # (c, out_h, in_w)
        np.matmul(rows, wxt, out=buf[: data.shape[0]])
        out[s : s + chunk] = buf[: data.shape[0]]
    return out


def _lerp_coords(in_size: int, out_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1.0)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, in_size - 1)
    return lo, hi, src - lo


def _lerp_weights(in_size: int, out_size: int) -> np.ndarray:
    lo, hi, frac = _lerp_coords(in_size, out_size)
    w = np.zeros((out_size, in_size))
    idx = np.arange(out_size)
    w[idx, lo] += 1.0 - frac
    w[idx, hi] += frac
    return w


def extract_pfl(
    aligned: np.ndarray,
    mask: BinaryMask,
    image_id: str = "",
    normalize: bool = False,
) -> PseudoFeatureLabel:
    """Masked mean of an aligned feature map over one mask's pixels.

    Raises EmptyMaskError for zero-pixel masks instead of returning a
    silent zero vector. With normalize=True the pooled vector is scaled
    to unit L2 norm (off by default; the pipeline clusters raw means).
    """
    aligned = np.asarray(aligned)
    if aligned.ndim != 3:
        raise ValueError(f"expected (channels, height, width), got shape {aligned.shape}")
    if mask.bits.shape != aligned.shape[1:]:
        raise ValueError(
            f"mask {mask.bits.shape} does not match feature grid {aligned.shape[1:]}"
        )
    ys, xs = np.nonzero(mask.bits)  # row-major order
    n = ys.size
    if n == 0:
        raise EmptyMaskError(f"mask {mask.instance_id} has no pixels on the feature grid")
    acc = np.zeros(aligned.shape[0], dtype=np.float64)
    # chunked strictly-sequential accumulation: prepend the running total so
    # cumsum reproduces one-pixel-at-a-time addition order exactly
    for start in range(0, n, _POOL_CHUNK):
        sel = aligned[:, ys[start : start + _POOL_CHUNK], xs[start : start + _POOL_CHUNK]]
        block = np.concatenate([acc[:, None], sel.astype(np.float64)], axis=1)
        acc = np.cumsum(block, axis=1)[:, -1]
    vec = (acc / n).astype(np.float32)
    if normalize:
        norm = float(np.linalg.norm(vec.astype(np.float64)))
        if norm > 0.0:
            vec = (vec.astype(np.float64) / norm).astype(np.float32)
    return PseudoFeatureLabel(
        vector=vec,
        image_id=image_id,
        instance_id=mask.instance_id,
        pixel_count_at_256=n,
    )


@dataclass
class ExtractStats:
    images_ok: int = 0
    images_failed: int = 0
    masks_total: int = 0
    masks_gated: int = 0
    masks_emptied: int = 0
    masks_kept: int = 0
    failures: list[tuple[str, str]] = field(default_factory=list)

    def record_failure(self, image_id: str, error: Exception) -> None:
        self.images_failed += 1
        self.failures.append((image_id, f"{type(error).__name__}: {error}"))
        log.warning("skipping image %s: %s", image_id, error)


def surviving_masks(
    imap, cfg: FilterConfig, grid: int = ALIGNED_SIZE
) -> tuple[list[BinaryMask], list[BinaryMask], int, int]:
    """Decompose, gate, and resize one image's masks to the feature grid.

    Returns (native-resolution survivors, resized survivors, gated-out
    count, emptied-by-resize count); the two survivor lists stay index
    aligned.
    """
    masks = decompose(imap)
    native, resized = [], []
    gated = emptied = 0
    for m in masks:
        if not filter_gate(m, cfg):
            gated += 1
            continue
        r = resize_mask(m, grid, grid)
        if r.pixel_count == 0:
            emptied += 1
            continue
        native.append(m)
        resized.append(r)
    if emptied:
        log.info("dropped %d masks emptied by resize", emptied)
    return native, resized, gated, emptied


def extract_image_pfls(
    entry: ManifestEntry, cfg: FilterConfig, normalize: bool = False
) -> tuple[list[PseudoFeatureLabel], int, int, int]:
    """All pooled vectors for one manifest entry, ascending by instance id.

    Returns (pfls, total mask count, gated count, emptied count).
    """
    imap = load_instance_map(entry.instance_map_path)
    feats = read_tensor(entry.feature_map_path)
    if feats.ndim != 3 or feats.dtype != np.float32:
        raise ValueError(f"{entry.feature_map_path}: expected rank-3 float32 features")
    _, resized, gated, emptied = surviving_masks(imap, cfg)
    total = imap.instance_count
    if not resized:
        return [], total, gated, emptied
    aligned = bilinear_upsample(feats)
    pfls = [extract_pfl(aligned, m, entry.image_id, normalize) for m in resized]
    return pfls, total, gated, emptied


def extract_pfl_batch(
    entries: Iterable[ManifestEntry],
    cfg: FilterConfig,
    stats: ExtractStats | None = None,
    normalize: bool = False,
) -> Iterator[PseudoFeatureLabel]:
    """Stream pooled vectors for a corpus in (image_id, instance_id) order.

    Per-image I/O failures are tallied in stats and processing
    continues with the next image.
    """
    if stats is None:
        stats = ExtractStats()
    for entry in sorted(entries, key=lambda e: e.image_id):
        try:
            pfls, total, gated, emptied = extract_image_pfls(entry, cfg, normalize)
        except Exception as exc:  # noqa: BLE001 - per-image isolation is the contract
            stats.record_failure(entry.image_id, exc)
            continue
        stats.images_ok += 1
        stats.masks_total += total
        stats.masks_gated += gated
        stats.masks_emptied += emptied
        stats.masks_kept += len(pfls)
        yield from pfls
