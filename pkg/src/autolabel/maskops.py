"""Binary mask decomposition, instance proportions, and the area filter gate.

An instance map is split into one boolean raster per instance id. Masks
whose instance covers more than a threshold fraction of the image are
discarded before feature pooling, so oversized background regions never
dominate the generated labels. The proportion is always computed at the
mask's native resolution, before any resizing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .interchange import InstanceMap


@dataclass
class BinaryMask:
    instance_id: int
    width: int
    height: int
    bits: np.ndarray  # bool, shape (height, width)
    pixel_count: int
    bbox: tuple[int, int, int, int] | None  # (x0, y0, x1, y1) inclusive, None if empty

    @classmethod
    def from_bits(cls, instance_id: int, bits: np.ndarray) -> "BinaryMask":
        bits = np.asarray(bits, dtype=bool)
        ys, xs = np.nonzero(bits)
        if ys.size:
            bbox = (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
        else:
            bbox = None
        return cls(
            instance_id=int(instance_id),
            width=bits.shape[1],
            height=bits.shape[0],
            bits=bits,
            pixel_count=int(ys.size),
            bbox=bbox,
        )


@dataclass(frozen=True)
class FilterConfig:
    """Area gate threshold: keep a mask iff its instance proportion <= sigma."""

    sigma: float = 0.3

    def __post_init__(self) -> None:
        if not 0.0 <= self.sigma <= 1.0:
            raise ValueError(f"sigma must be in [0, 1], got {self.sigma}")


def decompose(imap: InstanceMap) -> list[BinaryMask]:
    """Split an instance map into per-id binary masks, ascending by id.

    The masks are pairwise disjoint and their union is exactly the
    non-zero pixels of the map.
    """
    m = imap.instance_count
    if m == 0:
        return []
    flat = imap.ids.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_ids = flat[order]
    starts = np.searchsorted(sorted_ids, np.arange(1, m + 2))
    masks = []
    for instance_id in range(1, m + 1):
        idx = order[starts[instance_id - 1] : starts[instance_id]]
        bits = np.zeros(flat.shape, dtype=bool)
        bits[idx] = True
        masks.append(BinaryMask.from_bits(instance_id, bits.reshape(imap.ids.shape)))
    return masks


def instance_proportion(mask: BinaryMask) -> float:
    """Fraction of the raster covered by the instance pixels."""
    area = mask.width * mask.height
    if area <= 0:
        raise ValueError("mask has zero area")
    return mask.pixel_count / area


def filter_gate(mask: BinaryMask, cfg: FilterConfig) -> bool:
    """True iff the mask survives the gate (proportion <= sigma, inclusive)."""
    return instance_proportion(mask) <= cfg.sigma


def resize_mask(mask: BinaryMask, out_w: int, out_h: int) -> BinaryMask:
    """Nearest-neighbor resample with half-pixel center mapping.

    Source coordinate for output index d is (d + 0.5) * (in / out) - 0.5,
    rounded to nearest (ties to even) and clamped. Downscaling can empty
    a non-empty mask; callers must check pixel_count.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output size must be >= 1, got {out_w}x{out_h}")
    if out_w == mask.width and out_h == mask.height:
        return BinaryMask.from_bits(mask.instance_id, mask.bits.copy())
    sy = _nearest_indices(mask.height, out_h)
    sx = _nearest_indices(mask.width, out_w)
    return BinaryMask.from_bits(mask.instance_id, mask.bits[np.ix_(sy, sx)])


def _nearest_indices(in_size: int, out_size: int) -> np.ndarray:
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    return np.clip(np.rint(src), 0, in_size - 1).astype(np.intp)


def survival_by_sigma(masks: list[BinaryMask], sigmas: list[float]) -> dict[float, int]:
    """Count gate survivors for several thresholds at once.

    Used by the area-threshold sweep; proportions are computed once, so
    the counts are guaranteed monotone in sigma.
    """
    props = np.array([instance_proportion(m) for m in masks])
    return {s: int((props <= s).sum()) for s in sigmas}


def write_mask_png(mask: BinaryMask, path) -> None:
    """Export with the conventional encoding: 0 = instance, 255 = background."""
    img = np.where(mask.bits, 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path, format="PNG")


def read_mask_png(path, instance_id: int = 0) -> BinaryMask:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return BinaryMask.from_bits(instance_id, arr == 0)
