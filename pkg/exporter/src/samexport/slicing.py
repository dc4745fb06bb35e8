"""Slice 3D volumes into per-slice 8-bit grayscale images.

Intensity is min-max normalized over the whole volume (slices from one
volume stay comparable); a volume with zero dynamic range maps to 0.
Volumes are read from .npy, .npz (first array), or rank-3 ALPT files.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .alpt import read_tensor


def load_volume(path: str | Path) -> np.ndarray:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".npy":
        volume = np.load(path)
    elif suffix == ".npz":
        with np.load(path) as archive:
            volume = archive[archive.files[0]]
    elif suffix == ".alpt":
        volume = read_tensor(path)
    else:
        raise ValueError(f"{path}: unsupported volume format {suffix!r}")
    volume = np.asarray(volume)
    if volume.ndim != 3:
        raise ValueError(f"{path}: expected a rank-3 volume, got shape {volume.shape}")
    return volume


def normalize_volume(volume: np.ndarray) -> np.ndarray:
    """Min-max to [0, 255] uint8 over the whole volume; constant -> 0."""
    v = volume.astype(np.float64)
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.zeros(volume.shape, dtype=np.uint8)
    scaled = (v - lo) / (hi - lo) * 255.0
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def slice_volume(volume_path: str | Path, axis: int, out_dir: str | Path) -> list[Path]:
    """One grayscale PNG per slice along `axis`; names <volume_id>_<index>.png."""
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1, or 2, got {axis}")
    volume_path = Path(volume_path)
    volume = normalize_volume(load_volume(volume_path))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    volume_id = volume_path.stem
    moved = np.moveaxis(volume, axis, 0)
    written = []
    for index in range(moved.shape[0]):
        path = out_dir / f"{volume_id}_{index}.png"
        Image.fromarray(moved[index], mode="L").save(path, format="PNG")
        written.append(path)
    return written
