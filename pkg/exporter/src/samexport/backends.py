"""Model handles: mask generation + image encoding behind one interface.

Two backends are provided. `SamBackend` wraps the real foundation model
(requires the segment-anything package, torch, and a checkpoint).
`ClassicalBackend` is a dependency-light, fully deterministic stand-in:
masks come from color quantization plus connected components, features
from a seeded random projection of patch statistics on the letterboxed
1024x1024 image. It exists so the export format and the downstream
pipeline can be exercised end-to-end on any machine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

FEATURE_SHAPE = (256, 64, 64)
ENCODER_INPUT = 1024


class ModelLoadError(RuntimeError):
    """The requested model backend could not be constructed."""


@dataclass
class RawMask:
    bits: np.ndarray  # bool, image resolution
    score: float  # predicted quality; higher wins overlaps
    order: int  # generation index; breaks score ties


def letterbox_1024(image: np.ndarray) -> np.ndarray:
    """Scale the longest side to 1024 and pad bottom/right with zeros."""
    from PIL import Image

    h, w = image.shape[:2]
    scale = ENCODER_INPUT / max(h, w)
    new_h, new_w = max(round(h * scale), 1), max(round(w * scale), 1)
    resized = np.asarray(
        Image.fromarray(image).resize((new_w, new_h), Image.Resampling.BILINEAR)
    )
    out = np.zeros((ENCODER_INPUT, ENCODER_INPUT, 3), dtype=np.uint8)
    out[:new_h, :new_w] = resized
    return out


class ClassicalBackend:
    """Deterministic classical segmentation + feature projection.

    Regions are connected components of the color-quantized image;
    near-full-frame components are dropped (the real generator rarely
    emits whole-frame masks, and a blank image should export an
    all-zero instance map). Component mean color steers a fixed random
    projection into the encoder's 256-channel feature space, so
    same-colored objects land close together after pooling.
    """

    name = "classical"

    def __init__(self, grid: int = 32, seed: int = 0, quant: int = 32,
                 min_area_fraction: float = 1e-4, max_area_fraction: float = 0.98):
        self.grid = grid
        self.seed = seed
        self.quant = quant
        self.min_area_fraction = min_area_fraction
        self.max_area_fraction = max_area_fraction
        rng = np.random.default_rng(seed)
        self._projection = rng.normal(size=(FEATURE_SHAPE[0], 5)).astype(np.float64)

    def generate_masks(self, image: np.ndarray) -> list[RawMask]:
        image = _as_rgb(image)
        h, w = image.shape[:2]
        quantized = (image // self.quant).astype(np.int32)
        packed = quantized[:, :, 0] * 4096 + quantized[:, :, 1] * 64 + quantized[:, :, 2]
        masks: list[RawMask] = []
        order = 0
        min_area = max(int(self.min_area_fraction * h * w), 1)
        max_area = int(self.max_area_fraction * h * w)
        for value in np.unique(packed):
            labeled, n = ndimage.label(packed == value)
            for comp in range(1, n + 1):
                bits = labeled == comp
                area = int(bits.sum())
                if area < min_area or area > max_area:
                    continue
                # uniformity of the underlying pixels stands in for mask quality
                region = image[bits].astype(np.float64)
                score = float(1.0 / (1.0 + region.std(axis=0).mean()))
                masks.append(RawMask(bits=bits, score=score, order=order))
                order += 1
        return masks

    def encode_features(self, image: np.ndarray) -> np.ndarray:
        square = letterbox_1024(_as_rgb(image)).astype(np.float64) / 255.0
        patch = ENCODER_INPUT // FEATURE_SHAPE[1]
        pooled = square.reshape(
            FEATURE_SHAPE[1], patch, FEATURE_SHAPE[2], patch, 3
        ).mean(axis=(1, 3))
        ys, xs = np.meshgrid(
            np.linspace(0.0, 1.0, FEATURE_SHAPE[1]),
            np.linspace(0.0, 1.0, FEATURE_SHAPE[2]),
            indexing="ij",
        )
        stats = np.concatenate([pooled, ys[..., None], xs[..., None]], axis=2)
        feats = np.einsum("cs,yxs->cyx", self._projection, stats)
        return feats.astype(np.float32)


class SamBackend:
    """The real model: automatic mask generation + ViT encoder features.

    Needs the segment-anything package, torch, and a model checkpoint;
    construction fails with ModelLoadError when any of those are
    missing. One instance per process.
    """

    name = "sam"

    def __init__(self, checkpoint: str, model_type: str = "vit_h",
                 device: str = "cpu", grid: int = 32):
        self.grid = grid
        try:
            import torch
            from segment_anything import (
                SamAutomaticMaskGenerator,
                sam_model_registry,
            )
        except ImportError as exc:
            raise ModelLoadError(f"segment-anything backend unavailable: {exc}") from exc
        try:
            sam = sam_model_registry[model_type](checkpoint=checkpoint)
        except (FileNotFoundError, KeyError, RuntimeError) as exc:
            raise ModelLoadError(f"cannot load {model_type} from {checkpoint}: {exc}") from exc
        self._torch = torch
        self._sam = sam.to(device)
        self._device = device
        self._generator = SamAutomaticMaskGenerator(self._sam, points_per_side=grid)

    def generate_masks(self, image: np.ndarray) -> list[RawMask]:
        records = self._generator.generate(_as_rgb(image))
        return [
            RawMask(
                bits=np.asarray(rec["segmentation"], dtype=bool),
                score=float(rec["predicted_iou"]),
                order=i,
            )
            for i, rec in enumerate(records)
        ]

    def encode_features(self, image: np.ndarray) -> np.ndarray:
        torch = self._torch
        square = letterbox_1024(_as_rgb(image))
        tensor = torch.as_tensor(square, device=self._device)
        tensor = tensor.permute(2, 0, 1).contiguous()[None, :, :, :].float()
        with torch.no_grad():
            batched = self._sam.preprocess(tensor)
            feats = self._sam.image_encoder(batched)
        out = feats[0].cpu().numpy().astype(np.float32)
        if out.shape != FEATURE_SHAPE:
            raise ModelLoadError(f"encoder returned {out.shape}, expected {FEATURE_SHAPE}")
        return out


def make_backend(name: str, grid: int, seed: int,
                 checkpoint: str = "", model_type: str = "vit_h",
                 device: str = "cpu"):
    if name == "classical":
        return ClassicalBackend(grid=grid, seed=seed)
    if name == "sam":
        if not checkpoint:
            raise ModelLoadError("sam backend needs --checkpoint")
        return SamBackend(checkpoint=checkpoint, model_type=model_type,
                          device=device, grid=grid)
    raise ModelLoadError(f"unknown backend {name!r}")


def _as_rgb(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim == 2:
        image = np.stack([image] * 3, axis=2)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxW or HxWx3 image, got shape {image.shape}")
    return image.astype(np.uint8, copy=False)
