from pathlib import Path

import numpy as np
import pytest
from PIL import Image


def paint_test_image(rng: np.random.Generator, size: int = 160) -> np.ndarray:
    """Gray background with a few solid colored rectangles."""
    image = np.full((size, size, 3), 90, dtype=np.uint8)
    colors = [(200, 40, 40), (40, 200, 40), (40, 40, 200), (220, 200, 30)]
    for _ in range(int(rng.integers(2, 5))):
        color = colors[int(rng.integers(len(colors)))]
        side = int(rng.integers(16, 40))
        y0 = int(rng.integers(0, size - side))
        x0 = int(rng.integers(0, size - side))
        image[y0 : y0 + side, x0 : x0 + side] = color
    return image


@pytest.fixture
def sample_images(tmp_path) -> Path:
    """Five deterministic synthetic photos on disk."""
    rng = np.random.default_rng(42)
    images_dir = tmp_path / "images"
    images_dir.mkdir()
    for i in range(5):
        Image.fromarray(paint_test_image(rng)).save(images_dir / f"photo_{i}.png")
    return images_dir
