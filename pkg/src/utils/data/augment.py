from __future__ import annotations

import numpy as np

from src.types.errors import ContractError


def shift_image(image: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate a (..., H, W) image by (dy, dx) pixels, zero filling the vacated border."""
    height, width = image.shape[-2:]
    out = np.zeros_like(image)
    if abs(dy) >= height or abs(dx) >= width:
        return out
    src_rows = slice(max(0, -dy), height - max(0, dy))
    dst_rows = slice(max(0, dy), height - max(0, -dy))
    src_cols = slice(max(0, -dx), width - max(0, dx))
    dst_cols = slice(max(0, dx), width - max(0, -dx))
    out[..., dst_rows, dst_cols] = image[..., src_rows, src_cols]
    return out


def augment_shift(image: np.ndarray, max_shift: int, rng: np.random.Generator) -> np.ndarray:
    """Random integer translation drawn uniformly from [-max_shift, max_shift]^2."""
    if max_shift < 0:
        raise ContractError(f"max_shift must be >= 0, got {max_shift}")
    if max_shift == 0:
        return image.copy()
    dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
    return shift_image(image, int(dy), int(dx))


def augment_batch(images: np.ndarray, max_shift: int, rng: np.random.Generator) -> np.ndarray:
    if max_shift == 0:
        return images.copy()
    return np.stack([augment_shift(image, max_shift, rng) for image in images])
