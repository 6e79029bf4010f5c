from __future__ import annotations

import os
from functools import lru_cache
from typing import Optional

import numpy as np

from src.services.idx_service import load_idx
from src.types.dataset import LabeledImageSet

IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _resolve(directory: str, stem: str) -> str:
    candidates = [os.path.join(directory, stem + suffix) for suffix in (".gz", "")]
    for path in candidates:
        if os.path.exists(path):
            return path
    raise FileNotFoundError(f"none of {candidates} exists")


@lru_cache(maxsize=8)
def _load_split(name: str, data_dir: str, split: str) -> LabeledImageSet:
    if split not in IDX_FILES:
        raise ValueError(f"split must be one of {sorted(IDX_FILES)}")
    directory = os.path.join(data_dir, name)
    images_stem, labels_stem = IDX_FILES[split]
    return load_idx(
        _resolve(directory, images_stem), _resolve(directory, labels_stem), name=f"{name}-{split}"
    )


def load_dataset(
    name: str, data_dir: str, split: str, limit: Optional[int] = None
) -> LabeledImageSet:
    """
    Load ``<data_dir>/<name>/<idx files>`` for one split.

    Args:
        name: dataset directory, e.g. ``mnist`` or ``fashion-mnist``.
        data_dir: root holding one directory per dataset.
        split: ``train`` or ``test``.
        limit: keep only the first ``limit`` examples.

    Returns:
        The loaded set; repeated calls share one decoded copy.
    """
    dataset = _load_split(name, os.path.abspath(data_dir), split)
    return dataset.head(limit) if limit else dataset


def make_synthetic_set(
    count: int,
    num_classes: int,
    image_side: int,
    seed: int = 0,
    noise: float = 0.05,
    name: str = "synthetic",
) -> LabeledImageSet:
    """
    Linearly separable toy images: class c lights a square block at its own position.

    Blocks sit on a coarse grid of cells in row-major order, so class identity is
    purely spatial. Labels cycle through the classes.
    """
    rng = np.random.default_rng(seed)
    cells = int(np.ceil(np.sqrt(num_classes)))
    block = max(1, image_side // cells)
    labels = np.arange(count) % num_classes
    images = rng.uniform(0.0, noise, size=(count, 1, image_side, image_side))
    for index, label in enumerate(labels):
        row, col = divmod(int(label), cells)
        images[index, 0, row * block : (row + 1) * block, col * block : (col + 1) * block] = 1.0
    return LabeledImageSet(
        images=images.astype(np.float32), labels=labels.astype(np.int64), name=name
    )
