from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.types.errors import ContractError


@dataclass(frozen=True)
class LabeledImageSet:
    """
    Images (count, 1, H, W) in [0, 1] with one class index per image.

    Treated as immutable: ``subset`` and friends return new sets.
    """

    images: np.ndarray
    labels: np.ndarray
    name: str = ""

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ContractError(f"images must be (count, C, H, W), got {self.images.shape}")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.images.shape[0]:
            raise ContractError(
                f"{self.labels.shape[0] if self.labels.ndim else 0} labels "
                f"for {self.images.shape[0]} images"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ContractError("pixel values must lie in [0, 1]")
        if self.labels.size and self.labels.min() < 0:
            raise ContractError("labels must be non-negative")
        self.images.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0

    def subset(self, indices) -> "LabeledImageSet":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledImageSet(
            images=self.images[indices].copy(), labels=self.labels[indices].copy(), name=self.name
        )

    def head(self, limit: int) -> "LabeledImageSet":
        return self.subset(np.arange(min(limit, len(self))))
