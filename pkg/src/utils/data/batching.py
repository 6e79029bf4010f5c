from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from src.types.config import AugmentationSpec
from src.types.dataset import LabeledImageSet
from src.types.errors import ContractError
from src.utils.data.augment import augment_batch


@dataclass
class Batch:
    images: np.ndarray
    labels: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])


class BatchIterator:
    """
    Seeded mini-batches over a dataset.

    Each full pass visits every example once; the order and augmentations of
    epoch ``e`` depend only on (seed, e). The last batch may be short.
    Iterating the object yields one epoch and advances the epoch counter.
    """

    def __init__(
        self,
        dataset: LabeledImageSet,
        batch_size: int,
        seed: int = 0,
        augmentation: Optional[AugmentationSpec] = None,
        shuffle: bool = True,
    ):
        if batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.augmentation = augmentation or AugmentationSpec(max_shift=0)
        self.shuffle = shuffle
        self.epoch = 0

    def __len__(self) -> int:
        return -(-len(self.dataset) // self.batch_size)

    def epoch_order(self, epoch: int) -> np.ndarray:
        if not self.shuffle:
            return np.arange(len(self.dataset))
        return np.random.default_rng([self.seed, epoch]).permutation(len(self.dataset))

    def iter_epoch(self, epoch: int) -> Iterator[Batch]:
        order = self.epoch_order(epoch)
        aug_rng = np.random.default_rng([self.seed, epoch, 1])
        for start in range(0, len(order), self.batch_size):
            indices = order[start : start + self.batch_size]
            images = self.dataset.images[indices]
            if self.augmentation.max_shift:
                images = augment_batch(images, self.augmentation.max_shift, aug_rng)
            yield Batch(images=images, labels=self.dataset.labels[indices], indices=indices)

    def __iter__(self) -> Iterator[Batch]:
        epoch = self.epoch
        self.epoch += 1
        return self.iter_epoch(epoch)


def batches(
    dataset: LabeledImageSet,
    batch_size: int,
    seed: int = 0,
    augmentation: Optional[AugmentationSpec] = None,
    shuffle: bool = True,
) -> BatchIterator:
    return BatchIterator(dataset, batch_size, seed=seed, augmentation=augmentation, shuffle=shuffle)
