"""
src/utils/training/sweep.py
Disentanglement sweep: nudge one dimension of the predicted class capsule and decode.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from src.types.errors import ContractError, DecoderMissingError
from src.utils.capsules import GraphCapsuleNetwork
from src.utils.tensor import Tensor, no_grad

SWEEP_DELTAS = tuple(round(0.05 * k, 2) for k in range(-5, 6))


@dataclass
class SweepResult:
    """Decoded images (C, H, W), one per delta, for one capsule dimension."""

    dim: int
    predicted: int
    deltas: List[float]
    images: List[np.ndarray]


def perturb_capsule_sweep(
    model: GraphCapsuleNetwork, image: np.ndarray, dim: int, deltas=SWEEP_DELTAS
) -> SweepResult:
    if model.decoder is None:
        raise DecoderMissingError("capsule sweep needs a model with a reconstruction decoder")
    d_out = model.config.capsule_dim_out
    if not 0 <= dim < d_out:
        raise ContractError(f"capsule dimension {dim} is out of range [0, {d_out})")
    pixels = np.asarray(image)
    shape = pixels.shape if pixels.ndim == 3 else pixels.shape[-3:]
    with no_grad():
        capsules = model(Tensor(pixels)).capsules.data[0]
        predicted = int(np.argmax(np.sqrt((capsules * capsules).sum(axis=-1))))
        images = []
        for delta in deltas:
            nudged = capsules.copy()
            nudged[predicted, dim] += nudged.dtype.type(delta)
            decoded = model.reconstruct(Tensor(nudged[None]), [predicted])
            images.append(decoded.data.reshape(shape))
    return SweepResult(dim=dim, predicted=predicted, deltas=list(deltas), images=images)
