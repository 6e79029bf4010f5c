"""
src/utils/capsules/decoder.py
Fully connected reconstruction net fed with the target capsule only.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import TYPE_CHECKING, List, Tuple

import numpy as np

from src.types.config import ModelConfig
from src.utils.capsules.layers import one_hot
from src.utils.tensor import Tensor, linear, mul, reduce, relu, reshape, scale, sigmoid, square, sub

if TYPE_CHECKING:
    from src.utils.capsules.model import GraphCapsuleNetwork

RECONSTRUCTION_WEIGHT = 0.0005


class Decoder:
    """M * D_out -> hidden widths -> C * H * W pixels, ReLU between layers, sigmoid out."""

    def __init__(self, model: "GraphCapsuleNetwork"):
        self.model = model

    @staticmethod
    def parameter_shapes(config: ModelConfig) -> "OrderedDict[str, Tuple[int, ...]]":
        shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
        if not config.has_decoder:
            return shapes
        widths = (
            [config.num_classes * config.capsule_dim_out]
            + list(config.decoder_hidden)
            + [config.image_channels * config.image_side * config.image_side]
        )
        for index, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
            shapes[f"decoder.fc{index}.weight"] = (w_in, w_out)
            shapes[f"decoder.fc{index}.bias"] = (w_out,)
        return shapes

    def layers(self) -> List[Tuple[Tensor, Tensor]]:
        count = len(self.model.config.decoder_hidden) + 1
        params = self.model.params
        return [
            (params[f"decoder.fc{i}.weight"], params[f"decoder.fc{i}.bias"]) for i in range(count)
        ]

    def mask(self, capsules: Tensor, targets) -> Tensor:
        """Zero every row except the target's, then flatten to (B, M * D_out)."""
        batch = capsules if capsules.ndim == 3 else reshape(capsules, (1,) + capsules.shape)
        labels = np.atleast_1d(np.asarray(targets))
        keep = one_hot(labels, batch.shape[1], dtype=batch.dtype)[:, :, None]
        masked = mul(batch, keep)
        return reshape(masked, (batch.shape[0], batch.shape[1] * batch.shape[2]))

    def decode(self, flat: Tensor) -> Tensor:
        layers = self.layers()
        x = flat
        for index, (weight, bias) in enumerate(layers):
            x = linear(x, weight, bias)
            x = relu(x) if index < len(layers) - 1 else sigmoid(x)
        return x

    def __call__(self, capsules: Tensor, targets) -> Tensor:
        return self.decode(self.mask(capsules, targets))


def reconstruction_loss(
    decoder: Decoder,
    capsules: Tensor,
    images: Tensor,
    targets,
    weight: float = RECONSTRUCTION_WEIGHT,
) -> Tensor:
    """weight * mean squared error between the masked-capsule decode and the input pixels."""
    decoded = decoder(capsules, targets)
    pixels = reshape(images, decoded.shape)
    return scale(reduce(square(sub(decoded, pixels)), mode="mean"), weight)
