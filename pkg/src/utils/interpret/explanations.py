"""
src/utils/interpret/explanations.py
Relevance maps over input pixels: the model's own attention, vanilla gradients,
integrated gradients and a seeded random control.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np

from src.types.config import AggregationMode, ExplanationMethod
from src.types.errors import ContractError, UnsupportedModeError
from src.types.results import ExplanationMap
from src.utils.capsules import GraphCapsuleNetwork
from src.utils.capsules.layers import capsule_lengths, one_hot
from src.utils.tensor import Tensor, backward, mul, no_grad, reduce

GRADIENT_CHUNK = 32


def _as_batch(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3:
        raise ContractError(f"expected one (C, H, W) image, got shape {image.shape}")
    return image[None]


def upsample_bilinear(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    """
    Resize a 2-d map with bilinear interpolation.

    Output pixel centers are mapped onto the input grid (align-corners off) and
    clamped at the border, so a constant grid stays constant.
    """
    grid = np.asarray(grid, dtype=np.float64)
    in_h, in_w = grid.shape

    def axis_weights(out_size: int, in_size: int):
        pos = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
        pos = np.clip(pos, 0.0, in_size - 1)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, in_size - 1)
        return lo, hi, pos - lo

    r0, r1, wr = axis_weights(height, in_h)
    c0, c1, wc = axis_weights(width, in_w)
    top = grid[r0][:, c0] * (1 - wc) + grid[r0][:, c1] * wc
    bottom = grid[r1][:, c0] * (1 - wc) + grid[r1][:, c1] * wc
    return top * (1 - wr)[:, None] + bottom * wr[:, None]


def mean_attention(model: GraphCapsuleNetwork, image: np.ndarray) -> np.ndarray:
    """Head-averaged attention E, shape (K^2, M); each class column sums to 1."""
    if model.config.aggregation != AggregationMode.GRAPH_POOL:
        raise UnsupportedModeError(
            f"attention explanations need graph-pool aggregation, model uses "
            f"'{model.config.aggregation.value}'"
        )
    with no_grad():
        attention = model(Tensor(_as_batch(image))).attention
    return attention.data[0].astype(np.float64).mean(axis=0)


def attention_explanation(
    model: GraphCapsuleNetwork, image: np.ndarray, target: int
) -> ExplanationMap:
    """The target's K x K column of the mean attention, upsampled to the image size."""
    side = model.config.grid_side
    column = mean_attention(model, image)[:, target].reshape(side, side)
    height, width = np.asarray(image).shape[-2:]
    return ExplanationMap(
        values=upsample_bilinear(column, height, width),
        method=ExplanationMethod.ATTENTION.value,
        target=int(target),
    )


def class_score_gradients(
    model: GraphCapsuleNetwork, images: np.ndarray, targets: Sequence[int]
) -> np.ndarray:
    """
    d|v_target| / d image for a batch, same shape as ``images``.

    Samples do not interact in the forward pass, so differentiating the sum of
    the scores yields every per-sample gradient at once. Parameter gradients
    touched on the way are cleared afterwards.
    """
    grads = np.zeros(images.shape, dtype=np.float64)
    targets = np.asarray(targets)
    for start in range(0, len(images), GRADIENT_CHUNK):
        chunk = slice(start, start + GRADIENT_CHUNK)
        x = Tensor(images[chunk], requires_grad=True)
        lengths = capsule_lengths(model(x).capsules)
        mask = one_hot(targets[chunk], lengths.shape[-1], dtype=lengths.dtype)
        backward(reduce(mul(lengths, mask)))
        grads[chunk] = x.grad
    model.zero_grad()
    return grads


def class_scores(
    model: GraphCapsuleNetwork, images: np.ndarray, targets: Union[int, Sequence[int]]
) -> np.ndarray:
    """|v_target| per image, no recording."""
    with no_grad():
        lengths = capsule_lengths(model(Tensor(images)).capsules).data
    targets = np.broadcast_to(np.asarray(targets), (lengths.shape[0],))
    return lengths[np.arange(lengths.shape[0]), targets].astype(np.float64)


def _collapse_channels(values: np.ndarray) -> np.ndarray:
    return values.sum(axis=0) if values.shape[0] > 1 else values[0]


def vanilla_gradient(model: GraphCapsuleNetwork, image: np.ndarray, target: int) -> ExplanationMap:
    grad = class_score_gradients(model, _as_batch(image), [target])[0]
    return ExplanationMap(
        values=_collapse_channels(np.abs(grad)),
        method=ExplanationMethod.GRADIENT.value,
        target=int(target),
    )


def integrated_gradients(
    model: GraphCapsuleNetwork,
    image: np.ndarray,
    target: int,
    steps: int = 50,
    baseline: Optional[np.ndarray] = None,
) -> ExplanationMap:
    """
    Midpoint Riemann sum along baseline -> image (black baseline by default).

    attribution = (image - baseline) * mean_k grad(baseline + (k + 1/2)/steps * (image - baseline))
    """
    if steps < 1:
        raise ContractError(f"integrated gradients needs steps >= 1, got {steps}")
    x = _as_batch(image)[0]
    base = np.zeros_like(x) if baseline is None else np.asarray(baseline, dtype=x.dtype)
    alphas = (np.arange(steps) + 0.5) / steps
    path = base[None] + alphas[:, None, None, None].astype(x.dtype) * (x - base)[None]
    grads = class_score_gradients(model, path.astype(x.dtype), [target] * steps)
    attributions = (x - base).astype(np.float64) * grads.mean(axis=0)
    return ExplanationMap(
        values=_collapse_channels(attributions),
        method=ExplanationMethod.INTEGRATED_GRADIENTS.value,
        target=int(target),
    )


def random_explanation(
    image: np.ndarray, seed: Union[int, Sequence[int]], target: int = -1
) -> ExplanationMap:
    """Uniform [0, 1) values that depend only on the seed and the image size."""
    height, width = np.asarray(image).shape[-2:]
    values = np.random.default_rng(seed).random((height, width))
    return ExplanationMap(values=values, method=ExplanationMethod.RANDOM.value, target=target)


def explain(
    model: GraphCapsuleNetwork,
    image: np.ndarray,
    target: int,
    method: Union[str, ExplanationMethod],
    seed: Union[int, Sequence[int]] = 0,
    ig_steps: int = 50,
) -> ExplanationMap:
    method = ExplanationMethod(method)
    if method == ExplanationMethod.ATTENTION:
        return attention_explanation(model, image, target)
    if method == ExplanationMethod.GRADIENT:
        return vanilla_gradient(model, image, target)
    if method == ExplanationMethod.INTEGRATED_GRADIENTS:
        return integrated_gradients(model, image, target, steps=ig_steps)
    return random_explanation(image, seed, target)
