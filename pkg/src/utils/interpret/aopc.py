"""
src/utils/interpret/aopc.py
Area over the perturbation curve: replace the most relevant pixels with random
patches, one step at a time, and track how fast the class score falls.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from src.types.errors import ContractError
from src.types.results import AopcResult
from src.utils.capsules import GraphCapsuleNetwork
from src.utils.interpret.explanations import class_scores


def relevance_ranking(values: np.ndarray) -> np.ndarray:
    """Flat pixel indices by descending relevance; ties keep row-major order."""
    return np.argsort(-np.asarray(values, dtype=np.float64).ravel(), kind="stable")


def perturbation_sequence(
    image: np.ndarray,
    relevance: np.ndarray,
    steps: int,
    patch: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    X(0) .. X(steps), shape (steps + 1, C, H, W).

    Step k centers a patch x patch block of uniform [0, 1) values on the
    highest-ranked pixel not yet perturbed, clipped at the image border. Every
    pixel the block covers leaves the ranking.
    """
    channels, height, width = image.shape
    ranking = relevance_ranking(relevance)
    consumed = np.zeros((height, width), dtype=bool)
    before = patch // 2
    sequence = np.empty((steps + 1,) + image.shape, dtype=image.dtype)
    sequence[0] = image
    current = image.copy()
    cursor = 0
    for k in range(1, steps + 1):
        while cursor < ranking.size and consumed.flat[ranking[cursor]]:
            cursor += 1
        if cursor == ranking.size:
            raise ContractError(f"all {height * width} pixels were perturbed before step {k}")
        row, col = divmod(int(ranking[cursor]), width)
        top, left = max(0, row - before), max(0, col - before)
        bottom, right = min(height, row - before + patch), min(width, col - before + patch)
        block = rng.uniform(0.0, 1.0, size=(channels, bottom - top, right - left))
        current[:, top:bottom, left:right] = block
        consumed[top:bottom, left:right] = True
        sequence[k] = current
    return sequence


def aopc(
    model: GraphCapsuleNetwork,
    images: np.ndarray,
    explanations: Sequence[np.ndarray],
    steps: int,
    patch: int = 5,
    seed: int = 0,
    method: str = "",
    image_ids: Optional[Sequence[int]] = None,
) -> AopcResult:
    """
    Mean drop f(X(0)) - f(X(k)) for k = 1..steps, f = norm of the originally
    predicted class capsule, and AOPC = sum of the drops / (steps + 1).

    The patch values for image i come from ``default_rng([seed, image_ids[i]])``,
    so every method scored with the same seed sees the same random stream.
    """
    images = np.asarray(images)
    if images.ndim != 4:
        raise ContractError(f"images must be (count, C, H, W), got {images.shape}")
    count, _, height, width = images.shape
    if count == 0:
        raise ContractError("AOPC needs at least one image")
    if len(explanations) != count:
        raise ContractError(f"{len(explanations)} explanations for {count} images")
    if steps < 1:
        raise ContractError(f"AOPC needs steps >= 1, got {steps}")
    if steps > height * width:
        raise ContractError(f"{steps} steps exceed the {height * width} available pixels")
    if patch < 1:
        raise ContractError(f"patch size must be >= 1, got {patch}")
    ids = list(range(count)) if image_ids is None else [int(i) for i in image_ids]

    drops = np.zeros((count, steps), dtype=np.float64)
    for i in range(count):
        relevance = np.asarray(explanations[i])
        if relevance.shape != (height, width):
            raise ContractError(
                f"explanation {i} has shape {relevance.shape}, image is {(height, width)}"
            )
        rng = np.random.default_rng([seed, ids[i]])
        sequence = perturbation_sequence(images[i], relevance, steps, patch, rng)
        predicted = int(model.predict(images[i]))
        scores = class_scores(model, sequence, predicted)
        drops[i] = scores[0] - scores[1:]
    curve = drops.mean(axis=0)
    return AopcResult(
        curve=curve, aopc=float(curve.sum() / (steps + 1)), method=method, n_images=count
    )
