"""
src/utils/attacks/fgsm.py
Fast gradient sign attacks on the margin loss and their success rates.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np

from src.types.config import AttackMode
from src.types.dataset import LabeledImageSet
from src.types.errors import ContractError
from src.types.results import AttackReport, AttackRow
from src.utils.capsules import GraphCapsuleNetwork, margin_loss
from src.utils.tensor import Tensor, backward, scale
from src.utils.training.trainer import correct_indices

DEFAULT_EPSILONS = (0.01, 0.02, 0.03, 0.04, 0.05)


def _check_pixels(images: np.ndarray) -> None:
    if images.size and (images.min() < 0.0 or images.max() > 1.0):
        raise ContractError("attack inputs must lie in [0, 1]")


def fgsm_batch(
    model: GraphCapsuleNetwork,
    images: np.ndarray,
    labels: Sequence[int],
    epsilon: float,
    mode: Union[str, AttackMode] = AttackMode.UNTARGETED,
    targets: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    One signed-gradient step per image, clipped to [0, 1].

    Untargeted steps climb the margin loss of the true label; targeted steps
    descend the margin loss of the target. Samples are independent, so the
    batch loss (scaled back to a sum) gives per-sample gradient signs.
    """
    mode = AttackMode(mode)
    if not epsilon > 0:
        raise ContractError(f"epsilon must be positive, got {epsilon}")
    if mode == AttackMode.TARGETED and targets is None:
        raise ContractError("targeted attack needs a target class per image")
    images = np.asarray(images)
    _check_pixels(images)
    goal = np.asarray(labels if mode == AttackMode.UNTARGETED else targets)
    x = Tensor(images, requires_grad=True)
    loss = margin_loss(model(x).capsules, goal)
    backward(scale(loss, len(goal)))
    model.zero_grad()
    direction = np.sign(x.grad)
    if mode == AttackMode.TARGETED:
        direction = -direction
    origin = images.astype(np.float64)
    moved = np.clip(origin + epsilon * direction, 0.0, 1.0).astype(images.dtype)
    # rounding to the image dtype may land just outside the epsilon box
    over = np.abs(moved.astype(np.float64) - origin) > epsilon
    moved[over] = np.nextafter(moved[over], images[over])
    return moved


def fgsm(
    model: GraphCapsuleNetwork,
    image: np.ndarray,
    label: int,
    epsilon: float,
    mode: Union[str, AttackMode] = AttackMode.UNTARGETED,
    target: Optional[int] = None,
) -> np.ndarray:
    """Single (C, H, W) image version of :func:`fgsm_batch`."""
    targets = None if target is None else [target]
    return fgsm_batch(model, np.asarray(image)[None], [label], epsilon, mode, targets)[0]


def draw_targets(labels: np.ndarray, ids: np.ndarray, num_classes: int, seed: int) -> np.ndarray:
    """Uniform wrong class per sample from ``default_rng([seed, id])``."""
    targets = np.empty(len(labels), dtype=np.int64)
    for i, (label, sample_id) in enumerate(zip(labels, ids)):
        wrong = [c for c in range(num_classes) if c != int(label)]
        rng = np.random.default_rng([seed, int(sample_id)])
        targets[i] = wrong[int(rng.integers(len(wrong)))]
    return targets


def success_rate(
    model: GraphCapsuleNetwork,
    dataset: LabeledImageSet,
    epsilons: Sequence[float] = DEFAULT_EPSILONS,
    mode: Union[str, AttackMode] = AttackMode.UNTARGETED,
    seed: int = 0,
    limit: Optional[int] = None,
    batch_size: int = 128,
) -> AttackReport:
    """
    Attack every correctly classified sample at each epsilon.

    Untargeted success means the prediction changed; targeted success means
    the prediction equals the drawn target.
    """
    mode = AttackMode(mode)
    if not epsilons:
        raise ContractError("epsilon grid must not be empty")
    ids = correct_indices(model, dataset, batch_size)
    if limit is not None:
        ids = ids[:limit]
    if ids.size == 0:
        raise ContractError(
            f"no correctly classified samples in '{dataset.name}' ({len(dataset)} examined); "
            "nothing to attack"
        )
    labels = dataset.labels[ids]
    targets = (
        draw_targets(labels, ids, model.config.num_classes, seed)
        if mode == AttackMode.TARGETED
        else None
    )
    rows = []
    for epsilon in epsilons:
        successes = 0
        for start in range(0, ids.size, batch_size):
            chunk = slice(start, start + batch_size)
            adversarial = fgsm_batch(
                model,
                dataset.images[ids[chunk]],
                labels[chunk],
                epsilon,
                mode,
                None if targets is None else targets[chunk],
            )
            predicted = np.atleast_1d(model.predict(adversarial))
            if mode == AttackMode.TARGETED:
                successes += int(np.sum(predicted == targets[chunk]))
            else:
                successes += int(np.sum(predicted != labels[chunk]))
        rows.append(AttackRow(epsilon=float(epsilon), n_evaluated=int(ids.size), n_success=successes))
    return AttackReport(
        mode=mode.value, rows=rows, n_samples=int(ids.size), seed=seed, epsilons=list(epsilons)
    )
