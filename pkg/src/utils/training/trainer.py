"""
src/utils/training/trainer.py
Training loop (margin + reconstruction loss, Adam, exponential lr decay) and evaluation.
"""

from __future__ import annotations

from typing import Dict, Optional, Tuple

import numpy as np

from src.services.checkpoint_service import Checkpoint
from src.types.config import TrainConfig
from src.types.dataset import LabeledImageSet
from src.types.errors import ContractError, NumericError
from src.types.results import EvalReport, MetricRow, TrainState
from src.utils.capsules import GraphCapsuleNetwork, margin_loss, reconstruction_loss
from src.utils.capsules.layers import capsule_lengths
from src.utils.data.batching import Batch, BatchIterator
from src.utils.tensor import Tensor, add, backward, no_grad
from src.utils.training.hooks import TrainerHooks
from src.utils.training.optimizer import Adam


def total_loss(
    model: GraphCapsuleNetwork, images: Tensor, labels: np.ndarray, reconstruction_weight: float
) -> Tuple[Tensor, Tensor]:
    """Margin loss plus weighted reconstruction loss; also returns the class capsules."""
    capsules = model(images).capsules
    loss = margin_loss(capsules, labels)
    if model.decoder is not None and reconstruction_weight > 0:
        loss = add(
            loss,
            reconstruction_loss(model.decoder, capsules, images, labels, reconstruction_weight),
        )
    return loss, capsules


def _predictions(capsules: Tensor) -> np.ndarray:
    with no_grad():
        return np.argmax(capsule_lengths(capsules).data, axis=-1)


class Trainer:
    """
    Owns the optimizer and state for one model.

    Runs are deterministic given (model init, data, config, seed): batch order
    and augmentation come from the seed, and every reduction is a plain numpy
    reduction in a fixed order.
    """

    def __init__(
        self,
        model: GraphCapsuleNetwork,
        config: TrainConfig,
        seed: int = 0,
        hooks: Optional[TrainerHooks] = None,
        state: Optional[TrainState] = None,
    ):
        self.model = model
        self.config = config
        self.hooks = hooks or TrainerHooks()
        self.optimizer = Adam(
            model.parameters(), lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps
        )
        self.state = state or TrainState(seed=seed, lr=config.lr)
        if state is not None and state.moments:
            self.optimizer.load_state_dict(state.moments, state.step)

    def lr_for_epoch(self, epoch: int) -> float:
        return self.config.lr * self.config.lr_decay**epoch

    def train_step(self, batch: Batch) -> Tuple[float, int]:
        """One forward/backward/update; returns (loss, correct predictions)."""
        self.optimizer.zero_grad()
        images = Tensor(batch.images)
        loss, capsules = total_loss(
            self.model, images, batch.labels, self.config.reconstruction_weight
        )
        backward(loss)
        self.optimizer.step()
        self.state.step += 1
        correct = int(np.sum(_predictions(capsules) == batch.labels))
        return loss.item(), correct

    def fit(
        self,
        train_set: LabeledImageSet,
        test_set: Optional[LabeledImageSet] = None,
        epochs: Optional[int] = None,
        max_steps: Optional[int] = None,
    ) -> TrainState:
        """
        Train for ``epochs`` more epochs (default from the config).

        ``max_steps`` stops after that many total updates; the partial epoch
        still gets its metric rows. A non-finite value anywhere aborts the run
        with a :class:`NumericError` naming the op that produced it.
        """
        epochs = self.config.epochs if epochs is None else epochs
        iterator = BatchIterator(
            train_set,
            self.config.batch_size,
            seed=self.state.seed,
            augmentation=self.config.augmentation,
        )
        self.hooks.on_train_start(self.config, len(train_set))
        try:
            for _ in range(epochs):
                if max_steps is not None and self.state.step >= max_steps:
                    break
                self._run_epoch(iterator, test_set, max_steps)
        except NumericError as exc:
            error = NumericError(
                exc.op, f"training aborted at epoch {self.state.epoch + 1}, step {self.state.step + 1}"
            )
            self.hooks.on_train_end(self.state, error)
            raise error from exc
        self.hooks.on_train_end(self.state)
        return self.state

    def _run_epoch(
        self, iterator: BatchIterator, test_set: Optional[LabeledImageSet], max_steps: Optional[int]
    ) -> None:
        epoch = self.state.epoch
        self.optimizer.lr = self.state.lr = self.lr_for_epoch(epoch)
        self.hooks.on_epoch_start(epoch, self.optimizer.lr)
        loss_sum, correct, seen = 0.0, 0, 0
        for batch in iterator.iter_epoch(epoch):
            loss, batch_correct = self.train_step(batch)
            loss_sum += loss * len(batch)
            correct += batch_correct
            seen += len(batch)
            self.hooks.on_step(epoch, self.state.step, loss, len(batch))
            if max_steps is not None and self.state.step >= max_steps:
                break
        rows = [MetricRow(epoch + 1, "train", loss_sum / max(seen, 1), correct / max(seen, 1))]
        if test_set is not None and len(test_set):
            report = evaluate(
                self.model, test_set, self.config.eval_batch_size, self.config.reconstruction_weight
            )
            rows.append(MetricRow(epoch + 1, "test", float(report.loss), report.accuracy))
        self.state.metrics.extend(rows)
        self.state.epoch = epoch + 1
        self.state.moments = self.optimizer.state_dict()
        self.hooks.on_epoch_end(epoch, rows)


def train(
    model: GraphCapsuleNetwork,
    train_set: LabeledImageSet,
    config: TrainConfig,
    seed: int = 0,
    test_set: Optional[LabeledImageSet] = None,
    hooks: Optional[TrainerHooks] = None,
    max_steps: Optional[int] = None,
) -> Tuple[TrainState, Checkpoint]:
    """Train a fresh optimizer over ``model``; returns the final state and its checkpoint."""
    trainer = Trainer(model, config, seed=seed, hooks=hooks)
    state = trainer.fit(train_set, test_set=test_set, max_steps=max_steps)
    return state, Checkpoint.from_model(model, state)


def evaluate(
    model: GraphCapsuleNetwork,
    dataset: LabeledImageSet,
    batch_size: int = 256,
    reconstruction_weight: float = 0.0,
) -> EvalReport:
    """Accuracy and per-class accuracy of ``model.predict`` against the labels, no augmentation."""
    if len(dataset) == 0:
        raise ContractError(f"evaluation set '{dataset.name}' is empty")
    predictions = []
    loss_sum = 0.0
    with no_grad():
        for batch in BatchIterator(dataset, batch_size, shuffle=False):
            images = Tensor(batch.images)
            loss, capsules = total_loss(model, images, batch.labels, reconstruction_weight)
            loss_sum += loss.item() * len(batch)
            predictions.append(np.argmax(capsule_lengths(capsules).data, axis=-1))
    predicted = np.concatenate(predictions)
    hits = predicted == dataset.labels
    per_class: Dict[int, float] = {}
    counts: Dict[int, int] = {}
    for label in np.unique(dataset.labels):
        mask = dataset.labels == label
        counts[int(label)] = int(mask.sum())
        per_class[int(label)] = float(hits[mask].mean())
    return EvalReport(
        accuracy=float(hits.mean()),
        per_class=per_class,
        counts=counts,
        n_samples=len(dataset),
        loss=loss_sum / len(dataset),
    )


def predict_all(model: GraphCapsuleNetwork, dataset: LabeledImageSet, batch_size: int = 256) -> np.ndarray:
    if len(dataset) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(
        [
            np.atleast_1d(model.predict(batch.images))
            for batch in BatchIterator(dataset, batch_size, shuffle=False)
        ]
    )


def correct_indices(
    model: GraphCapsuleNetwork, dataset: LabeledImageSet, batch_size: int = 256
) -> np.ndarray:
    """Indices of the examples the model classifies correctly, ascending."""
    return np.flatnonzero(predict_all(model, dataset, batch_size) == dataset.labels)
