"""
src/types/results.py
Structured results returned by the model, the trainer and the evaluation harnesses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from src.utils.tensor import Tensor


@dataclass
class HeadAttention:
    """Attention of one head: (K^2, M), every class column sums to 1."""

    head: int
    att: np.ndarray


@dataclass
class ForwardOutput:
    """
    Result of one forward pass.

    Attributes:
    capsules:
        Class capsules V, (B, M, D_out). Row norms are class confidences.
    attention:
        Per-head attention (B, L, K^2, M) for graph-pool models, otherwise None.
    primary:
        Primary capsules (B, L, K^2, D_in).
    """

    capsules: Tensor
    attention: Optional[Tensor]
    primary: Tensor

    def head_attentions(self, sample: int = 0) -> List[HeadAttention]:
        if self.attention is None:
            return []
        maps = self.attention.data[sample]
        return [HeadAttention(head=l, att=maps[l].copy()) for l in range(maps.shape[0])]


@dataclass
class ParameterTable:
    conv: int
    transform: int
    pooling: int
    decoder: int

    @property
    def aggregation(self) -> int:
        return self.transform + self.pooling

    @property
    def total(self) -> int:
        return self.conv + self.transform + self.pooling + self.decoder

    def rows(self) -> List[Dict[str, int]]:
        return [
            {"component": name, "parameters": value}
            for name, value in (
                ("conv", self.conv),
                ("transform", self.transform),
                ("pooling", self.pooling),
                ("decoder", self.decoder),
                ("total", self.total),
            )
        ]


@dataclass
class EvalReport:
    accuracy: float
    per_class: Dict[int, float]
    counts: Dict[int, int]
    n_samples: int
    loss: Optional[float] = None

    def rows(self) -> List[Dict[str, float]]:
        return [
            {"class": label, "count": self.counts[label], "accuracy": self.per_class[label]}
            for label in sorted(self.per_class)
        ]


@dataclass
class ExplanationMap:
    """Relevance map aligned with the input image (H, W)."""

    values: np.ndarray
    method: str
    target: int


@dataclass
class AopcResult:
    """
    Perturbation curve and its area.

    ``curve[k-1]`` is the mean drop f(X0) - f(Xk) over images; ``aopc`` is
    sum(curve) / (steps + 1).
    """

    curve: np.ndarray
    aopc: float
    method: str
    n_images: int

    @property
    def steps(self) -> int:
        return int(self.curve.shape[0])

    def recompute(self) -> float:
        return float(self.curve.sum() / (self.steps + 1))


@dataclass
class AttackRow:
    epsilon: float
    n_evaluated: int
    n_success: int

    @property
    def success_rate(self) -> float:
        return self.n_success / self.n_evaluated if self.n_evaluated else 0.0


@dataclass
class AttackReport:
    mode: str
    rows: List[AttackRow]
    n_samples: int
    seed: int
    epsilons: List[float] = field(default_factory=list)

    def success_rates(self) -> List[float]:
        return [row.success_rate for row in self.rows]


@dataclass
class MetricRow:
    epoch: int
    split: str
    loss: float
    accuracy: float


@dataclass
class TrainState:
    """
    Everything the training loop carries between steps.

    Attributes:
    epoch:
        Number of completed epochs.
    step:
        Number of optimizer updates applied.
    seed:
        Seed for shuffling and augmentation.
    lr:
        Learning rate of the most recent epoch.
    moments:
        Adam first and second moment buffers keyed ``m.<param>`` / ``v.<param>``.
    metrics:
        One row per (epoch, split).
    """

    epoch: int = 0
    step: int = 0
    seed: int = 0
    lr: float = 0.0
    moments: Dict[str, np.ndarray] = field(default_factory=dict)
    metrics: List[MetricRow] = field(default_factory=list)

    def metric_rows(self) -> List[Dict[str, object]]:
        return [
            {"epoch": r.epoch, "split": r.split, "loss": r.loss, "accuracy": r.accuracy}
            for r in self.metrics
        ]

    def last(self, split: str) -> Optional[MetricRow]:
        rows = [r for r in self.metrics if r.split == split]
        return rows[-1] if rows else None
