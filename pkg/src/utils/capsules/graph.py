"""
src/utils/capsules/graph.py
Gaussian spatial-proximity graph over the K x K primary capsule grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from src.types.errors import ConfigurationError
from src.utils.tensor import Tensor


@dataclass(frozen=True)
class Adjacency:
    """K^2 x K^2 adjacency plus the 1-based (row, col) coordinate of every node."""

    matrix: np.ndarray
    coordinates: np.ndarray
    sigma: float
    normalized: bool = False

    @property
    def num_nodes(self) -> int:
        return int(self.matrix.shape[0])

    def as_tensor(self) -> Tensor:
        return Tensor(self.matrix)


def grid_coordinates(grid_side: int) -> np.ndarray:
    """Row-major coordinates (1, 1) .. (K, K), shape (K^2, 2)."""
    rows, cols = np.meshgrid(
        np.arange(1, grid_side + 1), np.arange(1, grid_side + 1), indexing="ij"
    )
    return np.stack([rows.reshape(-1), cols.reshape(-1)], axis=1)


@lru_cache(maxsize=32)
def build_adjacency(grid_side: int, sigma: float, normalize: bool = False) -> Adjacency:
    """
    A_ij = exp(-||p_i - p_j||^2 / (2 sigma^2)) over the grid coordinates.

    The raw matrix is symmetric with a unit diagonal. ``normalize`` divides
    each row by its sum; it is off unless a config asks for it.
    """
    if grid_side < 1:
        raise ConfigurationError(f"grid side must be at least 1, got {grid_side}")
    if not sigma > 0:
        raise ConfigurationError(f"sigma must be positive, got {sigma}")
    coordinates = grid_coordinates(grid_side)
    deltas = coordinates[:, None, :] - coordinates[None, :, :]
    squared = (deltas.astype(np.float64) ** 2).sum(axis=-1)
    matrix = np.exp(-squared / (2.0 * float(sigma) ** 2))
    # far pairs underflow for small sigma; keep every entry strictly positive
    matrix = np.maximum(matrix, np.finfo(np.float64).tiny)
    if normalize:
        matrix = matrix / matrix.sum(axis=1, keepdims=True)
    matrix.setflags(write=False)
    coordinates.setflags(write=False)
    return Adjacency(
        matrix=matrix, coordinates=coordinates, sigma=float(sigma), normalized=normalize
    )
