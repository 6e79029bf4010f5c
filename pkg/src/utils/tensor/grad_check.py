"""
src/utils/tensor/grad_check.py
Finite-difference verification of tape adjoints.
"""

from __future__ import annotations

from typing import Callable, Union

import numpy as np

from src.types.errors import ContractError
from src.utils.tensor.tensor import Tensor, backward, no_grad, precision

ScalarProgram = Callable[[Tensor], Tensor]

# below this magnitude both adjoints are treated as zero
GRAD_CHECK_FLOOR = 1e-8


def numeric_gradient(f: ScalarProgram, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences (f(x+h) - f(x-h)) / 2h for every coordinate of ``x``."""
    grad = np.zeros_like(x)
    with no_grad():
        for index in np.ndindex(x.shape):
            plus, minus = x.copy(), x.copy()
            plus[index] += h
            minus[index] -= h
            grad[index] = (f(Tensor(plus)).item() - f(Tensor(minus)).item()) / (2 * h)
    return grad


def grad_check(f: ScalarProgram, x: Union[Tensor, np.ndarray], h: float = 1e-5) -> float:
    """
    Compare the tape adjoint of ``f`` at ``x`` against central differences.

    Runs in 64-bit precision. Returns the maximum relative error over all
    coordinates, using max(|a|, |b|, 1e-8) as the denominator.
    """
    point = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    with precision(np.float64):
        leaf = Tensor(point, requires_grad=True)
        out = f(leaf)
        if out.size != 1:
            raise ContractError(f"grad_check needs a scalar program, got shape {out.shape}")
        backward(out)
        analytic = leaf.grad.astype(np.float64)
        numeric = numeric_gradient(f, point, h)
    if analytic.size == 0:
        return 0.0
    denominator = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), GRAD_CHECK_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denominator))
