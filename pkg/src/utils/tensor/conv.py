"""
src/utils/tensor/conv.py
Valid (unpadded) 2-d cross-correlation via im2col.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.types.errors import ContractError, DimensionError
from src.utils.tensor.tensor import Tensor, as_tensor


def conv_output_extent(extent: int, kernel: int, stride: int) -> int:
    return (extent - kernel) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(N, C, H, W) -> (N, Ho, Wo, C * kh * kw) patch matrix."""
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = windows.shape[:4]
    return np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n, ho, wo, c * kh * kw
    )


def conv2d(input, kernel, bias, stride: int = 1) -> Tensor:
    """
    Cross-correlate an NCHW input with an OIKhKw kernel.

    Output extent per axis is floor((H - Kh) / stride) + 1. Differentiable with
    respect to the input, the kernel and the bias.
    """
    x, k, b = as_tensor(input), as_tensor(kernel), as_tensor(bias)
    if stride < 1:
        raise ContractError(f"stride must be positive, got {stride}")
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be NCHW, got shape {x.shape}")
    if k.ndim != 4:
        raise DimensionError(f"conv2d kernel must be OIKhKw, got shape {k.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = k.shape
    if ci != c:
        raise DimensionError(f"conv2d channel mismatch: input has {c}, kernel expects {ci}")
    if b.shape != (o,):
        raise DimensionError(f"conv2d bias must have shape ({o},), got {b.shape}")
    if h < kh or w < kw:
        raise DimensionError(f"conv2d kernel {kh}x{kw} does not fit input {h}x{w}")

    ho, wo = conv_output_extent(h, kh, stride), conv_output_extent(w, kw, stride)
    cols = _im2col(x.data, kh, kw, stride).reshape(n * ho * wo, c * kh * kw)
    kmat = k.data.reshape(o, c * kh * kw)
    out = (cols @ kmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2) + b.data[None, :, None, None]

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, o)
        gk = (g2.T @ cols).reshape(k.shape) if k.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if b.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ kmat).reshape(n, ho, wo, c, kh, kw)
            gx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
        return gx, gk, gb

    return Tensor._from_op("conv2d", np.ascontiguousarray(out), (x, k, b), backward)
