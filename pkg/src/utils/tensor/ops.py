"""
src/utils/tensor/ops.py
Differentiable primitives. Each op computes its forward value with numpy and
registers a closure producing the adjoints of its inputs.
"""

from __future__ import annotations

from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from src.types.errors import ContractError, DimensionError
from src.utils.tensor.tensor import Tensor, as_tensor

Axis = Union[None, int, Sequence[int]]

L2_NORM_EPS = 1e-12


# ---- helpers ------------------------------------------------------------------
def _normalize_axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, (int, np.integer)) else tuple(axis)
    normalized = []
    for a in axes:
        a = int(a)
        if not -ndim <= a < ndim:
            raise DimensionError(f"axis {a} is out of range for a {ndim}-d tensor")
        normalized.append(a % ndim)
    if len(set(normalized)) != len(normalized):
        raise DimensionError(f"repeated axis in {axes}")
    return tuple(sorted(normalized))


def _broadcast_shape(op: str, a: Tuple[int, ...], b: Tuple[int, ...]) -> Tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a, b))
    except ValueError as exc:
        raise DimensionError(f"{op}: shapes {a} and {b} do not match") from exc


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum an adjoint back down to the shape of the operand it belongs to."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeezed = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if squeezed:
        grad = grad.sum(axis=squeezed, keepdims=True)
    return grad.reshape(shape)


# ---- elementwise --------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op("add", a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op("sub", a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a.shape, b.shape)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op("mul", a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a.shape, b.shape)
    if np.any(b.data == 0):
        raise ContractError("division by zero")
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op("div", out, (a, b), backward)


def scale(x, factor: float) -> Tensor:
    x = as_tensor(x)
    factor = float(factor)

    def backward(g):
        return (g * factor,)

    return Tensor._from_op("scale", x.data * x.data.dtype.type(factor), (x,), backward)


def square(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (2.0 * x.data * g,)

    return Tensor._from_op("square", x.data * x.data, (x,), backward)


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise ContractError("sqrt of a negative value")
    out = np.sqrt(x.data)

    def backward(g):
        return (g * 0.5 / out,)

    return Tensor._from_op("sqrt", out, (x,), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor._from_op("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return Tensor._from_op("exp", out, (x,), backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(-np.logaddexp(0, -x.data)).astype(x.dtype)

    def backward(g):
        return (g * out * (1 - out),)

    return Tensor._from_op("sigmoid", out, (x,), backward)


# ---- structural ---------------------------------------------------------------
def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} into {tuple(shape)}") from exc

    def backward(g):
        return (g.reshape(x.shape),)

    return Tensor._from_op("reshape", out, (x,), backward)


def transpose(x, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute axes; swaps the last two axes when ``axes`` is omitted."""
    x = as_tensor(x)
    if axes is None:
        if x.ndim < 2:
            raise DimensionError("transpose needs at least two axes")
        axes = list(range(x.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(int(a) % x.ndim for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"invalid permutation {axes} for a {x.ndim}-d tensor")
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return Tensor._from_op("transpose", x.data.transpose(axes), (x,), backward)


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    items = tuple(as_tensor(t) for t in tensors)
    if not items:
        raise ContractError("stack needs at least one tensor")
    shapes = {t.shape for t in items}
    if len(shapes) != 1:
        raise DimensionError(f"stack needs equal shapes, got {sorted(shapes)}")
    out = np.stack([t.data for t in items], axis=axis)
    axis = axis % out.ndim

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(items)))

    return Tensor._from_op("stack", out, items, backward)


# ---- linear algebra -----------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs 2-d or higher operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    _broadcast_shape("matmul", a.shape[:-2], b.shape[:-2])

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op("matmul", a.data @ b.data, (a, b), backward)


def linear(x, weight, bias=None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# ---- reductions ---------------------------------------------------------------
def reduce(x, axis: Axis = None, mode: str = "sum", keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    if mode not in ("sum", "mean"):
        raise ContractError(f"unknown reduction mode '{mode}'")
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.sum(axis=axes, keepdims=keepdims)
    if mode == "mean":
        out = out / x.dtype.type(max(count, 1))
    kept_shape = tuple(1 if i in axes else n for i, n in enumerate(x.shape))

    def backward(g):
        g = np.broadcast_to(g.reshape(kept_shape), x.shape)
        if mode == "mean":
            g = g / max(count, 1)
        return (np.array(g, dtype=x.dtype),)

    return Tensor._from_op(f"reduce_{mode}", np.asarray(out, dtype=x.dtype), (x,), backward)


def l2_norm(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    """sqrt(sum(x^2) + eps) along one axis; eps keeps the adjoint finite at zero."""
    x = as_tensor(x)
    (ax,) = _normalize_axes(axis, x.ndim)
    norm = np.sqrt((x.data * x.data).sum(axis=ax, keepdims=True) + L2_NORM_EPS)

    def backward(g):
        g = g if keepdims else np.expand_dims(g, ax)
        return (g * x.data / norm,)

    out = norm if keepdims else np.squeeze(norm, axis=ax)
    return Tensor._from_op("l2_norm", out.astype(x.dtype), (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    (ax,) = _normalize_axes(axis, x.ndim)
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=ax, keepdims=True)),)

    return Tensor._from_op("softmax", out, (x,), backward)
