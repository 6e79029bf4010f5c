"""
src/utils/capsules/layers.py
Capsule building blocks. Every function accepts optional leading batch axes.

Shapes use L heads, K^2 grid nodes per head, N = L * K^2 primary capsules,
M classes and D_in / D_out capsule dimensions.
"""

from __future__ import annotations

from typing import Sequence, Tuple, Union

import numpy as np

from src.types.errors import ConfigurationError, ContractError, DimensionError
from src.utils.capsules.graph import Adjacency
from src.utils.tensor import (
    Tensor,
    add,
    conv2d,
    div,
    l2_norm,
    matmul,
    mul,
    reduce,
    relu,
    reshape,
    scale,
    softmax,
    square,
    stack,
    sub,
    transpose,
)

ConvParams = Sequence[Tuple[Tensor, Tensor, int]]

M_PLUS = 0.9
M_MINUS = 0.1
LAMBDA = 0.5


def extract_primary_capsules(
    image: Tensor, conv_params: ConvParams, num_heads: int, grid_side: int
) -> Tensor:
    """
    Run the conv stack and regroup its (L * D_in) x K x K output into capsules.

    ReLU follows every conv layer except the last. Capsule i of head l is the
    D_in channel slice of group l at row-major grid cell i. Accepts CHW or NCHW
    input and returns (L, K^2, D_in) or (B, L, K^2, D_in) respectively.
    """
    unbatched = image.ndim == 3
    x = reshape(image, (1,) + image.shape) if unbatched else image
    for index, (kernel, bias, stride) in enumerate(conv_params):
        x = conv2d(x, kernel, bias, stride)
        if index < len(conv_params) - 1:
            x = relu(x)
    batch, channels, height, width = x.shape
    if height != grid_side or width != grid_side:
        raise ConfigurationError(
            f"conv stack produced a {height}x{width} grid, expected K={grid_side}"
        )
    if channels % num_heads:
        raise ConfigurationError(f"{channels} channels cannot be split into {num_heads} heads")
    dim_in = channels // num_heads
    x = reshape(x, (batch, num_heads, dim_in, grid_side * grid_side))
    capsules = transpose(x, (0, 1, 3, 2))
    if unbatched:
        capsules = reshape(capsules, capsules.shape[1:])
    return capsules


def transform_capsules(u: Tensor, weights: Tensor) -> Tensor:
    """
    u'_i = u_i W_t[i] for every primary capsule, no bias.

    u is (..., L, K^2, D_in) and weights is (N, D_in, D_out) with N = L * K^2.
    """
    if u.ndim < 3:
        raise DimensionError(f"capsules must be (..., L, K^2, D_in), got {u.shape}")
    *lead, heads, nodes, dim_in = u.shape
    if weights.ndim != 3 or weights.shape[0] != heads * nodes or weights.shape[1] != dim_in:
        raise DimensionError(
            f"transform weights {weights.shape} do not match {heads * nodes} capsules of dim {dim_in}"
        )
    dim_out = weights.shape[2]
    flat = reshape(u, tuple(lead) + (heads * nodes, 1, dim_in))
    projected = matmul(flat, weights)
    return reshape(projected, tuple(lead) + (heads, nodes, dim_out))


def capsule_votes(u: Tensor, weights: Tensor, num_classes: int) -> Tensor:
    """
    Per-class votes u_hat_{j|i} for the routing and averaging baselines.

    u is (..., L, K^2, D_in) and weights is (N, D_in, M * D_out); the result is
    (..., N, M, D_out).
    """
    if weights.shape[-1] % num_classes:
        raise DimensionError(
            f"vote weights {weights.shape} are not divisible into {num_classes} classes"
        )
    *lead, heads, nodes, _ = u.shape
    projected = transform_capsules(u, weights)
    dim_out = weights.shape[-1] // num_classes
    return reshape(projected, tuple(lead) + (heads * nodes, num_classes, dim_out))


def head_attention(x: Tensor, adjacency: Union[Adjacency, Tensor], pool_weights: Tensor) -> Tensor:
    """Att = softmax over the K^2 node axis of (A x W); x is (..., K^2, D_out)."""
    a = adjacency.as_tensor() if isinstance(adjacency, Adjacency) else adjacency
    if a.shape != (x.shape[-2], x.shape[-2]):
        raise DimensionError(f"adjacency {a.shape} does not match {x.shape[-2]} nodes")
    logits = matmul(matmul(a, x), pool_weights)
    return softmax(logits, axis=-2)


def head_pool(attention: Tensor, x: Tensor) -> Tensor:
    """S = Att^T x, shape (..., M, D_out)."""
    if attention.shape[-2] != x.shape[-2]:
        raise DimensionError(
            f"attention over {attention.shape[-2]} nodes cannot pool {x.shape[-2]} nodes"
        )
    return matmul(transpose(attention), x)


def squash(s: Tensor, axis: int = -1) -> Tensor:
    """
    v = (|s|^2 / (1 + |s|^2)) * s / |s| along ``axis``.

    Written as s * |s| / (1 + |s|^2) with the eps-stabilized norm, so s = 0
    maps to 0 with a finite adjoint.
    """
    norm = l2_norm(s, axis=axis, keepdims=True)
    return mul(s, div(norm, add(1.0, square(norm))))


def aggregate_and_squash(head_outputs: Union[Tensor, Sequence[Tensor]]) -> Tensor:
    """
    V = squash(mean over heads of S^l).

    Accepts a list of (..., M, D_out) head outputs or one tensor with the
    head axis at position -3.
    """
    if isinstance(head_outputs, Tensor):
        if head_outputs.ndim < 3 or head_outputs.shape[-3] < 1:
            raise ContractError("aggregate_and_squash needs at least one head")
        stacked = head_outputs
    else:
        heads = list(head_outputs)
        if not heads:
            raise ContractError("aggregate_and_squash needs at least one head")
        stacked = stack(heads, axis=-3)
    return squash(reduce(stacked, axis=-3, mode="mean"))


def dynamic_routing(votes: Tensor, iterations: int) -> Tensor:
    """
    Routing-by-agreement over votes of shape (..., N, M, D_out).

    b starts at zero; each iteration takes c_i = softmax_j(b_i), s_j = sum_i
    c_ij u_hat_{j|i}, v_j = squash(s_j), then b_ij += u_hat_{j|i} . v_j.
    """
    if iterations < 1:
        raise ConfigurationError(f"routing needs at least one iteration, got {iterations}")
    logits = Tensor(np.zeros(votes.shape[:-1], dtype=votes.dtype))
    capsules = None
    for iteration in range(iterations):
        coupling = softmax(logits, axis=-1)
        weighted = mul(reshape(coupling, coupling.shape + (1,)), votes)
        capsules = squash(reduce(weighted, axis=-3, mode="sum"))
        if iteration < iterations - 1:
            expanded = reshape(capsules, capsules.shape[:-2] + (1,) + capsules.shape[-2:])
            agreement = reduce(mul(votes, expanded), axis=-1, mode="sum")
            logits = add(logits, agreement)
    return capsules


def average_baseline(votes: Tensor) -> Tensor:
    """v_j = squash(mean_i u_hat_{j|i}) over votes of shape (..., N, M, D_out)."""
    if votes.ndim < 3 or votes.shape[-3] < 1:
        raise ContractError("average_baseline needs at least one primary capsule")
    return squash(reduce(votes, axis=-3, mode="mean"))


def capsule_lengths(capsules: Tensor) -> Tensor:
    return l2_norm(capsules, axis=-1)


def one_hot(targets: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    targets = np.asarray(targets)
    if np.any(targets < 0) or np.any(targets >= num_classes):
        raise ContractError(f"target outside [0, {num_classes}): {targets.tolist()}")
    return np.eye(num_classes, dtype=dtype)[targets]


def margin_loss(
    capsules: Tensor,
    targets: Union[int, Sequence[int], np.ndarray],
    m_plus: float = M_PLUS,
    m_minus: float = M_MINUS,
    down_weight: float = LAMBDA,
) -> Tensor:
    """
    sum_k T_k max(0, m+ - |v_k|)^2 + lambda (1 - T_k) max(0, |v_k| - m-)^2.

    ``capsules`` is (M, D_out) with an int target, or (B, M, D_out) with B
    targets; the per-sample losses are averaged over the batch.
    """
    batched = capsules.ndim == 3
    v = capsules if batched else reshape(capsules, (1,) + capsules.shape)
    labels = np.atleast_1d(np.asarray(targets))
    if labels.shape != (v.shape[0],):
        raise ContractError(f"expected {v.shape[0]} targets, got {labels.shape}")
    present = one_hot(labels, v.shape[1], dtype=v.dtype)
    lengths = capsule_lengths(v)
    upper = square(relu(sub(m_plus, lengths)))
    lower = square(relu(sub(lengths, m_minus)))
    per_class = add(mul(present, upper), scale(mul(1.0 - present, lower), down_weight))
    return reduce(reduce(per_class, axis=-1, mode="sum"), mode="mean")
