import numpy as np
import pytest

from src.types.errors import ContractError, DimensionError
from src.utils.tensor import Tensor, backward, conv2d, conv_output_extent, reduce


def reference_conv(x, k, b, stride):
    n, c, h, w = x.shape
    o, _, kh, kw = k.shape
    ho, wo = (h - kh) // stride + 1, (w - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = x[:, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
            out[:, :, i, j] = np.tensordot(patch, k, axes=([1, 2, 3], [1, 2, 3]))
    return out + b[None, :, None, None]


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_matches_direct_loops(stride, rng):
    x = rng.normal(size=(2, 3, 9, 9))
    k = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    out = conv2d(Tensor(x), Tensor(k), Tensor(b), stride)
    np.testing.assert_allclose(out.data, reference_conv(x, k, b, stride), rtol=1e-4, atol=1e-4)


def test_output_extent():
    assert conv_output_extent(28, 3, 1) == 26
    assert conv_output_extent(26, 3, 2) == 12
    assert conv_output_extent(8, 3, 1) == 6
    assert conv_output_extent(6, 2, 2) == 3


def test_one_by_one_kernel_is_channel_mix():
    x = np.arange(8.0).reshape(1, 2, 2, 2)
    k = np.array([[[[1.0]], [[10.0]]]])
    out = conv2d(Tensor(x), Tensor(k), Tensor([0.0]))
    np.testing.assert_allclose(out.data[0, 0], x[0, 0] + 10 * x[0, 1])


def test_input_adjoint_counts_window_coverage():
    x = Tensor(np.zeros((1, 1, 4, 4)), requires_grad=True)
    k = Tensor(np.ones((1, 1, 2, 2)))
    backward(reduce(conv2d(x, k, Tensor([0.0]), stride=1)))
    expected = np.array([[1, 2, 2, 1], [2, 4, 4, 2], [2, 4, 4, 2], [1, 2, 2, 1]], dtype=float)
    np.testing.assert_array_equal(x.grad[0, 0], expected)


def test_bias_adjoint_is_output_count():
    b = Tensor([0.0, 0.0], requires_grad=True)
    out = conv2d(Tensor(np.ones((2, 1, 5, 5))), Tensor(np.ones((2, 1, 3, 3))), b, stride=2)
    backward(reduce(out))
    np.testing.assert_array_equal(b.grad, [8.0, 8.0])


def test_shape_errors():
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.ones((1, 2, 5, 5))), Tensor(np.ones((1, 3, 3, 3))), Tensor([0.0]))
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))), Tensor([0.0]))
    with pytest.raises(ContractError):
        conv2d(Tensor(np.ones((1, 1, 5, 5))), Tensor(np.ones((1, 1, 3, 3))), Tensor([0.0]), 0)


def test_all_ones_example():
    out = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 2, 2))), Tensor([0.0]))
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 4.0))


def test_identity_kernel(rng):
    x = rng.normal(size=(1, 1, 5, 5))
    out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor([0.0]))
    np.testing.assert_allclose(out.data, x, rtol=1e-6)


def test_direct_oracle_in_float64(rng):
    from src.utils.tensor import precision

    x = rng.normal(size=(2, 3, 8, 8))
    k = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    with precision(np.float64):
        out = conv2d(Tensor(x), Tensor(k), Tensor(b), stride=2)
    np.testing.assert_allclose(out.data, reference_conv(x, k, b, 2), atol=1e-5)
