import math
from types import SimpleNamespace

import numpy as np
import pytest

from src.types.errors import ContractError, UnsupportedModeError
from src.utils.capsules import GraphCapsuleNetwork
from src.utils.interpret import (
    aopc,
    attention_explanation,
    class_score_gradients,
    class_scores,
    explain,
    integrated_gradients,
    mean_attention,
    perturbation_sequence,
    random_explanation,
    relevance_ranking,
    upsample_bilinear,
    vanilla_gradient,
)
from src.utils.tensor import Tensor

from tests.conftest import tiny_config


@pytest.fixture
def image(synthetic_set):
    return synthetic_set.images[1]


def test_upsample_example_and_constant():
    grid = np.array([[0.0, 1.0], [2.0, 3.0]])
    up = upsample_bilinear(grid, 4, 4)
    assert up.shape == (4, 4)
    np.testing.assert_allclose(up[0], [0.0, 0.25, 0.75, 1.0])
    np.testing.assert_allclose(up[:, 0], [0.0, 0.5, 1.5, 2.0])
    assert up[3, 3] == pytest.approx(3.0)
    np.testing.assert_allclose(upsample_bilinear(np.full((3, 3), 0.2), 8, 8), 0.2)
    np.testing.assert_allclose(upsample_bilinear(grid, 2, 2), grid)


def test_attention_columns_are_distributions(tiny_model, image):
    attention = mean_attention(tiny_model, image)
    assert attention.shape == (9, 3)
    np.testing.assert_allclose(attention.sum(axis=0), 1.0, atol=1e-5)
    assert np.all(attention > 0)


def test_attention_explanation_records_nothing(tiny_model, image):
    result = attention_explanation(tiny_model, image, target=2)
    assert result.values.shape == (8, 8)
    assert result.method == "att" and result.target == 2
    assert all(not t.grad.any() for _, t in tiny_model.parameters())


def test_zero_pool_weights_give_a_flat_map(tiny_model, image):
    tiny_model.params["pool.weight"].assign(np.zeros((4, 3)))
    values = attention_explanation(tiny_model, image, target=0).values
    np.testing.assert_allclose(values, 1.0 / 9.0, atol=1e-6)


@pytest.mark.parametrize("aggregation", ["dynamic-routing", "average"])
def test_attention_needs_graph_pooling(aggregation, image):
    model = GraphCapsuleNetwork(tiny_config(aggregation=aggregation))
    with pytest.raises(UnsupportedModeError):
        attention_explanation(model, image, target=0)
    assert explain(model, image, 0, "grad").values.shape == (8, 8)


def test_gradient_matches_central_differences(float64, tiny, image):
    model = GraphCapsuleNetwork(tiny)
    x = image.astype(np.float64)
    grads = class_score_gradients(model, x[None], [1])[0]
    h = 1e-6
    for pixel in [(0, 0, 0), (0, 2, 5), (0, 4, 4), (0, 7, 1)]:
        plus, minus = x.copy(), x.copy()
        plus[pixel] += h
        minus[pixel] -= h
        numeric = (class_scores(model, plus[None], 1)[0] - class_scores(model, minus[None], 1)[0]) / (
            2 * h
        )
        assert grads[pixel] == pytest.approx(numeric, rel=1e-4, abs=1e-8)
    saliency = vanilla_gradient(model, x, 1).values
    np.testing.assert_allclose(saliency, np.abs(grads[0]))


def test_gradients_leave_parameters_clean(tiny_model, synthetic_set):
    batch = synthetic_set.images[:5]
    grads = class_score_gradients(tiny_model, batch, [0, 1, 2, 0, 1])
    assert grads.shape == batch.shape
    assert all(not t.grad.any() for _, t in tiny_model.parameters())
    single = class_score_gradients(tiny_model, batch[3:4], [0])
    np.testing.assert_allclose(grads[3:4], single, rtol=1e-4, atol=1e-6)


def test_single_step_integrated_gradients(float64, tiny, image):
    model = GraphCapsuleNetwork(tiny)
    x = image.astype(np.float64)
    midpoint = class_score_gradients(model, 0.5 * x[None], [2])[0]
    result = integrated_gradients(model, x, 2, steps=1)
    np.testing.assert_allclose(result.values, (x * midpoint)[0], rtol=1e-10, atol=1e-12)


def test_integrated_gradients_completeness(float64, tiny, image):
    model = GraphCapsuleNetwork(tiny)
    x = image.astype(np.float64)
    total = integrated_gradients(model, x, 0, steps=200).values.sum()
    expected = class_scores(model, x[None], 0)[0] - class_scores(model, np.zeros_like(x)[None], 0)[0]
    assert total == pytest.approx(expected, rel=0.02)


def test_integrated_gradients_rejects_zero_steps(tiny_model, image):
    with pytest.raises(ContractError):
        integrated_gradients(tiny_model, image, 0, steps=0)


def test_random_maps_are_seeded(image):
    a = random_explanation(image, seed=[0, 3]).values
    b = random_explanation(image, seed=[0, 3]).values
    c = random_explanation(image, seed=[0, 4]).values
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.shape == (8, 8) and a.min() >= 0.0 and a.max() < 1.0


def test_ranking_breaks_ties_row_major():
    values = np.array([[1.0, 3.0], [3.0, 0.0]])
    assert relevance_ranking(values).tolist() == [1, 2, 0, 3]


def test_patches_skip_perturbed_pixels(image, rng):
    relevance = np.zeros((8, 8))
    relevance[4, 4], relevance[4, 5], relevance[0, 0] = 3.0, 2.0, 1.0
    sequence = perturbation_sequence(image, relevance, steps=2, patch=3, rng=rng)
    assert sequence.shape == (3, 1, 8, 8)
    np.testing.assert_array_equal(sequence[0], image)

    first = sequence[1] != sequence[0]
    assert first[0, 3:6, 3:6].all() and first.sum() == 9
    second = sequence[2] != sequence[1]
    assert second[0, 0:2, 0:2].all() and second.sum() == 4


def test_running_out_of_pixels(rng):
    with pytest.raises(ContractError):
        perturbation_sequence(np.zeros((1, 4, 4)), np.ones((4, 4)), steps=2, patch=9, rng=rng)


def test_aopc_area_and_determinism(tiny_model, synthetic_set):
    images = synthetic_set.images[:4]
    maps = [random_explanation(img, seed=[0, i]).values for i, img in enumerate(images)]
    result = aopc(tiny_model, images, maps, steps=5, patch=3, seed=9, method="random")
    assert result.steps == 5 and result.n_images == 4
    assert result.aopc == pytest.approx(result.recompute(), rel=1e-12)
    again = aopc(tiny_model, images, maps, steps=5, patch=3, seed=9, method="random")
    np.testing.assert_array_equal(result.curve, again.curve)


def test_aopc_first_step_matches_manual_drop(tiny_model, synthetic_set):
    image = synthetic_set.images[2]
    relevance = np.arange(64.0).reshape(8, 8)
    result = aopc(tiny_model, image[None], [relevance], steps=1, patch=2, seed=4, image_ids=[11])
    sequence = perturbation_sequence(image, relevance, 1, 2, np.random.default_rng([4, 11]))
    predicted = tiny_model.predict(image)
    scores = class_scores(tiny_model, sequence, predicted)
    assert result.curve[0] == pytest.approx(scores[0] - scores[1])
    assert result.aopc == pytest.approx((scores[0] - scores[1]) / 2)


@pytest.mark.parametrize("steps", [0, 65])
def test_aopc_step_bounds(tiny_model, synthetic_set, steps):
    images = synthetic_set.images[:1]
    with pytest.raises(ContractError):
        aopc(tiny_model, images, [np.zeros((8, 8))], steps=steps)


def test_aopc_shape_checks(tiny_model, synthetic_set):
    images = synthetic_set.images[:2]
    with pytest.raises(ContractError):
        aopc(tiny_model, images, [np.zeros((8, 8))], steps=1)
    with pytest.raises(ContractError):
        aopc(tiny_model, images, [np.zeros((4, 4))] * 2, steps=1)


@pytest.mark.parametrize("cell", range(9))
def test_one_hot_attention_peaks_in_its_cell(tiny_model, image, monkeypatch, cell):
    attention = np.full((1, 2, 9, 3), 1.0 / 9.0)
    attention[0, :, :, 1] = 0.0
    attention[0, :, cell, 1] = 1.0
    monkeypatch.setattr(
        tiny_model, "forward", lambda images: SimpleNamespace(attention=Tensor(attention))
    )
    values = attention_explanation(tiny_model, image, target=1).values
    row, col = np.unravel_index(np.argmax(values), values.shape)
    cell_row, cell_col = divmod(cell, 3)
    assert math.floor(cell_row * 8 / 3) <= row < math.ceil((cell_row + 1) * 8 / 3)
    assert math.floor(cell_col * 8 / 3) <= col < math.ceil((cell_col + 1) * 8 / 3)


class LinearScorer:
    """Class 0 capsule has length sum(weights * pixels); class 1 is always empty."""

    def __init__(self, weights):
        self.weights = weights

    def __call__(self, images):
        pixels = images.data.reshape((-1,) + self.weights.shape)
        capsules = np.zeros((pixels.shape[0], 2, 1))
        capsules[:, 0, 0] = (pixels * self.weights).sum(axis=(1, 2))
        return SimpleNamespace(capsules=Tensor(capsules))

    def predict(self, images):
        return 0


@pytest.fixture
def left_half_scorer():
    weights = np.zeros((8, 8))
    weights[:, :4] = np.random.default_rng(2).uniform(size=(8, 4)) ** 4
    return LinearScorer(weights)


@pytest.fixture
def bright_images():
    return np.ones((4, 1, 8, 8), dtype=np.float32)


def score_maps(model, images, relevance, seed=5):
    return aopc(model, images, [relevance] * len(images), steps=8, patch=1, seed=seed)


def test_true_sensitivity_beats_random(left_half_scorer, bright_images):
    true = score_maps(left_half_scorer, bright_images, left_half_scorer.weights)
    maps = [random_explanation(img, seed=[5, i]).values for i, img in enumerate(bright_images)]
    random = aopc(left_half_scorer, bright_images, maps, steps=8, patch=1, seed=5)
    assert true.aopc > random.aopc


def test_monotone_ranking_beats_its_reverse(left_half_scorer, bright_images):
    forward = score_maps(left_half_scorer, bright_images, left_half_scorer.weights)
    reverse = score_maps(left_half_scorer, bright_images, -left_half_scorer.weights)
    assert forward.aopc > reverse.aopc
    assert np.all(np.diff(forward.curve) >= 0)


def test_ignored_region_gives_no_drop(left_half_scorer, bright_images):
    ignored = (left_half_scorer.weights == 0).astype(np.float64)
    result = score_maps(left_half_scorer, bright_images, ignored)
    np.testing.assert_allclose(result.curve, 0.0, atol=1e-6)
    assert result.aopc == pytest.approx(0.0, abs=1e-6)
