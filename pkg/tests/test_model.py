import numpy as np
import pytest

from src.types.config import AggregationMode, ModelConfig
from src.types.errors import CheckpointShapeError, DecoderMissingError
from src.utils.capsules import (
    GraphCapsuleNetwork,
    average_baseline,
    build_adjacency,
    count_parameters,
    head_attention,
    head_pool,
    squash,
)
from src.utils.capsules.layers import capsule_votes
from src.utils.tensor import Tensor

from tests.conftest import tiny_config


def test_forward_shapes_and_attention(tiny_model, rng):
    images = rng.uniform(size=(5, 1, 8, 8))
    out = tiny_model(Tensor(images))
    assert out.capsules.shape == (5, 3, 4)
    assert out.attention.shape == (5, 2, 9, 3)
    assert out.primary.shape == (5, 2, 9, 4)
    heads = out.head_attentions(sample=4)
    assert len(heads) == 2
    for head in heads:
        np.testing.assert_allclose(head.att.sum(axis=0), 1.0, atol=1e-5)
    assert np.all(np.linalg.norm(out.capsules.data, axis=-1) < 1)


def test_single_image_forward_and_predict(tiny_model, rng):
    image = rng.uniform(size=(1, 8, 8))
    assert tiny_model(Tensor(image)).capsules.shape == (1, 3, 4)
    assert isinstance(tiny_model.predict(image), int)
    batch = tiny_model.predict(np.stack([image, image]))
    assert batch.shape == (2,)


def test_mnist_shapes():
    model = GraphCapsuleNetwork(ModelConfig(decoder_hidden=[]))
    out = model(Tensor(np.zeros((1, 1, 28, 28))))
    assert out.primary.shape == (1, 32, 144, 8)
    assert out.capsules.shape == (1, 10, 16)
    assert len(out.head_attentions()) == 32
    assert out.head_attentions()[0].att.shape == (144, 10)


def test_same_seed_is_bit_identical(tiny, rng):
    images = Tensor(rng.uniform(size=(3, 1, 8, 8)))
    a = GraphCapsuleNetwork(tiny)(images).capsules.data
    b = GraphCapsuleNetwork(tiny)(images).capsules.data
    np.testing.assert_array_equal(a, b)
    c = GraphCapsuleNetwork(tiny_config(init_seed=5))(images).capsules.data
    assert not np.array_equal(a, c)


def test_zero_parameters_tie_break_to_class_zero(tiny, rng):
    model = GraphCapsuleNetwork(tiny)
    model.load_parameters({name: np.zeros(t.shape) for name, t in model.parameters()})
    out = model(Tensor(rng.uniform(size=(1, 8, 8))))
    np.testing.assert_allclose(out.attention.data, 1 / 9, rtol=1e-6)
    norms = np.linalg.norm(out.capsules.data, axis=-1)
    assert np.all(norms == norms[0, 0])
    assert model.predict(rng.uniform(size=(1, 8, 8))) == 0


@pytest.mark.parametrize("aggregation", list(AggregationMode))
def test_every_aggregation_runs(aggregation, rng):
    model = GraphCapsuleNetwork(tiny_config(aggregation=aggregation))
    out = model(Tensor(rng.uniform(size=(2, 1, 8, 8))))
    assert out.capsules.shape == (2, 3, 4)
    assert (out.attention is None) == (aggregation != AggregationMode.GRAPH_POOL)


def test_parameter_counts_for_mnist_config():
    graph = count_parameters(ModelConfig())
    routing = count_parameters(ModelConfig(aggregation=AggregationMode.DYNAMIC_ROUTING))
    assert graph.transform == 4608 * 8 * 16 == 589_824
    assert graph.pooling == 160
    assert graph.aggregation == 589_824 + 160
    assert routing.transform == graph.transform * 10
    assert routing.pooling == 0
    assert graph.conv == 256 * 1 * 9 + 256 + 256 * 256 * 9 + 256
    assert graph.decoder == (160 * 512 + 512) + (512 * 1024 + 1024) + (1024 * 784 + 784)


@pytest.mark.parametrize("heads", [1, 2, 4, 8])
def test_transform_ratio_is_num_classes(heads):
    config = tiny_config().with_heads(heads)
    graph = count_parameters(config)
    routing = count_parameters(config.model_copy(update={"aggregation": AggregationMode.DYNAMIC_ROUTING}))
    assert routing.transform == graph.transform * config.num_classes
    assert graph.transform == config.num_primary * config.capsule_dim_in * config.capsule_dim_out


def test_scaling_pre_squash_vectors_keeps_prediction(rng):
    s = rng.normal(size=(10, 16))
    base = np.argmax(np.linalg.norm(squash(Tensor(s)).data, axis=-1))
    for factor in (0.01, 0.5, 3.0, 100.0):
        scaled = np.argmax(np.linalg.norm(squash(Tensor(s * factor)).data, axis=-1))
        assert scaled == base


def test_average_is_permutation_invariant_with_shared_transform(rng):
    u = rng.normal(size=(2, 4, 3))
    shared = np.broadcast_to(rng.normal(size=(3, 6)), (8, 3, 6))
    permuted = u.reshape(8, 3)[rng.permutation(8)].reshape(2, 4, 3)
    a = average_baseline(capsule_votes(Tensor(u), Tensor(shared), 3)).data
    b = average_baseline(capsule_votes(Tensor(permuted), Tensor(shared), 3)).data
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_graph_pool_depends_on_spatial_layout():
    adjacency = build_adjacency(2, 1.0)
    pool = Tensor(np.array([[1.0], [0.0]]))
    x = np.array([[4.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 0.0]])
    # swap node 1 (adjacent to node 0) with node 3 (diagonal to node 0)
    swapped = x[[0, 3, 2, 1]]
    a = head_pool(head_attention(Tensor(x), adjacency, pool), Tensor(x)).data
    b = head_pool(head_attention(Tensor(swapped), adjacency, pool), Tensor(swapped)).data
    assert not np.allclose(a, b)


def test_load_parameters_checks_names_and_shapes(tiny_model):
    values = {name: t.data for name, t in tiny_model.parameters()}
    values["pool.weight"] = np.zeros((3, 3))
    with pytest.raises(CheckpointShapeError, match="pool.weight"):
        tiny_model.load_parameters(values)
    values.pop("pool.weight")
    with pytest.raises(CheckpointShapeError, match="missing"):
        tiny_model.load_parameters(values)


def test_reconstruct_needs_decoder(rng):
    model = GraphCapsuleNetwork(tiny_config(decoder_hidden=[]))
    capsules = model(Tensor(rng.uniform(size=(1, 1, 8, 8)))).capsules
    with pytest.raises(DecoderMissingError):
        model.reconstruct(capsules, [0])
