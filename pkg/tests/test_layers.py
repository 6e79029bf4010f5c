import numpy as np
import pytest

from src.types.errors import ConfigurationError, ContractError, DimensionError
from src.utils.capsules import (
    aggregate_and_squash,
    average_baseline,
    build_adjacency,
    dynamic_routing,
    extract_primary_capsules,
    head_attention,
    head_pool,
    margin_loss,
    squash,
    transform_capsules,
)
from src.utils.capsules.layers import capsule_votes
from src.utils.tensor import Tensor, precision, reshape


def np_squash(s):
    norm = np.sqrt((s * s).sum(axis=-1, keepdims=True) + 1e-12)
    return s * norm / (1 + norm**2)


# ---- squash -----------------------------------------------------------------
def test_squash_examples():
    np.testing.assert_array_equal(squash(Tensor(np.zeros(4))).data, np.zeros(4))
    unit = np.array([0.6, 0.8])
    np.testing.assert_allclose(squash(Tensor(unit)).data, 0.5 * unit, atol=1e-6)
    three = np.array([3.0, 0.0, 0.0])
    assert np.linalg.norm(squash(Tensor(three)).data) == pytest.approx(0.9, abs=1e-6)


def test_squash_preserves_direction_and_is_monotone():
    with precision(np.float64):
        direction = np.array([1.0, -2.0, 0.5]) / np.linalg.norm([1.0, -2.0, 0.5])
        norms = np.linspace(0.1, 10.0, 100)
        outputs = np.stack([squash(Tensor(n * direction)).data for n in norms])
    out_norms = np.linalg.norm(outputs, axis=-1)
    assert np.all(np.diff(out_norms) > 0)
    assert np.all(out_norms < 1)
    cosines = outputs @ direction / out_norms
    np.testing.assert_allclose(cosines, np.ones(100), atol=1e-6)


# ---- primary capsules and transforms ------------------------------------------
def test_zero_image_zero_bias_gives_zero_capsules(rng):
    params = [
        (Tensor(rng.normal(size=(8, 1, 3, 3))), Tensor(np.zeros(8)), 1),
        (Tensor(rng.normal(size=(8, 8, 2, 2))), Tensor(np.zeros(8)), 2),
    ]
    capsules = extract_primary_capsules(Tensor(np.zeros((1, 8, 8))), params, 2, 3)
    assert capsules.shape == (2, 9, 4)
    np.testing.assert_array_equal(capsules.data, 0.0)


def test_capsule_grouping_matches_channel_slices(rng):
    kernel = Tensor(rng.normal(size=(6, 1, 1, 1)))
    image = rng.uniform(size=(2, 1, 2, 2))
    capsules = extract_primary_capsules(Tensor(image), [(kernel, Tensor(np.zeros(6)), 1)], 3, 2)
    conv = kernel.data[:, 0, 0, 0][None, :, None, None] * image
    assert capsules.shape == (2, 3, 4, 2)
    # head l, cell i holds channels [2l, 2l + 2) at row-major cell i
    np.testing.assert_allclose(capsules.data[1, 2, 3], conv[1, 4:6, 1, 1], rtol=1e-6)
    restored = capsules.data.transpose(0, 1, 3, 2).reshape(2, 6, 2, 2)
    np.testing.assert_allclose(restored, conv, rtol=1e-6)


def test_grid_mismatch_is_configuration_error(rng):
    params = [(Tensor(rng.normal(size=(8, 1, 3, 3))), Tensor(np.zeros(8)), 1)]
    with pytest.raises(ConfigurationError, match="K=3"):
        extract_primary_capsules(Tensor(np.zeros((1, 8, 8))), params, 2, 3)


def test_transform_examples():
    u = np.zeros((1, 1, 2))
    u[0, 0] = [1.0, 0.0]
    w = np.array([[[2.0, 0.0, 0.0], [0.0, 3.0, 0.0]]])
    np.testing.assert_array_equal(transform_capsules(Tensor(u), Tensor(w)).data[0, 0], [2, 0, 0])
    x = np.random.default_rng(0).normal(size=(2, 4, 3))
    eye = np.broadcast_to(np.eye(3), (8, 3, 3))
    np.testing.assert_allclose(transform_capsules(Tensor(x), Tensor(eye)).data, x, rtol=1e-6)
    zeros = transform_capsules(Tensor(np.zeros((2, 4, 3))), Tensor(np.ones((8, 3, 5))))
    np.testing.assert_array_equal(zeros.data, 0.0)
    with pytest.raises(DimensionError):
        transform_capsules(Tensor(x), Tensor(np.ones((7, 3, 3))))


def test_votes_split_into_classes(rng):
    u = rng.normal(size=(2, 4, 3))
    w = rng.normal(size=(8, 3, 10))
    votes = capsule_votes(Tensor(u), Tensor(w), 5)
    assert votes.shape == (8, 5, 2)
    np.testing.assert_allclose(votes.data[5, 3], (u[1, 1] @ w[5])[6:8], rtol=1e-5)


# ---- attention and pooling --------------------------------------------------------
def test_zero_features_give_uniform_attention():
    att = head_attention(Tensor(np.zeros((9, 4))), build_adjacency(3, 1.0), Tensor(np.ones((4, 3))))
    np.testing.assert_allclose(att.data, np.full((9, 3), 1 / 9), rtol=1e-6)


def test_attention_columns_sum_to_one(rng):
    x = rng.normal(size=(5, 2, 16, 4))
    att = head_attention(Tensor(x), build_adjacency(4, 1.0), Tensor(rng.normal(size=(4, 6))))
    assert att.shape == (5, 2, 16, 6)
    assert np.all(att.data >= 0)
    np.testing.assert_allclose(att.data.sum(axis=-2), 1.0, atol=1e-5)


def test_node_with_low_logits_abstains():
    adjacency = Tensor(np.eye(4))
    x = np.zeros((4, 1))
    x[2] = -20.0
    att = head_attention(Tensor(x), adjacency, Tensor(np.ones((1, 3))))
    assert np.all(att.data[2] < 1e-3)


def test_head_pool_examples(rng):
    x = rng.normal(size=(4, 3))
    one_hot = np.zeros((4, 2))
    one_hot[1, 0] = 1.0
    one_hot[3, 1] = 1.0
    pooled = head_pool(Tensor(one_hot), Tensor(x)).data
    np.testing.assert_allclose(pooled, x[[1, 3]], rtol=1e-6)
    uniform = head_pool(Tensor(np.full((4, 2), 0.25)), Tensor(x)).data
    np.testing.assert_allclose(uniform, np.tile(x.mean(axis=0), (2, 1)), rtol=1e-5)
    att = rng.uniform(size=(4, 2))
    oracle = np.zeros((2, 3))
    for m in range(2):
        for i in range(4):
            oracle[m] += att[i, m] * x[i]
    np.testing.assert_allclose(head_pool(Tensor(att), Tensor(x)).data, oracle, atol=1e-6)


def test_aggregate_examples(rng):
    s = rng.normal(size=(3, 4))
    np.testing.assert_allclose(
        aggregate_and_squash([Tensor(s), Tensor(s)]).data, np_squash(s), atol=1e-6
    )
    cancelled = aggregate_and_squash([Tensor(s), Tensor(-s)]).data
    np.testing.assert_allclose(cancelled, 0.0, atol=1e-6)
    heads = rng.normal(size=(3, 3, 4))
    np.testing.assert_allclose(
        aggregate_and_squash([Tensor(h) for h in heads]).data,
        np_squash(heads.mean(axis=0)),
        atol=1e-6,
    )
    with pytest.raises(ContractError):
        aggregate_and_squash([])


# ---- routing and averaging -----------------------------------------------------
def routing_oracle(votes, iterations):
    n, m, _ = votes.shape
    b = np.zeros((n, m))
    v = None
    for _ in range(iterations):
        c = np.zeros((n, m))
        for i in range(n):
            e = np.exp(b[i] - b[i].max())
            c[i] = e / e.sum()
        s = np.zeros(votes.shape[1:])
        for j in range(m):
            for i in range(n):
                s[j] += c[i, j] * votes[i, j]
        v = np.stack([np_squash(s[j]) for j in range(m)])
        for i in range(n):
            for j in range(m):
                b[i, j] += votes[i, j] @ v[j]
    return v


def test_routing_matches_unrolled_oracle():
    votes = np.random.default_rng(8).normal(size=(3, 2, 4))
    with precision(np.float64):
        out = dynamic_routing(Tensor(votes), 3).data
    np.testing.assert_allclose(out, routing_oracle(votes, 3), atol=1e-6)


def test_single_iteration_uses_uniform_coupling(rng):
    votes = rng.normal(size=(5, 4, 3))
    out = dynamic_routing(Tensor(votes), 1).data
    np.testing.assert_allclose(out, np_squash(votes.sum(axis=0) / 4), atol=1e-6)


def test_identical_votes_make_iterations_irrelevant(rng):
    # same vote from every capsule for every class keeps the coupling uniform
    vote = rng.normal(size=(1, 1, 4))
    votes = Tensor(np.broadcast_to(vote, (6, 3, 4)))
    np.testing.assert_allclose(
        dynamic_routing(votes, 1).data, dynamic_routing(votes, 5).data, atol=1e-6
    )


def test_routing_needs_an_iteration():
    with pytest.raises(ConfigurationError):
        dynamic_routing(Tensor(np.ones((2, 2, 2))), 0)


def test_average_examples(rng):
    single = rng.normal(size=(1, 3, 4))
    np.testing.assert_allclose(average_baseline(Tensor(single)).data, np_squash(single[0]), atol=1e-6)
    votes = rng.normal(size=(2, 3, 4))
    votes[1] = -votes[0]
    np.testing.assert_allclose(average_baseline(Tensor(votes)).data, 0.0, atol=1e-6)
    votes = rng.normal(size=(7, 3, 4))
    np.testing.assert_allclose(
        average_baseline(Tensor(votes)).data, np_squash(votes.mean(axis=0)), atol=1e-6
    )


# ---- margin loss -------------------------------------------------------------------
def capsules_with_norms(norms, dim=4):
    v = np.zeros((len(norms), dim))
    v[:, 0] = norms
    return Tensor(v)


def test_margin_loss_examples():
    assert margin_loss(capsules_with_norms([0.9, 0.1, 0.05]), 0).item() == pytest.approx(0.0, abs=1e-6)
    assert margin_loss(capsules_with_norms([0.5, 0.0, 0.0]), 0).item() == pytest.approx(0.16, abs=1e-6)
    # target at 0.9 so only the absent class at 0.3 contributes
    assert margin_loss(capsules_with_norms([0.9, 0.3, 0.0]), 0).item() == pytest.approx(0.02, abs=1e-6)


def test_margin_loss_averages_over_batch():
    v = np.zeros((2, 3, 4))
    v[0, 0, 0] = 0.5
    v[1, 0, 0] = 0.9
    assert margin_loss(Tensor(v), [0, 0]).item() == pytest.approx(0.08, abs=1e-6)


def test_margin_loss_rejects_bad_targets():
    with pytest.raises(ContractError):
        margin_loss(capsules_with_norms([0.5, 0.1]), 2)
    with pytest.raises(ContractError):
        margin_loss(Tensor(np.zeros((2, 3, 4))), [0])


def test_batched_and_single_shapes_agree(rng):
    v = rng.normal(scale=0.3, size=(3, 4))
    single = margin_loss(Tensor(v), 1).item()
    batched = margin_loss(reshape(Tensor(v), (1, 3, 4)), [1]).item()
    assert single == pytest.approx(batched)
