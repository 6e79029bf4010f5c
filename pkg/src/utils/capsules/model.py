"""
src/utils/capsules/model.py
Graph capsule network: conv capsules, per-capsule transforms, and one of three
aggregations (multi-head graph pooling, dynamic routing, plain averaging).
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.types.config import AggregationMode, ModelConfig
from src.types.errors import CheckpointShapeError, DecoderMissingError
from src.types.results import ForwardOutput, ParameterTable
from src.utils.capsules.decoder import Decoder
from src.utils.capsules.graph import Adjacency, build_adjacency
from src.utils.capsules.layers import (
    aggregate_and_squash,
    average_baseline,
    capsule_lengths,
    capsule_votes,
    dynamic_routing,
    extract_primary_capsules,
    head_attention,
    head_pool,
    transform_capsules,
)
from src.utils.tensor import Tensor, get_default_dtype, no_grad

Shape = Tuple[int, ...]


def parameter_shapes(config: ModelConfig) -> "OrderedDict[str, Shape]":
    """Every trainable tensor, in the order it is created and persisted."""
    shapes: "OrderedDict[str, Shape]" = OrderedDict()
    in_channels = config.image_channels
    for index, (out_channels, kernel, _) in enumerate(config.conv_channels):
        shapes[f"conv{index}.weight"] = (out_channels, in_channels, kernel, kernel)
        shapes[f"conv{index}.bias"] = (out_channels,)
        in_channels = out_channels
    n, d_in, d_out, m = (
        config.num_primary,
        config.capsule_dim_in,
        config.capsule_dim_out,
        config.num_classes,
    )
    if config.aggregation == AggregationMode.GRAPH_POOL:
        shapes["transform.weight"] = (n, d_in, d_out)
        shapes["pool.weight"] = (d_out, m)
    else:
        shapes["transform.weight"] = (n, d_in, m * d_out)
    shapes.update(Decoder.parameter_shapes(config))
    return shapes


def _fan_in(name: str, shape: Shape) -> int:
    if name.endswith(".bias"):
        return 0
    if name.startswith("conv"):
        return int(np.prod(shape[1:]))
    return int(shape[-2])


def init_parameters(config: ModelConfig) -> "OrderedDict[str, Tensor]":
    """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)), seeded."""
    rng = np.random.default_rng(config.init_seed)
    shapes = parameter_shapes(config)
    params: "OrderedDict[str, Tensor]" = OrderedDict()
    for name, shape in shapes.items():
        fan_in = _fan_in(name, shape)
        if fan_in == 0:
            # biases share the fan-in of the weight created just before them
            weight_shape = shapes[name.replace(".bias", ".weight")]
            fan_in = _fan_in(name.replace(".bias", ".weight"), weight_shape)
        bound = 1.0 / np.sqrt(fan_in)
        values = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(values, requires_grad=True, dtype=get_default_dtype())
    return params


def count_parameters(config: ModelConfig) -> ParameterTable:
    shapes = parameter_shapes(config)
    sizes = {name: int(np.prod(shape)) for name, shape in shapes.items()}
    return ParameterTable(
        conv=sum(v for k, v in sizes.items() if k.startswith("conv")),
        transform=sizes["transform.weight"],
        pooling=sizes.get("pool.weight", 0),
        decoder=sum(v for k, v in sizes.items() if k.startswith("decoder")),
    )


class GraphCapsuleNetwork:
    """Parameters, cached adjacency and the forward pipeline for one config."""

    def __init__(
        self, config: ModelConfig, params: Optional[Dict[str, Tensor]] = None
    ):
        self.config = config
        self.adjacency: Adjacency = build_adjacency(
            config.grid_side, config.sigma, config.normalize_adjacency
        )
        self.params: "OrderedDict[str, Tensor]" = init_parameters(config)
        if params is not None:
            self.load_parameters(params)
        self.decoder = Decoder(self) if config.has_decoder else None

    # ---- parameters ----------------------------------------------------------
    def parameters(self) -> List[Tuple[str, Tensor]]:
        return list(self.params.items())

    def load_parameters(self, values: Dict[str, object]) -> None:
        """Assign values by name; missing, extra or misshapen entries are errors."""
        expected = set(self.params)
        given = set(values)
        if expected != given:
            missing = sorted(expected - given)
            extra = sorted(given - expected)
            raise CheckpointShapeError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for name, tensor in self.params.items():
            value = values[name]
            array = value.data if isinstance(value, Tensor) else np.asarray(value)
            if array.shape != tensor.shape:
                raise CheckpointShapeError(
                    f"parameter '{name}' has shape {array.shape}, config expects {tensor.shape}"
                )
            tensor.assign(array)

    def zero_grad(self) -> None:
        for _, tensor in self.parameters():
            tensor.zero_grad()

    def conv_params(self) -> List[Tuple[Tensor, Tensor, int]]:
        return [
            (self.params[f"conv{i}.weight"], self.params[f"conv{i}.bias"], stride)
            for i, (_, _, stride) in enumerate(self.config.conv_channels)
        ]

    # ---- forward -------------------------------------------------------------
    def forward(self, images: Tensor) -> ForwardOutput:
        """
        Class capsules for a batch of (B, C, H, W) images.

        Graph-pool models also return the per-head attention (B, L, K^2, M).
        """
        config = self.config
        batch = images.ndim == 4
        x = images if batch else images.reshape((1,) + images.shape)
        primary = extract_primary_capsules(
            x, self.conv_params(), config.num_heads, config.grid_side
        )
        weights = self.params["transform.weight"]
        attention = None
        if config.aggregation == AggregationMode.GRAPH_POOL:
            nodes = transform_capsules(primary, weights)
            attention = head_attention(nodes, self.adjacency, self.params["pool.weight"])
            capsules = aggregate_and_squash(head_pool(attention, nodes))
        else:
            votes = capsule_votes(primary, weights, config.num_classes)
            if config.aggregation == AggregationMode.DYNAMIC_ROUTING:
                capsules = dynamic_routing(votes, config.routing_iterations)
            else:
                capsules = average_baseline(votes)
        return ForwardOutput(capsules=capsules, attention=attention, primary=primary)

    def __call__(self, images: Tensor) -> ForwardOutput:
        return self.forward(images)

    def predict(self, images):
        """Argmax of capsule lengths; ties go to the lowest class index.

        Returns an int for a single CHW image, an array for a batch.
        """
        tensor = images if isinstance(images, Tensor) else Tensor(images)
        with no_grad():
            lengths = capsule_lengths(self.forward(tensor).capsules).data
        labels = np.argmax(lengths, axis=-1)
        return int(labels[0]) if tensor.ndim == 3 else labels

    def reconstruct(self, capsules: Tensor, targets) -> Tensor:
        if self.decoder is None:
            raise DecoderMissingError()
        return self.decoder(capsules, targets)
