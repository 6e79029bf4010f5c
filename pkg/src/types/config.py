from __future__ import annotations

from enum import Enum
from typing import Any, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.types.errors import ConfigurationError
from src.utils.tensor.conv import conv_output_extent


class AggregationMode(str, Enum):
    GRAPH_POOL = "graph-pool"
    DYNAMIC_ROUTING = "dynamic-routing"
    AVERAGE = "average"


class AttackMode(str, Enum):
    UNTARGETED = "untargeted"
    TARGETED = "targeted"


class ExplanationMethod(str, Enum):
    ATTENTION = "att"
    GRADIENT = "grad"
    INTEGRATED_GRADIENTS = "ig"
    RANDOM = "random"


def split_items(value: Any) -> Any:
    """Accept ``"a,b,c"`` from key-value text as a list; pass lists through."""
    if isinstance(value, str):
        stripped = value.strip()
        return [item.strip() for item in stripped.split(",") if item.strip()] if stripped else []
    return value


def blank_to_none(value: Any) -> Any:
    if isinstance(value, str) and not value.strip():
        return None
    return value


ConvLayer = Tuple[int, int, int]


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    num_heads: int = Field(32, ge=1, description="Number of heads L.")
    grid_side: int = Field(12, ge=1, description="Primary capsule grid side K.")
    capsule_dim_in: int = Field(8, ge=1, description="Primary capsule dimension D_in.")
    capsule_dim_out: int = Field(16, ge=1, description="Class capsule dimension D_out.")
    num_classes: int = Field(10, ge=1, description="Number of classes M.")
    sigma: float = Field(1.0, gt=0.0, description="Gaussian adjacency width, grid units.")
    conv_channels: List[ConvLayer] = Field(
        default_factory=lambda: [(256, 3, 1), (256, 3, 2)],
        description="(out_channels, kernel_size, stride) per conv layer.",
    )
    aggregation: AggregationMode = AggregationMode.GRAPH_POOL
    routing_iterations: int = Field(3, ge=1)
    image_side: int = Field(28, ge=1)
    image_channels: int = Field(1, ge=1)
    decoder_hidden: List[int] = Field(default_factory=lambda: [512, 1024])
    normalize_adjacency: bool = False
    init_seed: int = 0

    @field_validator("conv_channels", mode="before")
    @classmethod
    def parse_conv_channels(cls, value: Any) -> Any:
        items = split_items(value)
        if isinstance(items, list):
            return [tuple(int(p) for p in item.split(":")) if isinstance(item, str) else item for item in items]
        return items

    @field_validator("decoder_hidden", mode="before")
    @classmethod
    def parse_decoder_hidden(cls, value: Any) -> Any:
        return split_items(value)

    @field_validator("conv_channels")
    @classmethod
    def validate_conv_channels(cls, value: List[ConvLayer]) -> List[ConvLayer]:
        if not value:
            raise ValueError("conv_channels needs at least one layer")
        for out_channels, kernel, stride in value:
            if out_channels < 1 or kernel < 1 or stride < 1:
                raise ValueError(f"conv layer ({out_channels}, {kernel}, {stride}) must be positive")
        return value

    @field_validator("decoder_hidden")
    @classmethod
    def validate_decoder_hidden(cls, value: List[int]) -> List[int]:
        if any(width < 1 for width in value):
            raise ValueError("decoder widths must be positive")
        return value

    @model_validator(mode="after")
    def validate_stack_shapes(self) -> "ModelConfig":
        expected_channels = self.num_heads * self.capsule_dim_in
        if self.conv_channels[-1][0] != expected_channels:
            raise ValueError(
                f"final conv layer must output L*D_in = {expected_channels} channels, "
                f"got {self.conv_channels[-1][0]}"
            )
        side = self.conv_grid_side()
        if side != self.grid_side:
            raise ValueError(
                f"conv stack maps a {self.image_side}px image to K={side}, "
                f"expected K={self.grid_side}"
            )
        return self

    def conv_grid_side(self) -> int:
        side = self.image_side
        for _, kernel, stride in self.conv_channels:
            if side < kernel:
                return 0
            side = conv_output_extent(side, kernel, stride)
        return side

    @property
    def num_nodes(self) -> int:
        """K^2 nodes per head graph."""
        return self.grid_side * self.grid_side

    @property
    def num_primary(self) -> int:
        """N = L * K^2 primary capsules."""
        return self.num_heads * self.num_nodes

    @property
    def has_decoder(self) -> bool:
        return bool(self.decoder_hidden)

    def with_heads(self, num_heads: int) -> "ModelConfig":
        """Same feature maps, regrouped into ``num_heads`` heads."""
        channels = self.num_heads * self.capsule_dim_in
        if num_heads < 1 or channels % num_heads:
            raise ConfigurationError(
                f"{channels} feature maps cannot be split into {num_heads} heads"
            )
        return self.model_copy(
            update={"num_heads": num_heads, "capsule_dim_in": channels // num_heads}
        )


class AugmentationSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    max_shift: int = Field(2, ge=0, description="Random translation range in pixels.")


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(5, ge=0)
    batch_size: int = Field(128, ge=1)
    eval_batch_size: int = Field(256, ge=1)
    lr: float = Field(1e-3, ge=0.0)
    lr_decay: float = Field(0.96, gt=0.0, le=1.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    reconstruction_weight: float = Field(0.0005, ge=0.0)
    max_shift: int = Field(2, ge=0)

    @property
    def augmentation(self) -> AugmentationSpec:
        return AugmentationSpec(max_shift=self.max_shift)


class ExplainOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    methods: List[ExplanationMethod] = Field(
        default_factory=lambda: [
            ExplanationMethod.ATTENTION,
            ExplanationMethod.GRADIENT,
            ExplanationMethod.INTEGRATED_GRADIENTS,
        ]
    )
    images: str = Field("0..9", min_length=1, description="Index list such as 0..9 or 1,4,7.")
    ig_steps: int = Field(50, ge=1)

    @field_validator("methods", mode="before")
    @classmethod
    def parse_methods(cls, value: Any) -> Any:
        return split_items(value)


class AopcOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    methods: List[ExplanationMethod] = Field(default_factory=lambda: list(ExplanationMethod))
    images: int = Field(200, ge=1, description="Correctly classified test images to score.")
    steps: int = Field(20, ge=1)
    patch: int = Field(5, ge=1)
    ig_steps: int = Field(50, ge=1)

    @field_validator("methods", mode="before")
    @classmethod
    def parse_methods(cls, value: Any) -> Any:
        return split_items(value)


class AttackOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    modes: List[AttackMode] = Field(default_factory=lambda: [AttackMode.UNTARGETED])
    epsilons: List[float] = Field(default_factory=lambda: [0.01, 0.02, 0.03, 0.04, 0.05])
    images: Optional[int] = Field(None, ge=1)

    @field_validator("modes", "epsilons", mode="before")
    @classmethod
    def parse_lists(cls, value: Any) -> Any:
        return split_items(value)

    @field_validator("images", mode="before")
    @classmethod
    def parse_images(cls, value: Any) -> Any:
        return blank_to_none(value)

    @field_validator("epsilons")
    @classmethod
    def validate_epsilons(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("epsilon grid must not be empty")
        if any(e <= 0 for e in value):
            raise ValueError("epsilons must be positive")
        return value


class PerturbOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    image: int = Field(0, ge=0)
    dims: str = Field("0..15", min_length=1)


class AblateOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    heads: List[int] = Field(default_factory=lambda: [1, 2, 4, 8, 16, 32])
    aggregations: List[AggregationMode] = Field(
        default_factory=lambda: [AggregationMode.GRAPH_POOL]
    )

    @field_validator("heads", "aggregations", mode="before")
    @classmethod
    def parse_lists(cls, value: Any) -> Any:
        return split_items(value)


class RunConfig(BaseModel):
    """Everything needed to reproduce one CLI invocation."""

    model_config = ConfigDict(extra="forbid")

    dataset: str = Field("mnist", min_length=1)
    data_dir: str = Field("data", min_length=1)
    output_dir: str = Field("runs", min_length=1)
    checkpoint: Optional[str] = None
    seed: int = 0
    train_limit: Optional[int] = Field(None, ge=1)
    test_limit: Optional[int] = Field(None, ge=1)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    explain: ExplainOptions = Field(default_factory=ExplainOptions)
    aopc: AopcOptions = Field(default_factory=AopcOptions)
    attack: AttackOptions = Field(default_factory=AttackOptions)
    perturb: PerturbOptions = Field(default_factory=PerturbOptions)
    ablate: AblateOptions = Field(default_factory=AblateOptions)

    @field_validator("checkpoint", "train_limit", "test_limit", mode="before")
    @classmethod
    def parse_optional(cls, value: Any) -> Any:
        return blank_to_none(value)

    @field_validator("dataset")
    @classmethod
    def validate_dataset(cls, value: str) -> str:
        if value not in ("mnist", "fashion-mnist"):
            raise ValueError("dataset must be one of: mnist, fashion-mnist")
        return value
