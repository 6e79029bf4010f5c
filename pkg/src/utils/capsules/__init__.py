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
    margin_loss,
    squash,
    transform_capsules,
)
from src.utils.capsules.decoder import Decoder, reconstruction_loss
from src.utils.capsules.model import (
    GraphCapsuleNetwork,
    count_parameters,
    init_parameters,
    parameter_shapes,
)
