from src.utils.interpret.explanations import (
    attention_explanation,
    class_score_gradients,
    class_scores,
    explain,
    integrated_gradients,
    mean_attention,
    random_explanation,
    upsample_bilinear,
    vanilla_gradient,
)
from src.utils.interpret.aopc import aopc, perturbation_sequence, relevance_ranking
