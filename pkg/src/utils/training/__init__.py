from src.utils.training.optimizer import Adam
from src.utils.training.hooks import (
    CompositeHooks,
    JSONLTraceHooks,
    PrintingTrainerHooks,
    TrainerHooks,
)
from src.utils.training.trainer import (
    Trainer,
    correct_indices,
    evaluate,
    predict_all,
    total_loss,
    train,
)
from src.utils.training.sweep import SWEEP_DELTAS, SweepResult, perturb_capsule_sweep
