from src.utils.attacks.fgsm import DEFAULT_EPSILONS, draw_targets, fgsm, fgsm_batch, success_rate
