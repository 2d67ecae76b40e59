"""PPO training: networks, advantage estimation, updates and the training loop."""

from .network import MLP, Adam
from .ppo import (NetworkParams, PolicyOutput, RolloutBuffer, TrainConfig, UpdateStats, gaussian_log_prob,
                  init_params, normalize_advantages, policy_forward, policy_loss_and_grad, ppo_update,
                  returns_and_advantages, value_forward, value_loss_and_grad)
from .train import CURVE_COLUMNS, TrainResult, Trainer, curve_to_csv, load_checkpoint, read_curve, train

__all__ = [
    "MLP", "Adam", "NetworkParams", "PolicyOutput", "RolloutBuffer", "TrainConfig", "UpdateStats",
    "gaussian_log_prob", "init_params", "normalize_advantages", "policy_forward", "policy_loss_and_grad",
    "ppo_update", "returns_and_advantages", "value_forward", "value_loss_and_grad", "CURVE_COLUMNS",
    "TrainResult", "Trainer", "curve_to_csv", "load_checkpoint", "read_curve", "train",
]
