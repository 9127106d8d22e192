from .policy import MaiaConfig, PolicyNet, PolicyPredictor, TrainResult, predict_batch, predict_move, train_policy
from .policy import move_match_accuracy
from .blunder import (
    BlunderCNN, BlunderCnnConfig, BlunderFC, BlunderFcConfig, BlunderResult, accuracy_of, encode_blunder_dataset,
    make_blunder_net, train_blunder,
)
from .baselines import Forest, ForestConfig, LinearModel, LogitConfig, select_forest, train_forest, train_logit

__all__ = [
    "MaiaConfig", "PolicyNet", "PolicyPredictor", "TrainResult", "predict_batch", "predict_move", "train_policy",
    "move_match_accuracy",
    "BlunderCNN", "BlunderCnnConfig", "BlunderFC", "BlunderFcConfig", "BlunderResult", "encode_blunder_dataset",
    "accuracy_of", "make_blunder_net", "train_blunder", "select_forest", "Forest", "ForestConfig", "LinearModel", "LogitConfig", "train_forest", "train_logit",
]
