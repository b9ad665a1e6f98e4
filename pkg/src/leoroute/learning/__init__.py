"""State encoding, DDQN and SARSA learners, and the engine-facing learned policies."""
from .ddqn import DDQNLearner, EpsilonSchedule, ReplayMemory, act_epsilon_greedy, ddqn_train_step
from .nets import MLP, load_mlp, save_mlp
from .policies import DDQNTrainer, MADRLPolicy, OnlineConfig, QPolicy, SARSATrainer
from .sarsa import LinearQ, MLPQ, TabularQ, sarsa_step
from .state import STATE_DIM, N_ACTIONS, RewardWeights, encode_state, reward
from .training import TrainResult, deploy_and_online_update, train_global, train_sarsa

__all__ = [
    "DDQNLearner", "EpsilonSchedule", "ReplayMemory", "act_epsilon_greedy", "ddqn_train_step",
    "MLP", "load_mlp", "save_mlp",
    "DDQNTrainer", "MADRLPolicy", "OnlineConfig", "QPolicy", "SARSATrainer",
    "LinearQ", "MLPQ", "TabularQ", "sarsa_step",
    "STATE_DIM", "N_ACTIONS", "RewardWeights", "encode_state", "reward",
    "TrainResult", "deploy_and_online_update", "train_global", "train_sarsa",
]
